/** Spawn a real control server for integration tests; talk to it only over HTTP. */

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

export const ADMIN_TOKEN = "console-test-admin";

export const DEFAULT_POLICY = `
rule pay_review {
  phase: pre
  when: tool.name == "pay"
  effect: review(timeout: 120s, on_timeout: deny)
  reason: "payments need approval"
}

rule no_shell {
  phase: pre
  when: tool.name == "shell"
  effect: deny
  reason: "shell banned"
}
`;

export interface ServerHandle {
  baseUrl: string;
  dir: string;
  proc: ChildProcess;
  stop(): Promise<void>;
}

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

export async function startServer(policy: string = DEFAULT_POLICY): Promise<ServerHandle> {
  const dir = mkdtempSync(join(tmpdir(), "agc-"));
  const policyPath = join(dir, "policy.agp");
  writeFileSync(policyPath, policy, "utf-8");
  const port = await freePort();
  const configPath = join(dir, "server.toml");
  writeFileSync(
    configPath,
    [
      `policy_path = ${JSON.stringify(policyPath)}`,
      `audit_path = ${JSON.stringify(join(dir, "audit.ndjson"))}`,
      `port = ${port}`,
      `admin_token = ${JSON.stringify(ADMIN_TOKEN)}`,
      'llm_backend = "mock"',
      "review_sweep_interval = 0.05",
      "sse_heartbeat = 0.25",
      "",
    ].join("\n"),
    "utf-8",
  );
  const proc = spawn("python3", ["-m", "agentguard.cli", "serve", "--config", configPath], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  const stderr: string[] = [];
  proc.stderr?.on("data", (chunk: Buffer) => stderr.push(chunk.toString()));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 20_000;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`server exited early:\n${stderr.join("")}`);
    }
    try {
      const response = await fetch(`${baseUrl}/healthz`);
      if (response.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error(`server never became healthy:\n${stderr.join("")}`);
    }
    await sleep(50);
  }
  return {
    baseUrl,
    dir,
    proc,
    stop: () =>
      new Promise<void>((resolve) => {
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
        setTimeout(() => {
          if (proc.exitCode === null) proc.kill("SIGKILL");
        }, 5000).unref();
      }),
  };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function waitFor<T>(
  probe: () => Promise<T | undefined> | T | undefined,
  timeoutMs: number,
  what: string,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const value = await probe();
    if (value !== undefined) return value;
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`);
    await sleep(25);
  }
}
