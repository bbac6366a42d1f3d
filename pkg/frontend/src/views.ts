/** DOM rendering for the four console views. No framework, just elements. */

import type { ApiClient, AuditRecord, Diagnostic, ReviewItem, RuleTemplate } from "./api.js";
import { ApiError } from "./api.js";
import type { ConsoleStore, SessionSummary } from "./state.js";
import { appendRule, renderTemplate } from "./templates.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Array<Node | string>
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function verdictBadge(verdict: string, via: string): HTMLElement {
  return el("span", { class: `badge ${verdict}` }, `${verdict} · ${via}`);
}

function timeShort(iso: string): string {
  const t = iso.indexOf("T");
  return t >= 0 ? iso.slice(t + 1, t + 13) : iso;
}

// ---------------------------------------------------------------------------
// Sessions dashboard
// ---------------------------------------------------------------------------

export function renderSessions(root: HTMLElement, store: ConsoleStore): void {
  root.replaceChildren();
  const sessions = store.sessionList();
  const table = el("table", { class: "data" });
  table.append(el("thead", {}, el("tr", {},
    el("th", {}, "session"), el("th", {}, "agent"), el("th", {}, "role"),
    el("th", {}, "trust"), el("th", {}, "checks"), el("th", {}, "denies"),
    el("th", {}, "last tool"), el("th", {}, "last seen"))));
  const body = el("tbody");
  for (const session of sessions) {
    body.append(renderSessionRow(session));
  }
  table.append(body);
  root.append(
    el("div", { class: "panel-title" }, `connected agents (${sessions.length})`),
    sessions.length ? table : el("p", { class: "empty" }, "no sessions yet"),
    el("div", { class: "panel-title" }, "recent activity"),
    renderActivity(store),
  );
}

function renderSessionRow(session: SessionSummary): HTMLElement {
  return el("tr", {},
    el("td", { class: "mono" }, session.sessionId.slice(0, 18)),
    el("td", {}, session.agentId),
    el("td", {}, session.role),
    el("td", {}, String(session.trustLevel)),
    el("td", {}, String(session.checkCount)),
    el("td", { class: session.denyCount ? "denied" : "" }, String(session.denyCount)),
    el("td", { class: "mono" }, session.lastTool ?? "—"),
    el("td", { class: "mono" }, timeShort(session.lastSeen)));
}

function renderActivity(store: ConsoleStore): HTMLElement {
  if (!store.activity.length) return el("p", { class: "empty" }, "no checks yet");
  const list = el("div", { class: "activity" });
  for (const item of [...store.activity].slice(-60).reverse()) {
    list.append(el("div", { class: "activity-row" },
      el("span", { class: "mono dim" }, `#${item.record_id}`),
      el("span", { class: "mono" }, `${item.tool ?? "?"} (${item.phase})`),
      verdictBadge(item.final.verdict, item.final.via),
      el("span", { class: "dim reason" }, item.final.reason),
      el("span", { class: "mono dim" }, timeShort(item.timestamp))));
  }
  return list;
}

// ---------------------------------------------------------------------------
// Review inbox
// ---------------------------------------------------------------------------

export function renderReviews(
  root: HTMLElement,
  store: ConsoleStore,
  api: ApiClient,
  notice: (text: string, isError?: boolean) => void,
): void {
  root.replaceChildren();
  const pending = store.pendingReviews();
  root.append(el("div", { class: "panel-title" }, `pending reviews (${pending.length})`));
  if (!pending.length) {
    root.append(el("p", { class: "empty" }, "nothing waiting on you"));
    return;
  }
  for (const item of pending) {
    root.append(renderReviewCard(item, api, notice));
  }
}

function renderReviewCard(
  item: ReviewItem,
  api: ApiClient,
  notice: (text: string, isError?: boolean) => void,
): HTMLElement {
  const reason = el("input", {
    class: "reason-input",
    placeholder: "reason (required)",
    "aria-label": "resolution reason",
  });
  const resolve = (verdict: "allow" | "deny") => {
    if (!reason.value.trim()) {
      notice("a reason is required to resolve a review", true);
      reason.focus();
      return;
    }
    buttons.querySelectorAll("button").forEach((b) => (b.disabled = true));
    api.resolveReview(item.review_id, verdict, "console-operator", reason.value.trim())
      .then(() => notice(`review ${item.review_id} resolved: ${verdict}`))
      .catch((error: unknown) => {
        if (error instanceof ApiError && error.status === 409) {
          notice(`review ${item.review_id} was already resolved elsewhere`, true);
        } else {
          notice(String(error), true);
        }
      });
  };
  const buttons = el("div", { class: "review-actions" });
  const allowButton = el("button", { class: "allow" }, "allow");
  allowButton.onclick = () => resolve("allow");
  const denyButton = el("button", { class: "deny" }, "deny");
  denyButton.onclick = () => resolve("deny");
  buttons.append(reason, allowButton, denyButton);

  const context = item.context ?? {};
  const eventJson = JSON.stringify(context.event ?? {}, null, 2);
  const rationales = Object.entries(context.llm_rationale ?? {});
  return el("div", { class: "review-card" },
    el("div", { class: "review-head" },
      el("span", { class: "mono" }, item.review_id),
      el("span", {}, `tool ${context.tool ?? "?"} · session ${item.session_id}`),
      el("span", { class: "dim" },
        `rules: ${(context.rule_ids ?? []).join(", ") || "—"} · on timeout: ${item.on_timeout}`)),
    rationales.length
      ? el("div", { class: "dim" }, `inspector: ${rationales.map(([r, n]) => `${r}: ${n}`).join("; ")}`)
      : "",
    el("pre", { class: "event-json" }, eventJson),
    buttons);
}

// ---------------------------------------------------------------------------
// Policy editor
// ---------------------------------------------------------------------------

export interface PolicyEditorState {
  templates: RuleTemplate[];
  currentVersion: number | null;
}

export function renderPolicyEditor(
  root: HTMLElement,
  api: ApiClient,
  state: PolicyEditorState,
  notice: (text: string, isError?: boolean) => void,
): void {
  root.replaceChildren();
  const editor = el("textarea", { class: "policy-text", rows: "18", spellcheck: "false" });
  const diagnosticsBox = el("div", { class: "diagnostics" });
  const versionLabel = el("span", { class: "dim" }, "");

  const loadActive = () => {
    api.getPolicies().then(({ version, text }) => {
      editor.value = text;
      state.currentVersion = version;
      versionLabel.textContent = `active version ${version}`;
    }).catch((error: unknown) => notice(String(error), true));
  };

  const showDiagnostics = (diagnostics: Diagnostic[]) => {
    diagnosticsBox.replaceChildren();
    for (const diag of diagnostics) {
      diagnosticsBox.append(el("div", { class: `diag ${diag.severity}` },
        `${diag.line}:${diag.col} ${diag.severity}: ${diag.message} [${diag.code}]`));
    }
    if (diagnostics.some((d) => d.severity === "error")) {
      const first = diagnostics.find((d) => d.severity === "error")!;
      focusEditorAt(editor, first.line, first.col);
    }
  };

  const submit = el("button", { class: "primary" }, "activate policy");
  submit.onclick = () => {
    submit.disabled = true;
    api.putPolicies(editor.value)
      .then(({ version, diagnostics }) => {
        state.currentVersion = version;
        versionLabel.textContent = `active version ${version}`;
        showDiagnostics(diagnostics);
        notice(`policy activated as version ${version}`);
      })
      .catch((error: unknown) => {
        if (error instanceof ApiError && error.diagnostics.length) {
          showDiagnostics(error.diagnostics);
          notice("policy rejected; active version unchanged", true);
        } else {
          notice(String(error), true);
        }
      })
      .finally(() => {
        submit.disabled = false;
      });
  };

  const reload = el("button", {}, "reload active");
  reload.onclick = loadActive;

  root.append(
    el("div", { class: "panel-title" }, "policy editor ", versionLabel),
    renderTemplateForms(state.templates, editor, notice),
    editor,
    el("div", { class: "editor-actions" }, submit, reload),
    diagnosticsBox,
  );
  loadActive();
}

function focusEditorAt(editor: HTMLTextAreaElement, line: number, col: number): void {
  const lines = editor.value.split("\n");
  let offset = 0;
  for (let i = 0; i < Math.min(line - 1, lines.length); i += 1) {
    offset += (lines[i] ?? "").length + 1;
  }
  offset += Math.max(0, col - 1);
  editor.focus();
  editor.setSelectionRange(offset, offset);
}

function renderTemplateForms(
  templates: RuleTemplate[],
  editor: HTMLTextAreaElement,
  notice: (text: string, isError?: boolean) => void,
): HTMLElement {
  const picker = el("select", { class: "template-picker" });
  picker.append(el("option", { value: "" }, "insert from template…"));
  for (const template of templates) {
    picker.append(el("option", { value: template.id }, template.title));
  }
  const formBox = el("div", { class: "template-form" });
  picker.onchange = () => {
    formBox.replaceChildren();
    const template = templates.find((t) => t.id === picker.value);
    if (!template) return;
    const inputs = new Map<string, HTMLInputElement | HTMLSelectElement>();
    formBox.append(el("p", { class: "dim" }, template.description));
    for (const param of template.params) {
      let input: HTMLInputElement | HTMLSelectElement;
      if (param.kind === "choice" && param.choices) {
        input = el("select");
        for (const choice of param.choices) {
          input.append(el("option", { value: choice }, choice));
        }
        if (param.default) input.value = param.default;
      } else {
        input = el("input", { value: param.default ?? "" });
      }
      inputs.set(param.name, input);
      formBox.append(el("label", { class: "param" }, `${param.label} `, input));
    }
    const preview = el("pre", { class: "preview" });
    const refresh = () => {
      try {
        const values = Object.fromEntries([...inputs].map(([name, input]) => [name, input.value]));
        preview.textContent = renderTemplate(template, values);
        insert.disabled = false;
      } catch (error) {
        preview.textContent = String(error);
        insert.disabled = true;
      }
    };
    for (const input of inputs.values()) input.addEventListener("input", refresh);
    const insert = el("button", {}, "append to editor");
    insert.onclick = () => {
      // the preview IS the submitted text: append it verbatim
      editor.value = appendRule(editor.value, preview.textContent ?? "");
      notice(`rule template '${template.title}' appended; review and activate`);
    };
    formBox.append(preview, insert);
    refresh();
  };
  return el("div", {}, picker, formBox);
}

// ---------------------------------------------------------------------------
// Audit explorer
// ---------------------------------------------------------------------------

export function renderAudit(
  root: HTMLElement,
  api: ApiClient,
  notice: (text: string, isError?: boolean) => void,
): void {
  root.replaceChildren();
  const sessionFilter = el("input", { placeholder: "session id" });
  const decisionFilter = el("select", {},
    el("option", { value: "" }, "any decision"),
    el("option", { value: "allow" }, "allow"),
    el("option", { value: "deny" }, "deny"));
  const ruleFilter = el("input", { placeholder: "rule id" });
  const resultBox = el("div");

  const load = () => {
    api.queryAudit({
      session_id: sessionFilter.value.trim() || undefined,
      decision: (decisionFilter.value || undefined) as "allow" | "deny" | undefined,
      rule_id: ruleFilter.value.trim() || undefined,
      limit: 200,
    }).then(({ records }) => {
      resultBox.replaceChildren(renderAuditTable(records));
    }).catch((error: unknown) => notice(String(error), true));
  };
  const search = el("button", { class: "primary" }, "query");
  search.onclick = load;

  root.append(
    el("div", { class: "panel-title" }, "audit explorer"),
    el("div", { class: "filters" }, sessionFilter, decisionFilter, ruleFilter, search),
    resultBox);
  load();
}

function renderAuditTable(records: AuditRecord[]): HTMLElement {
  if (!records.length) return el("p", { class: "empty" }, "no records match");
  const table = el("table", { class: "data" });
  table.append(el("thead", {}, el("tr", {},
    el("th", {}, "#"), el("th", {}, "time"), el("th", {}, "kind"),
    el("th", {}, "tool/phase"), el("th", {}, "matched rules"),
    el("th", {}, "decision"), el("th", {}, "version"), el("th", {}, "reviewer"))));
  const body = el("tbody");
  for (const record of records) {
    const matched = (record.matched ?? [])
      .map((m) => `${m.rule_id}${m.errored ? " (errored)" : ""}`)
      .join(", ");
    body.append(el("tr", {},
      el("td", { class: "mono" }, String(record.record_id)),
      el("td", { class: "mono" }, timeShort(record.timestamp)),
      el("td", {}, record.kind),
      el("td", { class: "mono" },
        record.kind === "check" ? `${record.tool ?? "?"} (${record.phase})` : "—"),
      el("td", { class: "mono" }, matched || "—"),
      record.final
        ? el("td", {}, verdictBadge(record.final.verdict, record.final.via))
        : el("td", {}, "—"),
      el("td", { class: "mono" }, String(record.policy_version)),
      el("td", {}, record.reviewer ? `${record.reviewer.name}: ${record.reviewer.reason}` : "—")));
  }
  table.append(body);
  return table;
}
