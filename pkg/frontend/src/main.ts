/** Console bootstrap: auth, live stream, tab routing. */

import { ApiClient } from "./api.js";
import type { RuleTemplate } from "./api.js";
import { ConsoleStore } from "./state.js";
import { renderAudit, renderPolicyEditor, renderReviews, renderSessions } from "./views.js";

const TOKEN_KEY = "agentguard.adminToken";

type Tab = "sessions" | "policies" | "reviews" | "audit";

function noticeBar(): (text: string, isError?: boolean) => void {
  const bar = document.getElementById("notice")!;
  let timer: number | undefined;
  return (text, isError = false) => {
    bar.textContent = text;
    bar.className = isError ? "notice error" : "notice";
    window.clearTimeout(timer);
    timer = window.setTimeout(() => {
      bar.textContent = "";
      bar.className = "notice";
    }, 6000);
  };
}

function main(): void {
  const notice = noticeBar();
  const statusDot = document.getElementById("status-dot")!;
  const versionLabel = document.getElementById("policy-version")!;
  const content = document.getElementById("content")!;

  let token = localStorage.getItem(TOKEN_KEY) ?? "";
  if (!token) {
    token = window.prompt("admin token") ?? "";
    localStorage.setItem(TOKEN_KEY, token);
  }
  const api = new ApiClient(window.location.origin, token);
  const store = new ConsoleStore();
  const editorState = { templates: [] as RuleTemplate[], currentVersion: null as number | null };

  let activeTab: Tab = "sessions";
  const renderTab = () => {
    switch (activeTab) {
      case "sessions":
        renderSessions(content, store);
        break;
      case "policies":
        renderPolicyEditor(content, api, editorState, notice);
        break;
      case "reviews":
        renderReviews(content, store, api, notice);
        break;
      case "audit":
        renderAudit(content, api, notice);
        break;
    }
  };

  store.onChange(() => {
    statusDot.className = store.connected ? "dot live" : "dot dead";
    versionLabel.textContent =
      store.policyVersion === null ? "" : `policy v${store.policyVersion}`;
    const badge = document.getElementById("review-count")!;
    const pending = store.pendingReviews().length;
    badge.textContent = pending ? String(pending) : "";
    // live tabs re-render on every event; editor and audit refresh on demand
    if (activeTab === "sessions" || activeTab === "reviews") renderTab();
  });

  for (const button of document.querySelectorAll<HTMLButtonElement>("[data-tab]")) {
    button.onclick = () => {
      activeTab = button.dataset.tab as Tab;
      for (const other of document.querySelectorAll("[data-tab]")) {
        other.classList.toggle("active", other === button);
      }
      renderTab();
    };
  }

  api.getTemplates()
    .then((templates) => {
      editorState.templates = templates;
    })
    .catch(() => notice("could not load rule templates", true));

  const connect = () => {
    store.connected = true;
    api.subscribe((event) => store.apply(event))
      .catch(() => undefined)
      .finally(() => {
        store.connected = false;
        statusDot.className = "dot dead";
        window.setTimeout(connect, 2000); // reconnect; state rebuilds from events
      });
  };
  connect();
  renderTab();
}

document.addEventListener("DOMContentLoaded", main);
