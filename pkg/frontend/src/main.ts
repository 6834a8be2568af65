/**
 * Browser bootstrap: wires the store to the page and starts the risk
 * poller.  The page is a single live region re-rendered on every store
 * update; commit buttons delegate through one click handler.
 */

import { LedgerApi } from "./api.js";
import { PlannerStore } from "./store.js";
import { renderSession } from "./views.js";

export function mount(root: HTMLElement, baseUrl: string, account: string): PlannerStore {
  const api = new LedgerApi(baseUrl);
  const store = new PlannerStore(api, account);

  store.subscribe((session) => {
    root.innerHTML = renderSession(session);
  });

  root.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    const token = target.getAttribute("data-commit");
    if (token) {
      void store.commit({ token });
    }
  });

  void store.syncLedger();
  void store.pollRisk();
  store.startPolling();
  return store;
}

declare global {
  interface Window {
    plannerStore?: PlannerStore;
  }
}

if (typeof document !== "undefined") {
  const root = document.getElementById("planner");
  if (root) {
    const base = root.dataset.api ?? "http://127.0.0.1:8000";
    const account = root.dataset.account ?? "alice";
    window.plannerStore = mount(root, base, account);
  }
}
