/**
 * Pure render functions: session state in, HTML strings out.
 *
 * Numbers render with nine decimal places, matching the service's CLI
 * formatting exactly, so what the user sees is the API value verbatim.
 */

import { Quote, RiskReport } from "./api.js";
import { PlannerNotification, PlannerSession } from "./store.js";

export function formatPoints(value: number): string {
  return value.toFixed(9);
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function quoteCard(quote: Quote, balance: number): string {
  const over = quote.predicted_points > balance;
  const badge = over || quote.over_budget
    ? '<span class="badge over-budget">over budget</span>'
    : "";
  const hours = (quote.window[1] - quote.window[0]) / 3600;
  return [
    `<article class="quote-card" data-token="${esc(quote.token)}">`,
    `<h3>${esc(quote.venue)}</h3>`,
    `<p class="points">${formatPoints(quote.predicted_points)} points</p>`,
    `<p class="rate">${formatPoints(quote.cost_rate)} points/hour ` +
      `for ${hours.toFixed(1)}h</p>`,
    badge,
    `<button data-commit="${esc(quote.token)}">commit</button>`,
    `</article>`,
  ].filter(Boolean).join("\n");
}

export function ledgerBar(allowance: number, balance: number): string {
  const spent = allowance - balance;
  const pct = allowance > 0 ? Math.max(0, Math.min(100, (balance / allowance) * 100)) : 0;
  return [
    `<div class="ledger-bar" role="meter" aria-valuenow="${formatPoints(balance)}">`,
    `<div class="fill" style="width: ${pct.toFixed(1)}%"></div>`,
    `<span class="label">${formatPoints(balance)} of ` +
      `${formatPoints(allowance)} points left ` +
      `(spent ${formatPoints(spent)})</span>`,
    `</div>`,
  ].join("\n");
}

export function riskGauge(risk: RiskReport | null): string {
  if (risk === null) {
    return `<div class="risk-gauge empty">no report yet</div>`;
  }
  const flags = risk.thresholds
    .map((t) => `<span class="badge threshold">${esc(t)}</span>`)
    .join(" ");
  return [
    `<div class="risk-gauge" data-computed-at="${risk.computed_at}">`,
    `<span class="p">${formatPoints(risk.p_infected)}</span>`,
    flags,
    `</div>`,
  ].filter(Boolean).join("\n");
}

export function notificationList(items: PlannerNotification[]): string {
  if (!items.length) {
    return `<ul class="notifications empty"></ul>`;
  }
  const rows = items
    .map((n) => {
      const cls = n.kind === "threshold_retracted" ? "retraction" : n.kind;
      const label = n.name ? `${n.kind}: ${n.name}` : n.kind;
      return `<li class="${esc(cls)}">${esc(label)}</li>`;
    })
    .join("\n");
  return `<ul class="notifications">\n${rows}\n</ul>`;
}

export function dailyTally(session: PlannerSession): string {
  const rows = session.committed
    .map((e) => `<tr><td>${esc(e.venue)}</td>` +
      `<td>${formatPoints(e.charged_points)}</td></tr>`)
    .join("\n");
  return `<table class="tally"><tbody>\n${rows}\n</tbody></table>`;
}

export function renderSession(session: PlannerSession): string {
  const quotes = session.pendingQuotes
    .map((q) => quoteCard(q, session.balance))
    .join("\n");
  const error = session.lastError
    ? `<p class="error">${esc(session.lastError)}</p>`
    : "";
  const requote = session.needsRequote
    ? `<p class="requote">quote expired, please plan again</p>`
    : "";
  return [
    `<section class="planner">`,
    ledgerBar(session.allowance, session.balance),
    riskGauge(session.risk),
    `<div class="quotes">`, quotes, `</div>`,
    dailyTally(session),
    notificationList(session.notifications),
    error,
    requote,
    `</section>`,
  ].filter(Boolean).join("\n");
}
