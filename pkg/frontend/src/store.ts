/**
 * Planner session state: one store serializes every update, whether it came
 * from a user action or from the risk poller.
 *
 * Invariants kept here: the remaining allowance always mirrors the service
 * ledger as of the last sync, pending quotes are shown only while
 * unexpired, and notifications accumulate both threshold crossings and
 * retractions.
 */

import {
  ApiError,
  CommitRequest,
  LedgerApi,
  LedgerEntry,
  PlanRequest,
  Quote,
  RiskReport,
} from "./api.js";

export interface PlannerNotification {
  time: number;
  kind: string;
  name?: string;
  p_infected?: number;
}

export interface PlannerSession {
  account: string;
  allowance: number;
  balance: number;
  pendingQuotes: Quote[];
  committed: LedgerEntry[];
  risk: RiskReport | null;
  notifications: PlannerNotification[];
  lastError: string | null;
  needsRequote: string | null; // token that expired mid-flow
}

export type Listener = (state: PlannerSession) => void;

export interface StoreOptions {
  pollIntervalMs?: number;
  now?: () => number; // epoch seconds, injectable for tests
}

const freshSession = (account: string): PlannerSession => ({
  account,
  allowance: 0,
  balance: 0,
  pendingQuotes: [],
  committed: [],
  risk: null,
  notifications: [],
  lastError: null,
  needsRequote: null,
});

export class PlannerStore {
  private session: PlannerSession;
  private listeners = new Set<Listener>();
  private timer: ReturnType<typeof setInterval> | null = null;
  private chain: Promise<void> = Promise.resolve();
  readonly pollIntervalMs: number;
  private readonly now: () => number;

  constructor(
    private readonly api: LedgerApi,
    account: string,
    opts: StoreOptions = {},
  ) {
    this.session = freshSession(account);
    this.pollIntervalMs = opts.pollIntervalMs ?? 10_000;
    this.now = opts.now ?? (() => Math.floor(Date.now() / 1000));
  }

  get state(): PlannerSession {
    return this.session;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    listener(this.session);
    return () => this.listeners.delete(listener);
  }

  /** All state transitions funnel through here, one at a time. */
  private apply(patch: Partial<PlannerSession>): void {
    this.session = { ...this.session, ...patch };
    this.session.pendingQuotes = this.session.pendingQuotes.filter(
      (q) => q.expires > this.now(),
    );
    for (const l of this.listeners) l(this.session);
  }

  private enqueue<T>(work: () => Promise<T>): Promise<T> {
    const run = this.chain.then(work);
    this.chain = run.then(
      () => undefined,
      () => undefined,
    );
    return run;
  }

  async syncLedger(time?: number): Promise<void> {
    return this.enqueue(async () => {
      const view = await this.api.ledger(this.session.account, time ?? this.now());
      this.apply({
        allowance: view.allowance,
        balance: view.balance,
        committed: view.entries,
        notifications: view.notifications as unknown as PlannerNotification[],
      });
    });
  }

  async requestQuote(req: Omit<PlanRequest, "subject">): Promise<Quote> {
    return this.enqueue(async () => {
      const quote = await this.api.planVisit({
        subject: this.session.account,
        ...req,
      });
      this.apply({
        pendingQuotes: [...this.session.pendingQuotes, quote],
        lastError: null,
      });
      return quote;
    });
  }

  async commit(req: CommitRequest): Promise<LedgerEntry | null> {
    return this.enqueue(async () => {
      try {
        const result = await this.api.commitVisit(req);
        const view = await this.api.ledger(this.session.account,
                                           req.time ?? this.now());
        this.apply({
          pendingQuotes: this.session.pendingQuotes.filter(
            (q) => q.token !== req.token,
          ),
          committed: view.entries,
          allowance: view.allowance,
          balance: view.balance,
          needsRequote: null,
          lastError: null,
        });
        return result.entry;
      } catch (err) {
        if (err instanceof ApiError && err.status === 410) {
          // expired: drop the stale card and ask the user to quote again
          this.apply({
            pendingQuotes: this.session.pendingQuotes.filter(
              (q) => q.token !== req.token,
            ),
            needsRequote: req.token,
            lastError: "quote expired; request a new one",
          });
          return null;
        }
        this.apply({ lastError: err instanceof Error ? err.message : String(err) });
        throw err;
      }
    });
  }

  async reportHealth(kind: "symptom" | "test", name: string, value: number,
                     time?: number): Promise<void> {
    return this.enqueue(async () => {
      await this.api.reportHealth(this.session.account, kind, name, value,
                                  time ?? this.now());
    });
  }

  async pollRisk(time?: number): Promise<void> {
    return this.enqueue(async () => {
      const risk = await this.api.risk(this.session.account, time ?? this.now());
      const view = await this.api.ledger(this.session.account, time ?? this.now());
      this.apply({
        risk,
        notifications: view.notifications as unknown as PlannerNotification[],
        balance: view.balance,
        allowance: view.allowance,
      });
    });
  }

  startPolling(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => {
      void this.pollRisk().catch(() => undefined);
    }, this.pollIntervalMs);
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
