/**
 * Typed client for the ledger service HTTP+JSON API.
 *
 * Every number the planner shows comes straight out of these responses;
 * the client never derives probabilities or points on its own.
 */

import { z } from "zod";

export const QuoteSchema = z.object({
  token: z.string(),
  subject: z.string(),
  venue: z.string(),
  window: z.tuple([z.number(), z.number()]),
  behaviour: z.string(),
  co_visitors: z.array(z.record(z.unknown())),
  predicted_points: z.number(),
  cost_rate: z.number(),
  expires: z.number(),
  over_budget: z.boolean(),
});
export type Quote = z.infer<typeof QuoteSchema>;

export const LedgerEntrySchema = z.object({
  seq: z.number(),
  time: z.number(),
  venue: z.string(),
  window: z.array(z.number()),
  token: z.string(),
  predicted_points: z.number(),
  charged_points: z.number(),
});
export type LedgerEntry = z.infer<typeof LedgerEntrySchema>;

export const CommitResultSchema = z.object({
  actual_points: z.number(),
  entry: LedgerEntrySchema,
});
export type CommitResult = z.infer<typeof CommitResultSchema>;

export const RiskReportSchema = z.object({
  subject: z.string(),
  p_infected: z.number(),
  thresholds: z.array(z.string()),
  computed_at: z.number(),
  evidence_digest: z.string().optional(),
});
export type RiskReport = z.infer<typeof RiskReportSchema>;

export const NotificationSchema = z.object({
  time: z.number(),
  kind: z.string(),
  name: z.string().optional(),
  p_infected: z.number().optional(),
});
export type Notification = z.infer<typeof NotificationSchema>;

export const LedgerViewSchema = z.object({
  id: z.string(),
  allowance: z.number(),
  balance: z.number(),
  entries: z.array(LedgerEntrySchema),
  notifications: z.array(z.record(z.unknown())),
});
export type LedgerView = z.infer<typeof LedgerViewSchema>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export interface PlanRequest {
  subject: string;
  venue: string;
  window: [number, number];
  behaviour?: string;
  co_visitors?: Array<{ id?: string; behaviour?: string; unregistered?: boolean }>;
  time?: number;
}

export interface CommitRequest {
  token: string;
  window?: [number, number];
  behaviour?: string;
  co_visitors?: Array<{ id?: string; behaviour?: string; unregistered?: boolean }>;
  time?: number;
}

export class LedgerApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await res.text();
    if (!res.ok) {
      throw new ApiError(res.status, `${method} ${path} failed (${res.status}): ${text}`);
    }
    return text ? JSON.parse(text) : null;
  }

  async createAccount(id: string, questionnaire: Record<string, unknown> = {}, time?: number) {
    return this.request("POST", "/accounts", { id, questionnaire, time });
  }

  async registerVenue(id: string, payload: Record<string, unknown> = {}) {
    return this.request("POST", "/venues", { id, ...payload });
  }

  async planVisit(req: PlanRequest): Promise<Quote> {
    return QuoteSchema.parse(await this.request("POST", "/visits/plan", req));
  }

  async commitVisit(req: CommitRequest): Promise<CommitResult> {
    return CommitResultSchema.parse(await this.request("POST", "/visits/commit", req));
  }

  async reportHealth(subject: string, kind: "symptom" | "test", name: string,
                     value: number, time?: number) {
    return this.request("POST", "/reports/health", { subject, kind, name, value, time });
  }

  async risk(person: string, time?: number): Promise<RiskReport> {
    const query = time === undefined ? "" : `?time=${time}`;
    return RiskReportSchema.parse(
      await this.request("GET", `/individuals/${person}/risk${query}`));
  }

  async ledger(person: string, time?: number): Promise<LedgerView> {
    const query = time === undefined ? "" : `?time=${time}`;
    return LedgerViewSchema.parse(await this.request("GET", `/ledger/${person}${query}`));
  }

  async venueRate(venue: string, time?: number): Promise<{ cost_rate: number }> {
    const query = time === undefined ? "" : `?time=${time}`;
    return (await this.request("GET", `/venues/${venue}/rate${query}`)) as {
      cost_rate: number;
    };
  }

  async policy(): Promise<Record<string, unknown>> {
    return (await this.request("GET", "/policy")) as Record<string, unknown>;
  }
}
