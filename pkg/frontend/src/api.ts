/**
 * Typed HTTP client for the pairlens annotation service.
 *
 * Every response is validated against a zod schema before it reaches the UI,
 * and every non-2xx response is raised as an ApiError carrying the service's
 * uniform `{code, message}` error body plus the HTTP status. Transport
 * failures (server unreachable, connection reset) surface as ApiError with
 * code "network_error" and status 0 so callers can offer a retry.
 */

import { z } from "zod";

export const EXPLANATION_ORIGINS = ["observed-column", "free-text"] as const;
export type ExplanationOrigin = (typeof EXPLANATION_ORIGINS)[number];

export interface Explanation {
  name: string;
  origin: ExplanationOrigin;
}

export const STRATEGY_KINDS = [
  "z_match",
  "z_dom",
  "pi_match",
  "pi_dom",
  "marginal",
] as const;
export type StrategyKind = (typeof STRATEGY_KINDS)[number];

const sessionStatusSchema = z.enum(["active", "exhausted"]);

export const strategySchema = z.object({
  kind: z.string(),
  dominance_margin: z.number(),
  pi_gap_tolerance: z.number(),
  max_unit_reuse: z.number().int(),
  seed: z.number().int(),
  strict: z.boolean(),
});

export const datasetCreatedSchema = z.object({
  dataset_id: z.string(),
  n: z.number().int(),
  columns: z.array(z.string()),
  has_oracle: z.boolean(),
});

export const datasetListSchema = z.object({
  datasets: z.array(z.string()),
});

export const sessionSchema = z.object({
  session_id: z.string(),
  dataset_id: z.string(),
  strategy: strategySchema,
  budget: z.number().int(),
  n_proposals: z.number().int(),
  status: sessionStatusSchema,
  created_at: z.string(),
  annotator: z.string(),
  shortfall: z.number().int(),
});

export const largerSchema = z.enum(["i", "j", "tie"]);

export const proposalSchema = z.object({
  pair_id: z.string(),
  index: z.number().int(),
  i: z.number().int(),
  j: z.number().int(),
  remaining: z.number().int(),
  total: z.number().int(),
  columns: z.array(z.string()),
  row_i: z.record(z.string(), z.number()),
  row_j: z.record(z.string(), z.number()),
  larger: z.record(z.string(), largerSchema),
  notes_i: z.string().nullable(),
  notes_j: z.string().nullable(),
});

export const ackSchema = z.object({
  acknowledged: z.literal(true),
  pair_id: z.string(),
  cursor: z.number().int(),
  status: sessionStatusSchema,
});

const nameCountSchema = z.object({
  name: z.string(),
  count: z.number().int(),
});

export const reportSchema = z.object({
  session_id: z.string(),
  status: sessionStatusSchema,
  budget: z.number().int(),
  n_proposals: z.number().int(),
  cursor: z.number().int(),
  n_annotated: z.number().int(),
  n_skipped: z.number().int(),
  total_explanations: z.number().int(),
  concept_frequencies: z.array(nameCountSchema),
  observed_citations: z.array(nameCountSchema),
  oracle: z.record(z.string(), z.unknown()).nullable(),
});

const healthSchema = z.object({
  status: z.string(),
  datasets: z.number().int(),
});

export type Strategy = z.infer<typeof strategySchema>;
export type DatasetCreated = z.infer<typeof datasetCreatedSchema>;
export type Session = z.infer<typeof sessionSchema>;
export type Proposal = z.infer<typeof proposalSchema>;
export type Ack = z.infer<typeof ackSchema>;
export type Report = z.infer<typeof reportSchema>;
export type NameCount = z.infer<typeof nameCountSchema>;

export interface RolesRequest {
  treatment: string;
  outcome: string;
  covariates: string[];
  unobserved?: string[];
  notes?: string | null;
}

export interface StrategyRequest {
  kind: StrategyKind | string;
  dominance_margin?: number;
  pi_gap_tolerance?: number;
  max_unit_reuse?: number;
  seed?: number;
  strict?: boolean;
}

export interface SessionRequest {
  dataset_id: string;
  strategy: StrategyRequest;
  budget: number;
  annotator?: string;
}

export interface AnnotationRequest {
  pair_id: string;
  explanations: Explanation[];
  skipped?: boolean;
  annotator?: string;
}

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export function isApiError(err: unknown, code?: string): err is ApiError {
  return err instanceof ApiError && (code === undefined || err.code === code);
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly baseUrl: string = "",
    fetchImpl?: FetchLike,
  ) {
    // Wrap the global so a window-bound fetch keeps its receiver.
    this.fetchImpl = fetchImpl ?? ((input, init) => globalThis.fetch(input, init));
  }

  private async request<T>(
    schema: z.ZodType<T>,
    method: "GET" | "POST",
    path: string,
    body?: unknown,
  ): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      const detail = err instanceof Error ? err.message : String(err);
      throw new ApiError("network_error", `service unreachable: ${detail}`, 0);
    }
    if (!response.ok) {
      let code = "http_error";
      let message = `HTTP ${response.status}`;
      try {
        const data: unknown = await response.json();
        if (typeof data === "object" && data !== null) {
          const record = data as Record<string, unknown>;
          if (typeof record["code"] === "string") code = record["code"];
          if (typeof record["message"] === "string") message = record["message"];
        }
      } catch {
        // Non-JSON error body: keep the HTTP status message.
      }
      throw new ApiError(code, message, response.status);
    }
    return schema.parse(await response.json());
  }

  health(): Promise<z.infer<typeof healthSchema>> {
    return this.request(healthSchema, "GET", "/healthz");
  }

  uploadDataset(
    csv: string,
    roles: RolesRequest,
    provenance = "",
  ): Promise<DatasetCreated> {
    return this.request(datasetCreatedSchema, "POST", "/datasets", {
      csv,
      roles,
      provenance,
    });
  }

  async listDatasets(): Promise<string[]> {
    const body = await this.request(datasetListSchema, "GET", "/datasets");
    return body.datasets;
  }

  createSession(req: SessionRequest): Promise<Session> {
    return this.request(sessionSchema, "POST", "/sessions", req);
  }

  getSession(sessionId: string): Promise<Session> {
    return this.request(sessionSchema, "GET", `/sessions/${sessionId}`);
  }

  nextPair(sessionId: string): Promise<Proposal> {
    return this.request(proposalSchema, "GET", `/sessions/${sessionId}/next`);
  }

  submitAnnotation(sessionId: string, req: AnnotationRequest): Promise<Ack> {
    return this.request(ackSchema, "POST", `/sessions/${sessionId}/annotations`, {
      pair_id: req.pair_id,
      explanations: req.explanations,
      skipped: req.skipped ?? false,
      annotator: req.annotator ?? "",
    });
  }

  getReport(sessionId: string): Promise<Report> {
    return this.request(reportSchema, "GET", `/sessions/${sessionId}/report`);
  }
}
