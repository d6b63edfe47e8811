import type {
  AtomInfo,
  ClusterReport,
  ErrorEnvelope,
  ExcludeResponse,
  ExplainResponse,
  HealthResponse,
  MetricsReport,
  ResetResponse,
} from "./types.js";

export const SESSION_HEADER = "X-Session-Id";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export type AdHocInstance = Record<string, unknown> | string;

/** Thin typed wrapper over the /api/v1 endpoints. Owns the steering session
 * id: the server adopts whatever id the client presents, so the client mints
 * nothing and simply echoes back the id returned by the first steering call. */
export class ApiClient {
  sessionId: string | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.sessionId !== null) headers[SESSION_HEADER] = this.sessionId;
    const res = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let payload: unknown = null;
    try {
      payload = await res.json();
    } catch {
      throw new ApiError(res.status, "bad_response", "response was not JSON");
    }
    if (!res.ok) {
      const env = payload as ErrorEnvelope;
      const code = env?.error?.code ?? "unknown";
      const message = env?.error?.message ?? `HTTP ${res.status}`;
      throw new ApiError(res.status, code, message);
    }
    return payload as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  metrics(): Promise<MetricsReport> {
    return this.request("GET", "/api/v1/metrics");
  }

  explainId(instanceId: number): Promise<ExplainResponse> {
    return this.request("POST", "/api/v1/explain", { instance_id: instanceId });
  }

  explainAdHoc(instance: AdHocInstance): Promise<ExplainResponse> {
    return this.request("POST", "/api/v1/explain", { instance });
  }

  clusters(k: number): Promise<ClusterReport> {
    return this.request("GET", `/api/v1/clusters?k=${k}`);
  }

  atoms(query: string, limit = 50): Promise<{ atoms: AtomInfo[] }> {
    const q = encodeURIComponent(query);
    return this.request("GET", `/api/v1/atoms?query=${q}&limit=${limit}`);
  }

  async exclude(atomIds: number[]): Promise<ExcludeResponse> {
    const resp = await this.request<ExcludeResponse>(
      "POST",
      "/api/v1/steer/exclude",
      { atom_ids: atomIds },
    );
    this.sessionId = resp.session_id;
    return resp;
  }

  async reset(): Promise<ResetResponse> {
    const resp = await this.request<ResetResponse>("POST", "/api/v1/steer/reset");
    this.sessionId = resp.session_id;
    return resp;
  }
}
