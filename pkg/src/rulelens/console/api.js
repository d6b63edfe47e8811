export const SESSION_HEADER = "X-Session-Id";
export class ApiError extends Error {
    constructor(status, code, message) {
        super(message);
        this.status = status;
        this.code = code;
        this.name = "ApiError";
    }
}
/** Thin typed wrapper over the /api/v1 endpoints. Owns the steering session
 * id: the server adopts whatever id the client presents, so the client mints
 * nothing and simply echoes back the id returned by the first steering call. */
export class ApiClient {
    constructor(baseUrl = "", fetchImpl = (...args) => fetch(...args)) {
        this.baseUrl = baseUrl;
        this.fetchImpl = fetchImpl;
        this.sessionId = null;
    }
    async request(method, path, body) {
        const headers = {};
        if (body !== undefined)
            headers["Content-Type"] = "application/json";
        if (this.sessionId !== null)
            headers[SESSION_HEADER] = this.sessionId;
        const res = await this.fetchImpl(this.baseUrl + path, {
            method,
            headers,
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        let payload = null;
        try {
            payload = await res.json();
        }
        catch {
            throw new ApiError(res.status, "bad_response", "response was not JSON");
        }
        if (!res.ok) {
            const env = payload;
            const code = env?.error?.code ?? "unknown";
            const message = env?.error?.message ?? `HTTP ${res.status}`;
            throw new ApiError(res.status, code, message);
        }
        return payload;
    }
    health() {
        return this.request("GET", "/healthz");
    }
    metrics() {
        return this.request("GET", "/api/v1/metrics");
    }
    explainId(instanceId) {
        return this.request("POST", "/api/v1/explain", { instance_id: instanceId });
    }
    explainAdHoc(instance) {
        return this.request("POST", "/api/v1/explain", { instance });
    }
    clusters(k) {
        return this.request("GET", `/api/v1/clusters?k=${k}`);
    }
    atoms(query, limit = 50) {
        const q = encodeURIComponent(query);
        return this.request("GET", `/api/v1/atoms?query=${q}&limit=${limit}`);
    }
    async exclude(atomIds) {
        const resp = await this.request("POST", "/api/v1/steer/exclude", { atom_ids: atomIds });
        this.sessionId = resp.session_id;
        return resp;
    }
    async reset() {
        const resp = await this.request("POST", "/api/v1/steer/reset");
        this.sessionId = resp.session_id;
        return resp;
    }
}
