import type {
  BlockingLock,
  CaseRecord,
  ExportResult,
  SessionState,
  SparsifyResult,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public blockingLocks: BlockingLock[] = [],
  ) {
    super(message);
  }
}

async function throwFromResponse(res: Response): Promise<never> {
  let message = `${res.status} ${res.statusText}`;
  let locks: BlockingLock[] = [];
  try {
    const body = await res.json();
    const detail = body?.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail && typeof detail === "object") {
      message = detail.message ?? message;
      if (Array.isArray(detail.blocking_locks)) locks = detail.blocking_locks;
    }
  } catch {
    // non-JSON error body: keep the HTTP status text
  }
  throw new ApiError(res.status, message, locks);
}

/** Thin typed client for the /v1 API; all mutations return the full
 *  session state so the UI can re-render from server truth. */
export class ApiClient {
  constructor(
    private base = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchFn(`${this.base}/v1${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) await throwFromResponse(res);
    return (await res.json()) as T;
  }

  listCases(): Promise<{ cases: CaseRecord[] }> {
    return this.request("GET", "/cases");
  }

  caseRecord(caseId: string): Promise<CaseRecord> {
    return this.request("GET", `/cases/${caseId}`);
  }

  createSession(caseId: string): Promise<SessionState> {
    return this.request("POST", "/sessions", { case_id: caseId });
  }

  getSession(sessionId: string): Promise<SessionState> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  drag(sessionId: string, objectiveIndex: number, value: number): Promise<SessionState> {
    return this.request("POST", `/sessions/${sessionId}/drag`, {
      objective_index: objectiveIndex,
      requested_value: value,
    });
  }

  lock(sessionId: string, objectiveIndex: number, bound: number): Promise<SessionState> {
    return this.request("POST", `/sessions/${sessionId}/lock`, {
      objective_index: objectiveIndex,
      bound,
    });
  }

  unlock(sessionId: string, objectiveIndex: number): Promise<SessionState> {
    return this.request("POST", `/sessions/${sessionId}/unlock`, {
      objective_index: objectiveIndex,
    });
  }

  restrict(sessionId: string, m: number): Promise<SessionState> {
    return this.request("POST", `/sessions/${sessionId}/restrict`, { m });
  }

  exportPlan(sessionId: string): Promise<ExportResult> {
    return this.request("POST", `/sessions/${sessionId}/export`);
  }

  sparsify(sessionId: string, beams: number, epsilon: number): Promise<SparsifyResult> {
    return this.request("POST", `/sessions/${sessionId}/sparsify`, { beams, epsilon });
  }
}
