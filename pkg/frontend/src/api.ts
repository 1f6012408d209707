import type {
  AnnotationAck,
  AnnotationAction,
  InstanceCard,
  MetricsReport,
  ProxyStatus,
  TaskSummary,
} from "./types";

export class ApiError extends Error {
  constructor(
    public code: number,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<never> {
  let message = response.statusText;
  try {
    const body = await response.json();
    message = body.message ?? body.detail ?? message;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, message);
}

/** Thin typed client over the annotation service; holds no state of its own. */
export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: typeof fetch = fetch,
    private apiToken: string | null = null,
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  private async post<T>(path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.apiToken) headers["Authorization"] = `Bearer ${this.apiToken}`;
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  listTasks(): Promise<TaskSummary[]> {
    return this.get("/tasks");
  }

  fetchQueue(task: string, n: number, strategy = "random"): Promise<InstanceCard[]> {
    return this.get<{ instances: InstanceCard[] }>(
      `/tasks/${encodeURIComponent(task)}/queue?n=${n}&strategy=${strategy}`,
    ).then((body) => body.instances);
  }

  postAnnotation(
    task: string,
    instanceId: string,
    action: AnnotationAction,
    annotator: string,
  ): Promise<AnnotationAck> {
    return this.post(`/tasks/${encodeURIComponent(task)}/annotations`, {
      instance_id: instanceId,
      annotator,
      ...action,
    });
  }

  retrainProxies(task: string): Promise<{ state: string }> {
    return this.post(`/tasks/${encodeURIComponent(task)}/proxies/retrain`);
  }

  proxyStatus(task: string): Promise<ProxyStatus> {
    return this.get(`/tasks/${encodeURIComponent(task)}/proxies/status`);
  }

  metrics(task: string): Promise<MetricsReport> {
    return this.get(`/tasks/${encodeURIComponent(task)}/metrics`);
  }

  exportUrl(task: string, variant: "raw" | "lr" | "oosf"): string {
    return `${this.baseUrl}/tasks/${encodeURIComponent(task)}/export?variant=${variant}`;
  }
}
