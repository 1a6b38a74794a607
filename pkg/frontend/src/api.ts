// Typed client for the forecasting service. The console consumes these
// endpoints and performs no effect-size computation of its own.

export interface SyntheticRct {
  intervention: string | null;
  outcome: string | null;
}

export interface SynthResponse {
  synthetic_rct: SyntheticRct;
  warnings: string[];
  retries: number;
}

export interface Prediction {
  effect: number;
  ci_lower: number;
  ci_upper: number;
  predictor_id: string;
  query_id: string;
}

export interface TraceStage {
  stage: string;
  [key: string]: unknown;
}

export interface ForecastResponse {
  prediction: Prediction;
  significance_class: string;
  economically_meaningful: boolean;
  pipeline_trace: TraceStage[];
}

export interface HistoryEntry {
  query_text: string;
  synthetic_rct: SyntheticRct | null;
  prediction: Prediction;
  significance_class: string;
  economically_meaningful: boolean;
  timestamp: string;
}

export interface ForecastRequest {
  query_text: string;
  predictor_id: string;
  session: string;
  synthetic_rct?: SyntheticRct;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public detail: unknown = null
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ServiceError> {
  try {
    const body = await response.json();
    return new ServiceError(
      response.status,
      body.code ?? "unknown",
      body.message ?? response.statusText,
      body.detail ?? null
    );
  } catch {
    return new ServiceError(response.status, "unknown", response.statusText);
  }
}

export class ApiClient {
  constructor(private baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, init);
    } catch (e) {
      throw new ServiceError(0, "unreachable", "service unreachable: " + (e as Error).message);
    }
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body)
    });
  }

  synthRct(queryText: string): Promise<SynthResponse> {
    return this.post<SynthResponse>("/synth-rct", { query_text: queryText });
  }

  forecast(body: ForecastRequest): Promise<ForecastResponse> {
    return this.post<ForecastResponse>("/forecast", body);
  }

  async history(session: string): Promise<HistoryEntry[]> {
    const out = await this.request<{ entries: HistoryEntry[] }>(
      "/history?session=" + encodeURIComponent(session)
    );
    return out.entries;
  }

  async predictors(): Promise<string[]> {
    const out = await this.request<{ predictors: string[] }>("/predictors");
    return out.predictors;
  }
}
