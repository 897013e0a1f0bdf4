/** Thin JSON client over the captioning service. */

import type {
  CaptionRequest,
  CaptionResponse,
  HealthResponse,
  RelevanceResponse,
  SampleRecord,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`service error ${status}: ${JSON.stringify(detail)}`);
  }
}

export class ServiceClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const doc = await resp.json().catch(() => null);
    if (!resp.ok) {
      throw new ServiceError(resp.status, doc && (doc as { detail?: unknown }).detail);
    }
    return doc as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/v1/health");
  }

  listSamples(): Promise<{ ids: string[] }> {
    return this.request("GET", "/v1/samples");
  }

  getSample(id: string): Promise<SampleRecord> {
    return this.request("GET", `/v1/samples/${id}`);
  }

  caption(req: CaptionRequest): Promise<CaptionResponse> {
    return this.request("POST", "/v1/caption", req);
  }

  relevance(req: {
    page_title: string;
    section_title?: string;
    body?: string;
    aux_captions?: string[];
    caption: string;
  }): Promise<RelevanceResponse> {
    return this.request("POST", "/v1/relevance", req);
  }
}
