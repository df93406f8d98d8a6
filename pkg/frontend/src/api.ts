import type { CaseSummary, ErrorBody, Health, QueryResponse } from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly stage: string;
  readonly retriable: boolean;

  constructor(status: number, body: ErrorBody | null, fallback: string) {
    super(body?.message ?? fallback);
    this.status = status;
    this.stage = body?.stage ?? "unknown";
    this.retriable = body?.retriable ?? false;
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let body: ErrorBody | null = null;
  try {
    body = (await resp.json()) as ErrorBody;
  } catch {
    body = null;
  }
  throw new ApiError(resp.status, body, `HTTP ${resp.status}`);
}

/** Thin typed client for the engine's HTTP interface. All persistence lives
 *  behind these endpoints; the console never stores anything itself. */
export class ApiClient {
  constructor(
    readonly base: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  async health(): Promise<Health> {
    return asJson(await this.fetchImpl(this.url("/health")));
  }

  async query(image: Blob, alpha: number, k = 1): Promise<QueryResponse> {
    const form = new FormData();
    form.append("image", image, "query.png");
    const params = new URLSearchParams({ alpha: String(alpha), k: String(k) });
    return asJson(
      await this.fetchImpl(this.url(`/query?${params}`), {
        method: "POST",
        body: form,
      }),
    );
  }

  async addCase(
    image: Blob,
    caption: string,
    source = "human_correction",
  ): Promise<{ index: number }> {
    const form = new FormData();
    form.append("image", image, "case.png");
    form.append("caption", caption);
    form.append("source", source);
    return asJson(
      await this.fetchImpl(this.url("/cases"), { method: "POST", body: form }),
    );
  }

  async correctCase(
    index: number,
    correctedCaption: string,
    operatorId: string,
  ): Promise<{ index: number; revision: number }> {
    return asJson(
      await this.fetchImpl(this.url(`/cases/${index}/correct`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          corrected_caption: correctedCaption,
          operator_id: operatorId,
        }),
      }),
    );
  }

  async listCorrections(): Promise<CaseSummary[]> {
    const body = await asJson<{ cases: CaseSummary[] }>(
      await this.fetchImpl(this.url("/cases?source=human_correction")),
    );
    return body.cases;
  }

  async getCase(index: number): Promise<CaseSummary> {
    return asJson(await this.fetchImpl(this.url(`/cases/${index}`)));
  }

  caseImageUrl(index: number): string {
    return this.url(`/cases/${index}/image`);
  }

  compositeUrl(ref: string): string {
    return this.url(ref);
  }
}
