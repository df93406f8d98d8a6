export interface RetrievalBreakdown {
  index: number;
  combined: number;
  img_similarity: number;
  text_similarity: number;
}

export interface QueryResponse {
  retrieval: RetrievalBreakdown;
  results: RetrievalBreakdown[];
  retrieved_caption: string;
  retrieved_image_ref: string;
  generated_description: string;
  composite_ref: string;
}

export interface CaseSummary {
  index: number;
  image_ref: string;
  caption: string;
  source: string;
  revision?: number;
  history?: string[];
}

export interface Health {
  status: string;
  size: number;
  dims: number[];
  checksum: number;
  alpha_default: number;
  endpoints: Record<string, string>;
}

/** Structured error body the service attaches to every failed stage. */
export interface ErrorBody {
  stage: string;
  message: string;
  retriable: boolean;
}
