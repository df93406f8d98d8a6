import type { ApiClient } from "./api.js";
import type { CaseSummary, QueryResponse } from "./types.js";

/** One operator's takeover session.
 *
 * State machine rules:
 *  - pending is true while any query or commit is in flight; the commit
 *    action is disabled whenever pending is true or the draft is empty.
 *  - a commit is single-flight: pending is set synchronously before the
 *    request starts, so a second activation (double click) never issues a
 *    second request.
 *  - committing creates a NEW case from the query image plus the corrected
 *    draft; the per-index correct endpoint is reserved for fixing existing
 *    seed captions from the detail view.
 *  - nothing here is authoritative: every view is rebuilt from server
 *    responses, so a page refresh plus re-query reproduces the same state.
 */
export class ConsoleSession {
  lastQuery: QueryResponse | null = null;
  draftCaption = "";
  pending = false;
  lastError: unknown = null;

  private queryImage: Blob | null = null;

  constructor(private readonly api: ApiClient) {}

  get canCommit(): boolean {
    return !this.pending && this.draftCaption.trim().length > 0 && this.lastQuery !== null;
  }

  setDraft(text: string): void {
    this.draftCaption = text;
  }

  async submitQuery(image: Blob, alpha: number): Promise<QueryResponse> {
    this.pending = true;
    this.lastError = null;
    try {
      const response = await this.api.query(image, alpha);
      this.lastQuery = response;
      this.queryImage = image;
      this.draftCaption = response.generated_description;
      return response;
    } catch (err) {
      this.lastError = err;
      throw err;
    } finally {
      this.pending = false;
    }
  }

  /** Commit the corrected draft as a new case. Returns null (and issues no
   *  request) when commit is not currently allowed. */
  async commitCorrection(): Promise<{ index: number } | null> {
    if (!this.canCommit || this.queryImage === null) {
      return null;
    }
    this.pending = true;
    this.lastError = null;
    try {
      const result = await this.api.addCase(this.queryImage, this.draftCaption.trim());
      this.lastQuery = null;
      this.queryImage = null;
      this.draftCaption = "";
      return result;
    } catch (err) {
      // surface the failure but keep the draft so the operator can retry
      this.lastError = err;
      throw err;
    } finally {
      this.pending = false;
    }
  }

  async browseCorrections(): Promise<CaseSummary[]> {
    return this.api.listCorrections();
  }
}
