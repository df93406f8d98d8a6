export class ApiError extends Error {
    constructor(status, body, fallback) {
        super(body?.message ?? fallback);
        this.status = status;
        this.stage = body?.stage ?? "unknown";
        this.retriable = body?.retriable ?? false;
    }
}
async function asJson(resp) {
    if (resp.ok) {
        return (await resp.json());
    }
    let body = null;
    try {
        body = (await resp.json());
    }
    catch {
        body = null;
    }
    throw new ApiError(resp.status, body, `HTTP ${resp.status}`);
}
/** Thin typed client for the engine's HTTP interface. All persistence lives
 *  behind these endpoints; the console never stores anything itself. */
export class ApiClient {
    constructor(base, fetchImpl = fetch) {
        this.base = base;
        this.fetchImpl = fetchImpl;
    }
    url(path) {
        return this.base.replace(/\/$/, "") + path;
    }
    async health() {
        return asJson(await this.fetchImpl(this.url("/health")));
    }
    async query(image, alpha, k = 1) {
        const form = new FormData();
        form.append("image", image, "query.png");
        const params = new URLSearchParams({ alpha: String(alpha), k: String(k) });
        return asJson(await this.fetchImpl(this.url(`/query?${params}`), {
            method: "POST",
            body: form,
        }));
    }
    async addCase(image, caption, source = "human_correction") {
        const form = new FormData();
        form.append("image", image, "case.png");
        form.append("caption", caption);
        form.append("source", source);
        return asJson(await this.fetchImpl(this.url("/cases"), { method: "POST", body: form }));
    }
    async correctCase(index, correctedCaption, operatorId) {
        return asJson(await this.fetchImpl(this.url(`/cases/${index}/correct`), {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({
                corrected_caption: correctedCaption,
                operator_id: operatorId,
            }),
        }));
    }
    async listCorrections() {
        const body = await asJson(await this.fetchImpl(this.url("/cases?source=human_correction")));
        return body.cases;
    }
    async getCase(index) {
        return asJson(await this.fetchImpl(this.url(`/cases/${index}`)));
    }
    caseImageUrl(index) {
        return this.url(`/cases/${index}/image`);
    }
    compositeUrl(ref) {
        return this.url(ref);
    }
}
//# sourceMappingURL=api.js.map