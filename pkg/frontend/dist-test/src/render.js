import { ApiError } from "./api.js";
function el(tag, className, text) {
    const node = document.createElement(tag);
    if (className)
        node.className = className;
    if (text !== undefined)
        node.textContent = text;
    return node;
}
export function renderError(container, err) {
    container.replaceChildren();
    if (err instanceof ApiError && err.status === 409) {
        const banner = el("div", "banner banner-info");
        banner.append(el("strong", undefined, "The database is empty. "), el("span", undefined, "Ingest a seed corpus (casemem ingest) or add a first case below before querying."));
        container.append(banner);
        return;
    }
    const stage = err instanceof ApiError ? err.stage : "client";
    const message = err instanceof Error ? err.message : String(err);
    const banner = el("div", "banner banner-error");
    banner.append(el("strong", undefined, `${stage}: `), el("span", undefined, message));
    if (err instanceof ApiError && err.retriable) {
        banner.append(el("em", undefined, " (retriable)"));
    }
    container.append(banner);
}
export function renderQueryPanels(api, queryImageUrl, response, panels) {
    panels.query.replaceChildren();
    const queryImg = el("img");
    queryImg.src = queryImageUrl;
    queryImg.alt = "query corner case";
    panels.query.append(el("h3", undefined, "New corner case"), queryImg);
    panels.retrieved.replaceChildren();
    const retrievedImg = el("img");
    retrievedImg.src = api.caseImageUrl(response.retrieval.index);
    retrievedImg.alt = "retrieved exemplar";
    const sims = response.retrieval;
    panels.retrieved.append(el("h3", undefined, `Retrieved exemplar #${sims.index}`), retrievedImg, el("p", "caption", response.retrieved_caption), el("p", "sims", `combined ${sims.combined.toFixed(4)} = image ${sims.img_similarity.toFixed(4)} / ` +
        `text ${sims.text_similarity.toFixed(4)}`));
    panels.generated.replaceChildren(el("h3", undefined, "Generated description"), el("p", "generated", response.generated_description));
}
export function renderCorrections(container, cases, onSelect) {
    container.replaceChildren();
    if (cases.length === 0) {
        container.append(el("p", "empty", "No corrections committed yet."));
        return;
    }
    const table = el("table", "corrections");
    const head = el("tr");
    for (const title of ["#", "caption", "revision"]) {
        head.append(el("th", undefined, title));
    }
    table.append(head);
    for (const item of cases) {
        const row = el("tr");
        row.append(el("td", undefined, String(item.index)), el("td", undefined, item.caption), el("td", undefined, String(item.revision ?? 0)));
        row.addEventListener("click", () => onSelect(item.index));
        table.append(row);
    }
    container.append(table);
}
export function renderCaseDetail(container, item) {
    container.replaceChildren(el("h3", undefined, `Case #${item.index}`), el("p", undefined, `source: ${item.source}`), el("p", "caption", item.caption));
    if (item.history && item.history.length > 0) {
        const list = el("ul", "history");
        for (const old of item.history) {
            list.append(el("li", undefined, old));
        }
        container.append(el("p", undefined, "previous captions:"), list);
    }
}
//# sourceMappingURL=render.js.map