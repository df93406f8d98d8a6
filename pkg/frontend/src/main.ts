import { ApiClient } from "./api.js";
import { renderCaseDetail, renderCorrections, renderError, renderQueryPanels } from "./render.js";
import { ConsoleSession } from "./session.js";

const apiBase =
  new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8000";
const api = new ApiClient(apiBase);
const session = new ConsoleSession(api);

const $ = (id: string) => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
};

const fileInput = $("image-input") as HTMLInputElement;
const alphaSlider = $("alpha") as HTMLInputElement;
const alphaValue = $("alpha-value");
const queryButton = $("query-button") as HTMLButtonElement;
const commitButton = $("commit-button") as HTMLButtonElement;
const draftArea = $("draft") as HTMLTextAreaElement;
const errorBox = $("errors");
const statusLine = $("status");

function syncControls(): void {
  commitButton.disabled = !session.canCommit;
  queryButton.disabled = session.pending || !fileInput.files?.length;
  statusLine.textContent = session.pending ? "working..." : "";
}

alphaSlider.addEventListener("input", () => {
  alphaValue.textContent = Number(alphaSlider.value).toFixed(2);
});

fileInput.addEventListener("change", syncControls);

draftArea.addEventListener("input", () => {
  session.setDraft(draftArea.value);
  syncControls();
});

queryButton.addEventListener("click", () => {
  void runQuery();
});

async function runQuery(): Promise<void> {
  const file = fileInput.files?.[0];
  if (!file) return;
  errorBox.replaceChildren();
  syncControls();
  try {
    const response = await session.submitQuery(file, Number(alphaSlider.value));
    renderQueryPanels(api, URL.createObjectURL(file), response, {
      query: $("panel-query"),
      retrieved: $("panel-retrieved"),
      generated: $("panel-generated"),
    });
    draftArea.value = session.draftCaption;
  } catch (err) {
    renderError(errorBox, err);
  } finally {
    syncControls();
  }
}

commitButton.addEventListener("click", () => {
  void runCommit();
});

async function runCommit(): Promise<void> {
  errorBox.replaceChildren();
  syncControls();
  try {
    const result = await session.commitCorrection();
    if (result) {
      statusLine.textContent = `committed as case #${result.index}`;
      draftArea.value = "";
      await refreshCorrections();
    }
  } catch (err) {
    renderError(errorBox, err);
    draftArea.value = session.draftCaption; // draft survives a failed commit
  } finally {
    syncControls();
  }
}

async function refreshCorrections(): Promise<void> {
  try {
    const cases = await session.browseCorrections();
    renderCorrections($("corrections"), cases, (index) => {
      void api.getCase(index).then((item) => renderCaseDetail($("detail"), item));
    });
  } catch (err) {
    renderError(errorBox, err);
  }
}

void refreshCorrections();
syncControls();
