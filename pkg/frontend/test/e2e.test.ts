/** Full operator loop against the real service running with mock models:
 *  query, edit the draft, commit, and observe the correction in a repeat
 *  query. Requires python3 with the backend package installed.
 */

import assert from "node:assert/strict";
import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { after, before, test } from "node:test";

import { ApiClient } from "../src/api.js";
import { ConsoleSession } from "../src/session.js";
import { PNG_AMBER, PNG_GRAY, pngBlob } from "./fakes.js";

const PORT = 8490 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;

async function waitForHealth(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/health`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error(`service did not come up on ${BASE}`);
}

before(async () => {
  const dbDir = mkdtempSync(join(tmpdir(), "casemem-e2e-"));
  server = spawn(
    "python3",
    ["-m", "casemem.cli", "serve", "--db", dbDir, "--port", String(PORT), "--mock"],
    { stdio: ["ignore", "pipe", "pipe"], cwd: join(import.meta.dirname, "..", "..") },
  );
  server.on("exit", (code) => {
    if (code !== null && code !== 0) {
      console.error(`service exited early with code ${code}`);
    }
  });
  await waitForHealth();
});

after(() => {
  server.kill("SIGTERM");
});

test("operator loop: query, correct, commit, repeat query sees the correction", async () => {
  let caseRequests = 0;
  const counting = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    if (url.endsWith("/cases") && init?.method === "POST") caseRequests += 1;
    return fetch(input, init);
  }) as typeof fetch;

  const api = new ApiClient(BASE, counting);
  const session = new ConsoleSession(api);

  // seed an unrelated case so the first query has something to retrieve
  await api.addCase(pngBlob(PNG_GRAY), "an ordinary empty intersection", "seed_corpus");

  // pass 1: the novel case retrieves the unrelated exemplar and the
  // generated description misses the real meaning
  const first = await session.submitQuery(pngBlob(PNG_AMBER), 0);
  assert.equal(first.retrieved_caption, "an ordinary empty intersection");
  const corrected = "crossed-out overhead signal means merge left before the gate";
  assert.ok(!first.generated_description.includes(corrected));
  assert.equal(session.draftCaption, first.generated_description);

  // operator edits the draft and commits exactly once (double activation)
  session.setDraft(corrected);
  const before_ = caseRequests;
  const [committed, duplicate] = await Promise.all([
    session.commitCorrection(),
    session.commitCorrection(),
  ]);
  assert.ok(committed);
  assert.equal(duplicate, null);
  assert.equal(caseRequests - before_, 1);

  // pass 2: the repeat query now retrieves and echoes the corrected caption
  const second = await session.submitQuery(pngBlob(PNG_AMBER), 0);
  assert.equal(second.retrieval.index, committed!.index);
  assert.equal(second.retrieved_caption, corrected);
  assert.ok(second.generated_description.includes(corrected));

  // the committed case shows up in the corrections browser with its detail
  const corrections = await session.browseCorrections();
  assert.ok(corrections.some((c) => c.index === committed!.index && c.caption === corrected));
  const detail = await api.getCase(committed!.index);
  assert.equal(detail.caption, corrected);
  assert.equal(detail.source, "human_correction");
});

test("server-derived state survives a fresh session (no authoritative UI state)", async () => {
  const api = new ApiClient(BASE);
  const fresh = new ConsoleSession(api);
  const again = await fresh.submitQuery(pngBlob(PNG_AMBER), 0);
  assert.ok(again.retrieved_caption.includes("merge left"));
});
