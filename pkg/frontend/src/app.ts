/**
 * Browser wiring for the highlight-steering UI.
 *
 * The context panel renders the server's assembled text as a single text
 * node, so DOM selection offsets are character offsets into that exact
 * string and no client-side normalization can drift from the server's spans.
 */

import { ServiceClient } from "./api.js";
import { heatCells } from "./heatmap.js";
import { CaptionSession } from "./session.js";
import type { ControllerKind, HistoryEntry } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let session: CaptionSession | null = null;
let client: ServiceClient;

function selectionOffsets(container: HTMLElement): [number, number] | null {
  const sel = window.getSelection();
  if (!sel || sel.rangeCount === 0 || sel.isCollapsed) return null;
  const range = sel.getRangeAt(0);
  const textNode = container.firstChild;
  if (!textNode || range.startContainer !== textNode || range.endContainer !== textNode) {
    return null; // selection left the context area
  }
  return [range.startOffset, range.endOffset];
}

function renderSelections(): void {
  if (!session) return;
  const texts = session.selectionTexts();
  $("selection-list").textContent = texts.length
    ? texts.map((t) => `"${t}"`).join(", ")
    : "(none - captions run in plain contextual mode)";
}

function renderHistory(): void {
  if (!session) return;
  const panel = $("history");
  panel.replaceChildren();
  for (const entry of [...session.history].reverse()) {
    panel.appendChild(renderEntry(entry));
  }
}

function renderEntry(entry: HistoryEntry): HTMLElement {
  const card = document.createElement("div");
  card.className = "entry";
  const head = document.createElement("div");
  head.className = "entry-head";
  head.textContent = `#${entry.id} ${entry.controller} | ${entry.label}`;
  card.appendChild(head);
  for (const caption of entry.captions) {
    const p = document.createElement("p");
    p.className = "caption";
    p.textContent = caption;
    card.appendChild(p);
  }
  if (entry.heatmap && session) {
    const words = session.sample.context.word_groups.map(([w]) => w);
    const strip = document.createElement("div");
    strip.className = "heatmap";
    for (const cell of heatCells(words, [...entry.heatmap])) {
      const span = document.createElement("span");
      span.className = `heat b${cell.bucket}`;
      span.title = `${cell.word}: ${cell.score.toFixed(3)}`;
      strip.appendChild(span);
    }
    card.appendChild(strip);
  }
  const rerun = document.createElement("button");
  rerun.textContent = "re-run";
  rerun.addEventListener("click", () => {
    void session?.rerun(entry).then(renderHistory, showError);
  });
  card.appendChild(rerun);
  return card;
}

function showError(err: unknown): void {
  $("status").textContent = `error: ${err instanceof Error ? err.message : String(err)}`;
}

async function loadSample(id: string): Promise<void> {
  const sample = await client.getSample(id);
  session = new CaptionSession(client, sample);
  const panel = $("context");
  panel.replaceChildren(document.createTextNode(sample.context.assembled_text));
  $("image-ref").textContent = sample.image.source_id;
  renderSelections();
  renderHistory();
  $("status").textContent = `loaded sample ${id}`;
}

async function boot(): Promise<void> {
  client = new ServiceClient(
    (document.body.dataset.serviceUrl ?? "").replace(/\/$/, ""));
  const health = await client.health();
  $("status").textContent = `service ${health.status}; checkpoints: ${health.checkpoints.join(", ")}`;

  const picker = $("sample-picker") as unknown as HTMLSelectElement;
  const { ids } = await client.listSamples();
  for (const id of ids) {
    const opt = document.createElement("option");
    opt.value = id;
    opt.textContent = id;
    picker.appendChild(opt);
  }
  picker.addEventListener("change", () => void loadSample(picker.value).catch(showError));
  if (ids.length) {
    picker.value = ids[0];
    await loadSample(ids[0]);
  }

  $("context").addEventListener("mouseup", () => {
    if (!session) return;
    const offsets = selectionOffsets($("context"));
    if (offsets) {
      session.select(offsets[0], offsets[1]);
      window.getSelection()?.removeAllRanges();
      renderSelections();
    }
  });

  $("clear").addEventListener("click", () => {
    session?.clearSelection();
    renderSelections();
  });

  $("generate").addEventListener("click", () => {
    if (!session) return;
    const controller = ($("controller") as unknown as HTMLSelectElement)
      .value as ControllerKind;
    const count = Number(($("num-captions") as unknown as HTMLInputElement).value) || 1;
    $("status").textContent = "generating...";
    void session
      .requestCaptions(controller, count)
      .then(() => {
        $("status").textContent = "done";
        renderHistory();
      })
      .catch(showError);
  });
}

void boot().catch(showError);
