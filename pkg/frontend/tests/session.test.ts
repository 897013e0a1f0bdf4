import { describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api.js";
import { CaptionSession } from "../src/session.js";
import type { CaptionRequest, CaptionResponse, SampleRecord } from "../src/types.js";

const TEXT = "Park guide 000 Wildlife A red fox lives in the park. A blue bird lives in the park.";

function makeSample(): SampleRecord {
  return {
    context: {
      page_title: "Park guide 000",
      section_title: "Wildlife",
      body: "A red fox lives in the park. A blue bird lives in the park.",
      aux_captions: [],
      assembled_text: TEXT,
      tokens: [],
      word_groups: [],
    },
    image: { vector: [0, 1], source_id: "synthetic:red fox" },
    highlights: [],
    target_caption: { text: "a photo of the red fox", token_count: 6 },
    sample_index: 0,
    highlight_index: 0,
  };
}

/** Client double that answers deterministically from the request spans. */
class FakeClient extends ServiceClient {
  requests: CaptionRequest[] = [];

  constructor() {
    super("http://fake");
  }

  override async caption(req: CaptionRequest): Promise<CaptionResponse> {
    this.requests.push(req);
    const texts = req.highlights.map(([a, b]) => TEXT.slice(a, b));
    const caption = texts.length
      ? `a photo of the ${texts.join(" and the ")}`
      : "a photo of the red fox";
    return {
      captions: Array(req.num_captions).fill(`${caption} [seed ${req.seed}]`),
      applied_highlights: req.highlights.map(([a, b]) => ({
        char_start: a,
        char_end: b,
        text: TEXT.slice(a, b),
      })),
      relevance_heatmap: null,
      assembled_text: TEXT,
      model_version: "prompting-test",
    };
  }
}

describe("CaptionSession", () => {
  it("snaps selections against the server text and sends exact offsets", async () => {
    const client = new FakeClient();
    const session = new CaptionSession(client, makeSample());
    const mid = TEXT.indexOf("red") + 1;
    session.select(mid, mid + 1);
    expect(session.selectionTexts()).toEqual(["red"]);

    await session.requestCaptions("prompting");
    const [sent] = client.requests;
    const [a, b] = sent.highlights[0];
    expect(TEXT.slice(a, b)).toBe("red");
  });

  it("ignores selections outside the context area", () => {
    const session = new CaptionSession(new FakeClient(), makeSample());
    session.select(TEXT.length + 10, TEXT.length + 20);
    expect(session.currentSelections).toEqual([]);
  });

  it("appends immutable history entries", async () => {
    const client = new FakeClient();
    const session = new CaptionSession(client, makeSample());
    session.select(TEXT.indexOf("red"), TEXT.indexOf("red") + 3);
    const first = await session.requestCaptions("prompting");

    session.clearSelection();
    session.select(TEXT.indexOf("blue"), TEXT.indexOf("blue") + 4);
    const second = await session.requestCaptions("prompting");

    expect(session.history.length).toBe(2);
    expect(session.history[0]).toBe(first);
    expect(second.id).toBeGreaterThan(first.id);
    expect(first.captions[0]).not.toBe(second.captions[0]);
    expect(Object.isFrozen(first)).toBe(true);
    expect(Object.isFrozen(first.captions)).toBe(true);
  });

  it("labels empty-selection runs as plain contextual mode", async () => {
    const session = new CaptionSession(new FakeClient(), makeSample());
    const entry = await session.requestCaptions("prompting");
    expect(entry.label).toBe("no highlights");
  });

  it("re-running an entry reproduces its caption via the carried seed", async () => {
    const client = new FakeClient();
    const session = new CaptionSession(client, makeSample());
    session.select(TEXT.indexOf("fox"), TEXT.indexOf("fox") + 3);
    const entry = await session.requestCaptions("prompting", 1, 42);
    const replay = await session.rerun(entry);
    expect(replay.captions).toEqual(entry.captions);
    expect(client.requests[1].seed).toBe(42);
    expect(client.requests[1].highlights).toEqual(client.requests[0].highlights);
  });

  it("rejects concurrent in-flight requests", async () => {
    const client = new FakeClient();
    let release!: () => void;
    const gate = new Promise<void>((resolve) => (release = resolve));
    client.caption = async (req: CaptionRequest) => {
      await gate;
      return FakeClient.prototype.caption.call(client, req);
    };
    const session = new CaptionSession(client, makeSample());
    const pending = session.requestCaptions("prompting");
    await expect(session.requestCaptions("prompting")).rejects.toThrow(/in flight/);
    release();
    await pending;
  });
});
