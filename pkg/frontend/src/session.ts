import type { ApiClient } from "./api.js";
import { ApiError } from "./api.js";
import { StrokeRecorder } from "./brush.js";
import type { BrushName, PreviewResult, SessionDoc } from "./types.js";

/**
 * Client-side session state. The server is authoritative for everything the
 * annotator sees: strokes are queued locally only until acknowledged, the
 * overlay always renders the last server-confirmed maps, and coverage
 * readouts come from the confirmed session doc.
 */
export class UiSession {
  doc: SessionDoc;
  frameIndex = 0;
  brush: BrushName = "coarse";
  comparisonSlider = 0.5;
  private recorder: StrokeRecorder | null = null;
  lastPreview: PreviewResult | null = null;

  constructor(private readonly api: ApiClient, doc: SessionDoc) {
    this.doc = doc;
  }

  get sessionId(): string {
    return this.doc.session_id;
  }

  /** True when another window holds the write lease for this session. */
  get readOnly(): boolean {
    return this.doc.read_only === true;
  }

  selectBrush(name: BrushName): void {
    this.brush = name;
  }

  setFrame(index: number): void {
    if (index < 0 || index >= this.doc.frame_count) return;
    this.frameIndex = index;
  }

  /** Begin a stroke at the current frame; dabs apply through end of video. */
  beginStroke(): void {
    this.recorder = new StrokeRecorder(this.brush, this.frameIndex, null);
  }

  extendStroke(x: number, y: number): void {
    this.recorder?.add(x, y);
  }

  /** Queue the finished stroke and try to send everything queued. */
  async endStroke(): Promise<SessionDoc | null> {
    const payload = this.recorder?.finish(this.api.nextStrokeId()) ?? null;
    this.recorder = null;
    if (payload) this.api.enqueueStroke(payload);
    return this.replayQueued();
  }

  /**
   * Flush the stroke queue; on network failure the strokes stay queued and
   * the call reports null (the caller retries later). Idempotent ids make
   * replays safe.
   */
  async replayQueued(): Promise<SessionDoc | null> {
    try {
      const doc = await this.api.flushStrokes(this.sessionId);
      if (doc) this.doc = doc;
      return doc;
    } catch (err) {
      if (err instanceof ApiError) throw err; // server rejected: surface it
      return null; // network failure: keep queued for replay
    }
  }

  get pendingStrokes(): number {
    return this.api.pendingStrokes;
  }

  /** Stroke buffer must reach the server before a preview is meaningful. */
  async preview(): Promise<PreviewResult> {
    await this.replayQueued();
    if (this.pendingStrokes > 0) {
      throw new Error("strokes still queued offline; retry before previewing");
    }
    this.lastPreview = await this.api.preview(this.sessionId);
    return this.lastPreview;
  }

  async refresh(): Promise<SessionDoc> {
    this.doc = await this.api.getSession(this.sessionId);
    return this.doc;
  }
}

/** Resolve a resume link; null means "fall back to the landing page". */
export async function resumeFromUrl(
  api: ApiClient,
  url: string,
): Promise<UiSession | null> {
  const parsed = parseResumeUrl(url);
  if (!parsed) return null;
  try {
    const doc = await api.resume(parsed.annotator, parsed.videoId);
    return new UiSession(api, doc);
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) return null;
    throw err;
  }
}

export function parseResumeUrl(
  url: string,
): { annotator: string; videoId: string } | null {
  const target = new URL(url, "http://localhost/");
  const fromPath = target.pathname.match(/^\/resume\/([^/]+)\/([^/]+)$/);
  if (fromPath) {
    return {
      annotator: decodeURIComponent(fromPath[1]),
      videoId: decodeURIComponent(fromPath[2]),
    };
  }
  const annotator = target.searchParams.get("annotator");
  const videoId = target.searchParams.get("video");
  if (annotator && videoId) return { annotator, videoId };
  return null;
}
