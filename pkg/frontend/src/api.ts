import { parsePgm } from "./pgm.js";
import type {
  GrayImage,
  PreviewResult,
  SessionDoc,
  ShuffleTicket,
  StrokePayload,
  VerdictResult,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function asError(resp: Response): Promise<ApiError> {
  let message = resp.statusText;
  try {
    const body = (await resp.json()) as { error?: string };
    if (body.error) message = body.error;
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(resp.status, message);
}

/**
 * Typed client for the annotation service. Strokes go through a local queue
 * with idempotent ids: a batch that fails to send stays queued and is
 * retried on the next flush, and the server ignores ids it already applied,
 * so replays after a network failure are safe.
 */
export class ApiClient {
  private queue: StrokePayload[] = [];
  private seq = 0;
  private readonly tag = Math.random().toString(36).slice(2, 10);
  /** write lease issued at open/resume; absent in read-only sessions */
  writerToken: string | null = null;

  constructor(readonly baseUrl: string = "") {}

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await asError(resp);
    return (await resp.json()) as T;
  }

  private async bytes(path: string): Promise<Uint8Array> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) throw await asError(resp);
    return new Uint8Array(await resp.arrayBuffer());
  }

  listVideos(): Promise<{ videos: { video_id: string }[] }> {
    return this.json("GET", "/videos");
  }

  async openSession(
    annotator: string,
    videoId: string,
    takeover = false,
  ): Promise<SessionDoc> {
    const doc = await this.json<SessionDoc>("POST", "/sessions", {
      annotator,
      video_id: videoId,
      takeover,
    });
    this.writerToken = doc.writer_token ?? null;
    return doc;
  }

  getSession(sessionId: string): Promise<SessionDoc> {
    return this.json("GET", `/sessions/${sessionId}`);
  }

  async resume(annotator: string, videoId: string): Promise<SessionDoc> {
    const doc = await this.json<SessionDoc>(
      "GET",
      `/resume/${encodeURIComponent(annotator)}/${encodeURIComponent(videoId)}`,
    );
    this.writerToken = doc.writer_token ?? null;
    return doc;
  }

  async frame(videoId: string, index: number): Promise<GrayImage> {
    return parsePgm(await this.bytes(`/videos/${encodeURIComponent(videoId)}/frame/${index}`));
  }

  /** Server-confirmed working map; the client never paints this itself. */
  async confirmedMap(sessionId: string, frame: number): Promise<GrayImage> {
    return parsePgm(await this.bytes(`/sessions/${sessionId}/map/${frame}`));
  }

  nextStrokeId(): string {
    return `${this.tag}-${this.seq++}`;
  }

  enqueueStroke(stroke: StrokePayload): void {
    this.queue.push(stroke);
  }

  get pendingStrokes(): number {
    return this.queue.length;
  }

  /**
   * Send every queued stroke. On failure the batch stays queued for a later
   * retry; on success the server's confirmed session doc is returned.
   */
  async flushStrokes(sessionId: string): Promise<SessionDoc | null> {
    if (this.queue.length === 0) return null;
    const batch = [...this.queue];
    const doc = await this.json<SessionDoc>("POST", `/sessions/${sessionId}/strokes`, {
      strokes: batch,
      writer_token: this.writerToken,
    });
    this.queue.splice(0, batch.length);
    return doc;
  }

  preview(sessionId: string): Promise<PreviewResult> {
    return this.json("POST", `/sessions/${sessionId}/preview`);
  }

  startComparison(sessionId: string): Promise<ShuffleTicket> {
    return this.json("POST", `/sessions/${sessionId}/comparison`, {
      start: true,
      writer_token: this.writerToken,
    });
  }

  submitComparison(
    sessionId: string,
    choice: "A" | "B",
    shuffleKey: string,
  ): Promise<VerdictResult> {
    return this.json("POST", `/sessions/${sessionId}/comparison`, {
      choice,
      shuffle_key: shuffleKey,
      writer_token: this.writerToken,
    });
  }
}
