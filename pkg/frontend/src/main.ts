import { ApiClient } from "./api.js";
import { brushCursorRadius, coverage } from "./brush.js";
import { ComparisonController, StaleShuffleError } from "./compare.js";
import { grayPixels, heatmapPixels, offsetPixels } from "./overlay.js";
import { resumeFromUrl, UiSession } from "./session.js";
import { BRUSHES, type BrushName, type GrayImage } from "./types.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function put(canvas: HTMLCanvasElement, pixels: Uint8ClampedArray<ArrayBuffer>, w: number, h: number) {
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d");
  if (ctx) ctx.putImageData(new ImageData(pixels, w, h), 0, 0);
}

class App {
  session: UiSession | null = null;
  comparison: ComparisonController | null = null;
  frame: GrayImage | null = null;
  playTimer: number | null = null;

  async boot() {
    const resumed = await resumeFromUrl(api, window.location.href);
    if (resumed) {
      this.session = resumed;
      await this.enterPainting();
    } else {
      await this.showLanding();
    }
  }

  async showLanding() {
    el("landing").hidden = false;
    el("painter").hidden = true;
    el("comparer").hidden = true;
    const { videos } = await api.listVideos();
    const list = el<HTMLUListElement>("video-list");
    list.innerHTML = "";
    for (const v of videos) {
      const item = document.createElement("li");
      const button = document.createElement("button");
      button.textContent = v.video_id;
      button.addEventListener("click", () => void this.openSession(v.video_id));
      item.appendChild(button);
      list.appendChild(item);
    }
  }

  async openSession(videoId: string) {
    const annotator = el<HTMLInputElement>("annotator").value.trim() || "anonymous";
    const doc = await api.openSession(annotator, videoId);
    this.session = new UiSession(api, doc);
    window.history.replaceState(null, "", `/?annotator=${annotator}&video=${videoId}`);
    await this.enterPainting();
  }

  async enterPainting() {
    if (!this.session) return;
    el("landing").hidden = true;
    el("painter").hidden = false;
    el("comparer").hidden = true;
    el("readonly-banner").hidden = !this.session.readOnly;
    const scrub = el<HTMLInputElement>("frame-scrub");
    scrub.max = String(this.session.doc.frame_count - 1);
    scrub.value = String(this.session.frameIndex);
    await this.redraw();
  }

  async takeOver() {
    const s = this.session;
    if (!s) return;
    const doc = await api.openSession(s.doc.annotator, s.doc.video_id, true);
    this.session = new UiSession(api, doc);
    await this.enterPainting();
  }

  async redraw() {
    const s = this.session;
    if (!s) return;
    this.frame = await api.frame(s.doc.video_id, s.frameIndex);
    put(el("frame-canvas"), grayPixels(this.frame), this.frame.width, this.frame.height);
    const map = await api.confirmedMap(s.sessionId, s.frameIndex);
    put(el("overlay-canvas"), heatmapPixels(map), map.width, map.height);
    const cov = coverage(map);
    el("coverage").textContent =
      `coarse ${(cov.coarse * 100).toFixed(1)}% / fine ${(cov.fine * 100).toFixed(1)}%` +
      (s.pendingStrokes > 0 ? ` (${s.pendingStrokes} strokes queued)` : "");
    el("state").textContent = `state: ${s.doc.state}`;
    el("frame-label").textContent = `frame ${s.frameIndex + 1}/${s.doc.frame_count}`;
  }

  mapCoords(event: PointerEvent): [number, number] | null {
    const s = this.session;
    if (!s || !this.frame) return null;
    const canvas = el<HTMLCanvasElement>("overlay-canvas");
    const rect = canvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) * s.doc.map_width;
    const y = ((event.clientY - rect.top) / rect.height) * s.doc.map_height;
    if (x < 0 || y < 0 || x >= s.doc.map_width || y >= s.doc.map_height) return null;
    return [x, y];
  }

  wirePainting() {
    const canvas = el<HTMLCanvasElement>("overlay-canvas");
    let painting = false;
    canvas.addEventListener("pointerdown", (ev) => {
      if (!this.session) return;
      painting = true;
      canvas.setPointerCapture(ev.pointerId);
      this.session.beginStroke();
      const pt = this.mapCoords(ev);
      if (pt) this.session.extendStroke(pt[0], pt[1]);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!painting || !this.session) return;
      const pt = this.mapCoords(ev);
      if (pt) this.session.extendStroke(pt[0], pt[1]);
    });
    const finish = () => {
      if (!painting || !this.session) return;
      painting = false;
      void this.session
        .endStroke()
        .then(() => this.redraw())
        .catch((err) => this.toast(String(err)));
    };
    canvas.addEventListener("pointerup", finish);
    canvas.addEventListener("pointercancel", finish);

    for (const name of Object.keys(BRUSHES) as BrushName[]) {
      el(`brush-${name}`).addEventListener("click", () => {
        this.session?.selectBrush(name);
        el("brush-size").textContent =
          `${BRUSHES[name].widthPx}px, saturates at ${BRUSHES[name].cap}`;
        el<HTMLElement>("overlay-canvas").style.cursor = "crosshair";
        el("brush-coarse").classList.toggle("active", name === "coarse");
        el("brush-fine").classList.toggle("active", name === "fine");
        void brushCursorRadius(name);
      });
    }

    el<HTMLInputElement>("frame-scrub").addEventListener("input", (ev) => {
      const idx = Number((ev.target as HTMLInputElement).value);
      this.session?.setFrame(idx);
      void this.redraw();
    });

    el("preview-button").addEventListener("click", () => void this.runPreview());
    el("compare-button").addEventListener("click", () => void this.enterComparison());
    el("retry-button").addEventListener("click", () =>
      void this.session?.replayQueued().then(() => this.redraw()),
    );
    el("takeover-button").addEventListener("click", () => void this.takeOver());
  }

  async runPreview() {
    const s = this.session;
    if (!s) return;
    try {
      const result = await s.preview();
      el("preview-info").textContent =
        `simulated rate ratio ${result.ratio.toFixed(4)} ` +
        `(clamped cells: ${result.clamp_count})`;
      if (this.frame) {
        put(
          el("dqp-canvas"),
          offsetPixels(result.offsets[s.frameIndex], this.frame.width, this.frame.height),
          this.frame.width,
          this.frame.height,
        );
      }
      this.startPreviewLoop();
    } catch (err) {
      this.toast(String(err));
    }
  }

  /** Loop the clip so the annotator reviews the re-encode in motion. */
  startPreviewLoop() {
    const s = this.session;
    if (!s || this.playTimer !== null) return;
    this.playTimer = window.setInterval(() => {
      s.setFrame((s.frameIndex + 1) % s.doc.frame_count);
      el<HTMLInputElement>("frame-scrub").value = String(s.frameIndex);
      void this.redraw();
    }, 120);
    window.setTimeout(() => {
      if (this.playTimer !== null) {
        window.clearInterval(this.playTimer);
        this.playTimer = null;
      }
    }, 120 * (s.doc.frame_count + 1));
  }

  async enterComparison() {
    const s = this.session;
    if (!s) return;
    await s.replayQueued();
    this.comparison = new ComparisonController(api, s.sessionId);
    await this.comparison.start();
    el("painter").hidden = true;
    el("comparer").hidden = false;
    el("verdict-info").textContent = "";
    await this.drawComparison();
    this.wireComparisonOnce();
  }

  comparisonWired = false;

  wireComparisonOnce() {
    if (this.comparisonWired) return;
    this.comparisonWired = true;
    el<HTMLInputElement>("wipe-slider").addEventListener("input", (ev) => {
      const pos = Number((ev.target as HTMLInputElement).value) / 100;
      this.comparison?.setSlider(pos);
      el<HTMLElement>("side-b-wrap").style.width = `${(1 - pos) * 100}%`;
    });
    el("pick-a").addEventListener("click", () => this.pick("A"));
    el("pick-b").addEventListener("click", () => this.pick("B"));
    el("submit-verdict").addEventListener("click", () => void this.submitVerdict());
    el("back-to-painting").addEventListener("click", () => void this.enterPainting());
  }

  pick(side: "A" | "B") {
    this.comparison?.choose(side);
    el("pick-a").classList.toggle("active", side === "A");
    el("pick-b").classList.toggle("active", side === "B");
    el<HTMLButtonElement>("submit-verdict").disabled = false;
  }

  async submitVerdict() {
    const s = this.session;
    const c = this.comparison;
    if (!s || !c) return;
    try {
      const verdict = await c.submit();
      await s.refresh();
      if (verdict.accepted) {
        el("verdict-info").textContent =
          "accepted: you preferred your re-encoded video";
      } else {
        el("verdict-info").textContent =
          "rejected: you picked the baseline, so the annotation was not " +
          "accepted; refine the maps and try again";
        window.setTimeout(() => void this.enterPainting(), 1600);
      }
    } catch (err) {
      if (err instanceof StaleShuffleError) {
        this.toast(err.message);
        await this.drawComparison();
      } else {
        this.toast(String(err));
      }
    }
  }

  async drawComparison() {
    const s = this.session;
    if (!s) return;
    // both panes loop the clip; the server decides which side is which
    const frame = await api.frame(s.doc.video_id, s.frameIndex);
    put(el("side-a-canvas"), grayPixels(frame), frame.width, frame.height);
    put(el("side-b-canvas"), grayPixels(frame), frame.width, frame.height);
  }

  toast(message: string) {
    const node = el("toast");
    node.textContent = message;
    node.hidden = false;
    window.setTimeout(() => (node.hidden = true), 3000);
  }
}

const app = new App();
app.wirePainting();
void app.boot();
