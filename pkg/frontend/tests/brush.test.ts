import { describe, expect, it } from "vitest";
import { coverage, StrokeRecorder } from "../src/brush.js";
import { heatmapPixels } from "../src/overlay.js";
import { BRUSHES } from "../src/types.js";

describe("brush constants", () => {
  it("matches the tool contract", () => {
    expect(BRUSHES.coarse.widthPx).toBe(40);
    expect(BRUSHES.coarse.cap).toBe(127);
    expect(BRUSHES.fine.widthPx).toBe(20);
    expect(BRUSHES.fine.cap).toBe(255);
  });
});

describe("StrokeRecorder", () => {
  it("thins dense pointer samples", () => {
    const rec = new StrokeRecorder("coarse", 0, null, 4);
    for (let x = 0; x < 20; x += 1) rec.add(x, 0);
    expect(rec.size).toBe(5); // every 4px
  });

  it("produces a payload bound to the frame range", () => {
    const rec = new StrokeRecorder("fine", 3, 7);
    rec.add(10, 12);
    const payload = rec.finish("id-1");
    expect(payload).not.toBeNull();
    expect(payload!.brush).toBe("fine");
    expect(payload!.frame_start).toBe(3);
    expect(payload!.frame_end).toBe(7);
    expect(payload!.stroke_id).toBe("id-1");
    expect(payload!.path).toEqual([[10, 12]]);
  });

  it("yields null for an empty path", () => {
    expect(new StrokeRecorder("fine", 0).finish("id")).toBeNull();
  });
});

describe("coverage", () => {
  it("matches a direct count oracle on random maps", () => {
    let seed = 1234;
    const rand = () => (seed = (seed * 1103515245 + 12345) & 0x7fffffff) / 0x7fffffff;
    const w = 37;
    const h = 23;
    const data = new Uint8Array(w * h);
    for (let i = 0; i < data.length; i++) data[i] = Math.floor(rand() * 256);

    let painted = 0;
    let strong = 0;
    for (let i = 0; i < data.length; i++) {
      if (data[i] > 0) painted += 1;
      if (data[i] > 127) strong += 1;
    }
    const cov = coverage({ width: w, height: h, data });
    expect(cov.coarse).toBeCloseTo(painted / (w * h), 12);
    expect(cov.fine).toBeCloseTo(strong / (w * h), 12);
  });

  it("is zero on an untouched map", () => {
    const cov = coverage({ width: 4, height: 4, data: new Uint8Array(16) });
    expect(cov.coarse).toBe(0);
    expect(cov.fine).toBe(0);
  });
});

describe("heatmapPixels", () => {
  it("leaves unpainted pixels transparent and scales alpha with importance", () => {
    const img = { width: 3, height: 1, data: new Uint8Array([0, 128, 255]) };
    const px = heatmapPixels(img);
    expect(px[3]).toBe(0); // alpha of importance 0
    expect(px[7]).toBeGreaterThan(0);
    expect(px[11]).toBeGreaterThan(px[7]);
  });
});
