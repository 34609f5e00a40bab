import type { GrayImage } from "./types.js";

/**
 * RGBA heatmap pixels for a confirmed importance map: transparent where
 * unpainted, warm ramp with alpha proportional to importance elsewhere.
 */
export function heatmapPixels(map: GrayImage): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(map.width * map.height * 4);
  for (let i = 0; i < map.data.length; i++) {
    const v = map.data[i];
    const o = i * 4;
    out[o] = 255;
    out[o + 1] = v > 127 ? 64 : 200;
    out[o + 2] = 0;
    out[o + 3] = v === 0 ? 0 : 40 + Math.round((v / 255) * 160);
  }
  return out;
}

/** RGBA pixels for a grayscale frame. */
export function grayPixels(frame: GrayImage): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(frame.width * frame.height * 4);
  for (let i = 0; i < frame.data.length; i++) {
    const v = frame.data[i];
    const o = i * 4;
    out[o] = v;
    out[o + 1] = v;
    out[o + 2] = v;
    out[o + 3] = 255;
  }
  return out;
}

/**
 * Per-pixel offset tint for the preview: negative offsets (more bits) tint
 * green, positive (fewer bits) tint red, scaled by magnitude.
 */
export function offsetPixels(
  offsets: number[][],
  width: number,
  height: number,
): Uint8ClampedArray<ArrayBuffer> {
  const rows = offsets.length;
  const cols = offsets[0]?.length ?? 0;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let y = 0; y < height; y++) {
    const r = Math.min(rows - 1, Math.floor((y / height) * rows));
    for (let x = 0; x < width; x++) {
      const c = Math.min(cols - 1, Math.floor((x / width) * cols));
      const d = offsets[r][c];
      const o = (y * width + x) * 4;
      out[o] = d > 0 ? 220 : 0;
      out[o + 1] = d < 0 ? 220 : 0;
      out[o + 2] = 0;
      out[o + 3] = Math.min(150, Math.abs(d) * 14);
    }
  }
  return out;
}
