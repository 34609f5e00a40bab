import { BRUSHES, type BrushName, type GrayImage, type StrokePayload } from "./types.js";

/**
 * Collects pointer samples into a stroke payload. Points are recorded in map
 * coordinates; the canvas layer converts from screen space before feeding
 * points in. Importance values are never computed here - the server applies
 * the dabs and reports back the confirmed map.
 */
export class StrokeRecorder {
  private path: [number, number][] = [];

  constructor(
    readonly brush: BrushName,
    readonly frameStart: number,
    readonly frameEnd: number | null = null,
    private readonly minSpacingPx = 4,
  ) {}

  add(x: number, y: number): void {
    const last = this.path[this.path.length - 1];
    if (last) {
      const dx = x - last[0];
      const dy = y - last[1];
      if (dx * dx + dy * dy < this.minSpacingPx * this.minSpacingPx) return;
    }
    this.path.push([x, y]);
  }

  get size(): number {
    return this.path.length;
  }

  finish(strokeId: string): StrokePayload | null {
    if (this.path.length === 0) return null;
    return {
      stroke_id: strokeId,
      brush: this.brush,
      path: this.path,
      frame_start: this.frameStart,
      frame_end: this.frameEnd,
    };
  }
}

/** Fraction of pixels painted at all (coarse) and above half scale (fine). */
export function coverage(map: GrayImage): { coarse: number; fine: number } {
  let painted = 0;
  let strong = 0;
  for (const v of map.data) {
    if (v > 0) painted++;
    if (v > 127) strong++;
  }
  const total = map.width * map.height;
  return { coarse: painted / total, fine: strong / total };
}

export function brushCursorRadius(name: BrushName): number {
  return BRUSHES[name].widthPx / 2;
}
