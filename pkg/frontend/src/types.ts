export type BrushName = "coarse" | "fine";

export interface BrushSpec {
  name: BrushName;
  widthPx: number;
  cap: number;
}

/** The two brushes the tool offers; the server enforces the caps. */
export const BRUSHES: Record<BrushName, BrushSpec> = {
  coarse: { name: "coarse", widthPx: 40, cap: 127 },
  fine: { name: "fine", widthPx: 20, cap: 255 },
};

export interface StrokePayload {
  stroke_id: string;
  brush: BrushName;
  path: [number, number][];
  frame_start: number;
  frame_end: number | null;
}

export interface SessionDoc {
  session_id: string;
  annotator: string;
  video_id: string;
  state: "painting" | "comparing" | "accepted" | "rejected";
  map_height: number;
  map_width: number;
  frame_count: number;
  coverage_coarse: number;
  coverage_fine: number;
  stroke_count: number;
  resume_url: string;
  writer_active?: boolean;
  /** present only on open/resume responses */
  read_only?: boolean;
  /** the write lease; absent when another window holds the session */
  writer_token?: string;
}

export interface PreviewResult {
  frame_count: number;
  offsets: number[][][];
  ratio: number;
  real_ratio: number;
  clamp_count: number;
  encoded_path?: string;
}

export interface ShuffleTicket {
  shuffle_key: string;
  sides: ["A", "B"];
  state: "comparing";
}

export interface VerdictResult {
  state: "accepted" | "rejected";
  accepted: boolean;
}

export interface GrayImage {
  width: number;
  height: number;
  data: Uint8Array;
}
