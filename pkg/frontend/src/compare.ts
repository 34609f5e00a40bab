import type { ApiClient } from "./api.js";
import { ApiError } from "./api.js";
import type { VerdictResult } from "./types.js";

/**
 * The accept-gate comparison: the server shuffles which side carries the
 * re-encoded video, the annotator inspects both under a wipe slider and must
 * commit to one side. A verdict is only submitted for a committed side; the
 * slider position itself never submits. A stale shuffle key (the server
 * re-shuffled, e.g. after a reload) is refreshed transparently once.
 */
export class ComparisonController {
  shuffleKey: string | null = null;
  sliderPosition = 0.5;
  chosenSide: "A" | "B" | null = null;
  verdict: VerdictResult | null = null;

  constructor(private readonly api: ApiClient, private readonly sessionId: string) {}

  async start(): Promise<void> {
    const ticket = await this.api.startComparison(this.sessionId);
    this.shuffleKey = ticket.shuffle_key;
    this.chosenSide = null;
    this.verdict = null;
  }

  setSlider(position: number): void {
    this.sliderPosition = Math.min(1, Math.max(0, position));
  }

  choose(side: "A" | "B"): void {
    this.chosenSide = side;
  }

  /** True when a verdict may be submitted; the slider midpoint alone never is. */
  get canSubmit(): boolean {
    return this.chosenSide !== null && this.shuffleKey !== null;
  }

  async submit(): Promise<VerdictResult> {
    if (!this.canSubmit || !this.chosenSide || !this.shuffleKey) {
      throw new Error("no side chosen");
    }
    try {
      this.verdict = await this.api.submitComparison(
        this.sessionId,
        this.chosenSide,
        this.shuffleKey,
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        // stale shuffle key: fetch a fresh assignment and let the annotator
        // confirm again under the new shuffle
        await this.start();
        throw new StaleShuffleError();
      }
      throw err;
    }
    return this.verdict;
  }
}

export class StaleShuffleError extends Error {
  constructor() {
    super("the comparison was re-shuffled; please pick a side again");
  }
}
