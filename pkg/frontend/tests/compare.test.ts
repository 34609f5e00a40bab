import { afterEach, describe, expect, it, vi } from "vitest";
import { ApiClient } from "../src/api.js";
import { ComparisonController } from "../src/compare.js";

afterEach(() => {
  vi.unstubAllGlobals();
});

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ComparisonController", () => {
  it("never submits from the slider alone; a side must be committed", async () => {
    vi.stubGlobal("fetch", async () =>
      jsonResponse({ shuffle_key: "k1", sides: ["A", "B"], state: "comparing" }),
    );
    const gate = new ComparisonController(new ApiClient("http://s"), "sid");
    await gate.start();

    gate.setSlider(0.5); // wandering the wipe slider is not a decision
    gate.setSlider(0.1);
    expect(gate.canSubmit).toBe(false);
    await expect(gate.submit()).rejects.toThrow(/no side chosen/);

    gate.choose("B");
    expect(gate.canSubmit).toBe(true);
  });

  it("clamps the slider to [0, 1]", () => {
    const gate = new ComparisonController(new ApiClient("http://s"), "sid");
    gate.setSlider(-3);
    expect(gate.sliderPosition).toBe(0);
    gate.setSlider(42);
    expect(gate.sliderPosition).toBe(1);
  });

  it("submits the committed side with the shuffle key", async () => {
    const bodies: unknown[] = [];
    vi.stubGlobal("fetch", async (url: RequestInfo | URL, init?: RequestInit) => {
      if (String(url).endsWith("/comparison") && init?.body) {
        const payload = JSON.parse(String(init.body));
        bodies.push(payload);
        if (payload.start) {
          return jsonResponse({ shuffle_key: "k9", sides: ["A", "B"], state: "comparing" });
        }
        return jsonResponse({ state: "accepted", accepted: true });
      }
      throw new Error("unexpected request");
    });
    const gate = new ComparisonController(new ApiClient("http://s"), "sid");
    await gate.start();
    gate.choose("A");
    const verdict = await gate.submit();
    expect(verdict.accepted).toBe(true);
    expect(bodies[1]).toMatchObject({ choice: "A", shuffle_key: "k9" });
  });
});
