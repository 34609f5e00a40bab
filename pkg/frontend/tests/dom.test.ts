/** Mounts the page markup and boots the app against a stubbed service. */
import { readFileSync } from "node:fs";
import { join, resolve } from "node:path";
import { beforeEach, describe, expect, it, vi } from "vitest";

const HTML = readFileSync(
  join(resolve(__dirname, ".."), "src", "index.html"),
  "utf-8",
);

function mount(): void {
  const body = HTML.match(/<body>([\s\S]*)<\/body>/)![1]
    .replace(/<script[\s\S]*?<\/script>/g, "");
  document.body.innerHTML = body;
}

describe("page bootstrap", () => {
  beforeEach(() => {
    mount();
    vi.unstubAllGlobals();
  });

  it("shows the landing page with the video list when not resuming", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async (url: RequestInfo | URL) => {
        expect(String(url)).toContain("/videos");
        return new Response(
          JSON.stringify({ videos: [{ video_id: "clip-a" }, { video_id: "clip-b" }] }),
          { status: 200, headers: { "Content-Type": "application/json" } },
        );
      }),
    );
    await import("../src/main.js");
    await new Promise((r) => setTimeout(r, 20));
    const list = document.getElementById("video-list")!;
    expect(list.querySelectorAll("button")).toHaveLength(2);
    expect(list.textContent).toContain("clip-a");
    expect((document.getElementById("painter") as HTMLElement).hidden).toBe(true);
  });

  it("exposes the two-brush toolbar contract", () => {
    expect(document.getElementById("brush-coarse")).not.toBeNull();
    expect(document.getElementById("brush-fine")).not.toBeNull();
    expect(document.getElementById("wipe-slider")).not.toBeNull();
    expect(document.getElementById("submit-verdict")).not.toBeNull();
  });
});
