import type { GrayImage } from "./types.js";

/** Parse a binary P5 PGM (maxval 255) as served by the annotation service. */
export function parsePgm(bytes: Uint8Array): GrayImage {
  let pos = 0;
  const isSpace = (b: number) => b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;

  function token(): string {
    while (pos < bytes.length) {
      if (bytes[pos] === 0x23) {
        // comment runs to end of line
        while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
      } else if (isSpace(bytes[pos])) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos]) && bytes[pos] !== 0x23) pos++;
    if (start === pos) throw new Error("unexpected end of PGM header");
    return new TextDecoder().decode(bytes.subarray(start, pos));
  }

  if (token() !== "P5") throw new Error("not a binary PGM");
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0 && height > 0)) throw new Error("bad PGM dimensions");
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  pos += 1; // single whitespace after maxval
  const expected = width * height;
  if (bytes.length - pos < expected) throw new Error("truncated PGM payload");
  return { width, height, data: bytes.subarray(pos, pos + expected) };
}
