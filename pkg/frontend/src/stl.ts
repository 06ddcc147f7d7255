/** Binary/ASCII STL parsing into flat triangle positions for rendering. */

export interface ParsedStl {
  positions: Float32Array; // 9 floats per triangle
  triangleCount: number;
  bboxMin: [number, number, number];
  bboxMax: [number, number, number];
}

export function parseStl(buffer: ArrayBuffer): ParsedStl {
  const bytes = new Uint8Array(buffer);
  if (bytes.length >= 84) {
    const view = new DataView(buffer);
    const count = view.getUint32(80, true);
    if (84 + count * 50 === bytes.length) {
      return parseBinary(view, count);
    }
  }
  const head = new TextDecoder().decode(bytes.slice(0, 6)).trimStart();
  if (head.startsWith("solid")) {
    return parseAscii(new TextDecoder().decode(bytes));
  }
  throw new Error("bytes are neither binary nor ASCII STL");
}

function finalize(positions: Float32Array): ParsedStl {
  const bboxMin: [number, number, number] = [Infinity, Infinity, Infinity];
  const bboxMax: [number, number, number] = [-Infinity, -Infinity, -Infinity];
  for (let i = 0; i < positions.length; i += 3) {
    for (let axis = 0; axis < 3; axis++) {
      const v = positions[i + axis];
      if (v < bboxMin[axis]) bboxMin[axis] = v;
      if (v > bboxMax[axis]) bboxMax[axis] = v;
    }
  }
  return { positions, triangleCount: positions.length / 9, bboxMin, bboxMax };
}

function parseBinary(view: DataView, count: number): ParsedStl {
  const positions = new Float32Array(count * 9);
  for (let i = 0; i < count; i++) {
    const base = 84 + i * 50 + 12; // skip the normal
    for (let j = 0; j < 9; j++) {
      positions[i * 9 + j] = view.getFloat32(base + j * 4, true);
    }
  }
  return finalize(positions);
}

function parseAscii(text: string): ParsedStl {
  const coords: number[] = [];
  for (const line of text.split(/\r?\n/)) {
    const parts = line.trim().split(/\s+/);
    if (parts[0] === "vertex" && parts.length === 4) {
      coords.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    }
  }
  if (coords.length === 0 || coords.length % 9 !== 0) {
    throw new Error(`ASCII STL holds ${coords.length / 3} vertices (not a triangle multiple)`);
  }
  return finalize(new Float32Array(coords));
}
