import { describe, expect, it } from "vitest";

import { parseStl } from "../src/stl.js";
import { makeCubeStlBuffer } from "../src/mock/mockService.js";
import { geometryFromStl } from "../src/viewer.js";

const ASCII_TRIANGLE = `solid tri
  facet normal 0 0 1
    outer loop
      vertex 0 0 0
      vertex 1 0 0
      vertex 0 1 0
    endloop
  endfacet
endsolid tri
`;

describe("parseStl", () => {
  it("parses the binary cube", () => {
    const parsed = parseStl(makeCubeStlBuffer(10));
    expect(parsed.triangleCount).toBe(12);
    expect(parsed.bboxMin).toEqual([0, 0, 0]);
    expect(parsed.bboxMax).toEqual([10, 10, 10]);
    expect(parsed.positions).toHaveLength(12 * 9);
  });

  it("parses ASCII", () => {
    const parsed = parseStl(new TextEncoder().encode(ASCII_TRIANGLE).buffer as ArrayBuffer);
    expect(parsed.triangleCount).toBe(1);
    expect(parsed.bboxMax).toEqual([1, 1, 0]);
  });

  it("rejects garbage", () => {
    expect(() => parseStl(new Uint8Array([1, 2, 3]).buffer as ArrayBuffer)).toThrow(/neither/);
  });

  it("rejects truncated binary", () => {
    const cube = new Uint8Array(makeCubeStlBuffer(1));
    const truncated = cube.slice(0, cube.length - 13);
    expect(() => parseStl(truncated.buffer as ArrayBuffer)).toThrow();
  });
});

describe("geometryFromStl", () => {
  it("builds renderable geometry headlessly", () => {
    const geometry = geometryFromStl(parseStl(makeCubeStlBuffer(2)));
    const position = geometry.getAttribute("position");
    expect(position.count).toBe(36); // 12 triangles x 3 vertices
    expect(geometry.getAttribute("normal")).toBeDefined();
  });
});
