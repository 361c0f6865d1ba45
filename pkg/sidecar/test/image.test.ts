import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { afterAll, describe, expect, it } from "vitest";

import { estimateAlignment } from "../src/geometry";
import {
  ImageFormatError,
  RgbImage,
  readPpm,
  sampleBilinear,
  toGray,
  warpCrop,
  writePpm,
} from "../src/image";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "sidecar-image-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function noiseImage(width: number, height: number, seedStep: number): RgbImage {
  const data = new Uint8Array(width * height * 3);
  for (let i = 0; i < data.length; i++) data[i] = (i * seedStep + 11) % 256;
  return { width, height, data };
}

describe("ppm", () => {
  it("round-trips pixels exactly", () => {
    const image = noiseImage(37, 23, 97);
    const file = path.join(tmp, "roundtrip.ppm");
    writePpm(file, image);
    const back = readPpm(file);
    expect(back.width).toBe(37);
    expect(back.height).toBe(23);
    expect(Buffer.from(back.data).equals(Buffer.from(image.data))).toBe(true);
  });

  it("tolerates header comments", () => {
    const file = path.join(tmp, "comments.ppm");
    const body = Buffer.from([10, 20, 30, 40, 50, 60]);
    fs.writeFileSync(
      file,
      Buffer.concat([Buffer.from("P6\n# made by hand\n2 1\n# another\n255\n", "ascii"), body]),
    );
    const image = readPpm(file);
    expect(image.width).toBe(2);
    expect(image.height).toBe(1);
    expect(Array.from(image.data)).toEqual([10, 20, 30, 40, 50, 60]);
  });

  it("rejects non-P6 files and truncated data", () => {
    const bad = path.join(tmp, "bad.ppm");
    fs.writeFileSync(bad, "P3\n1 1\n255\n0 0 0\n");
    expect(() => readPpm(bad)).toThrow(ImageFormatError);
    const short = path.join(tmp, "short.ppm");
    fs.writeFileSync(short, Buffer.from("P6\n4 4\n255\nxy", "ascii"));
    expect(() => readPpm(short)).toThrow(ImageFormatError);
  });
});

describe("toGray", () => {
  it("uses the BT.601 luminance weights", () => {
    const image: RgbImage = { width: 1, height: 1, data: new Uint8Array([255, 0, 0]) };
    expect(toGray(image).data[0]).toBeCloseTo(0.299, 9);
    image.data.set([0, 255, 0]);
    expect(toGray(image).data[0]).toBeCloseTo(0.587, 9);
    image.data.set([0, 0, 255]);
    expect(toGray(image).data[0]).toBeCloseTo(0.114, 9);
  });
});

describe("sampling and warping", () => {
  it("interpolates between pixel centers", () => {
    const gray = { width: 2, height: 1, data: new Float64Array([0, 1]) };
    const flags = { outOfBounds: false };
    expect(sampleBilinear(gray, 0.5, 0, flags)).toBeCloseTo(0.5, 9);
    expect(flags.outOfBounds).toBe(false);
  });

  it("flags out-of-bounds reads and replicates the border", () => {
    const gray = { width: 2, height: 2, data: new Float64Array([1, 2, 3, 4]) };
    const flags = { outOfBounds: false };
    expect(sampleBilinear(gray, -5, 0, flags)).toBeCloseTo(1, 9);
    expect(flags.outOfBounds).toBe(true);
  });

  it("leaves pixels unchanged under the identity transform", () => {
    const size = 16;
    const data = new Float64Array(size * size);
    for (let i = 0; i < data.length; i++) data[i] = ((i * 31) % 97) / 97;
    const gray = { width: size, height: size, data };
    const square: [number, number][] = [
      [0, 0],
      [size - 1, 0],
      [size - 1, size - 1],
      [0, size - 1],
    ];
    const identity = estimateAlignment(square, square);
    const { crop, outOfBounds } = warpCrop(gray, identity, size);
    expect(outOfBounds).toBe(false);
    for (let i = 0; i < data.length; i++) {
      expect(crop.data[i]).toBeCloseTo(data[i], 9);
    }
  });
});
