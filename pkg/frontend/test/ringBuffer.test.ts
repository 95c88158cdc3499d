import { describe, expect, it } from "vitest";

import { RingBuffer } from "../src/ringBuffer.js";

describe("RingBuffer", () => {
  it("keeps insertion order below capacity", () => {
    const buf = new RingBuffer<number>(5);
    [1, 2, 3].forEach((n) => buf.push(n));
    expect(buf.toArray()).toEqual([1, 2, 3]);
    expect(buf.size).toBe(3);
    expect(buf.last()).toBe(3);
  });

  it("evicts the oldest entry at capacity", () => {
    const buf = new RingBuffer<number>(3);
    [1, 2, 3, 4, 5].forEach((n) => buf.push(n));
    expect(buf.toArray()).toEqual([3, 4, 5]);
    expect(buf.size).toBe(3);
  });

  it("never exceeds 300 under sustained pushes", () => {
    const buf = new RingBuffer<number>(300);
    for (let i = 0; i < 1000; i++) buf.push(i);
    expect(buf.size).toBe(300);
    expect(buf.toArray()[0]).toBe(700);
    expect(buf.last()).toBe(999);
  });

  it("clears", () => {
    const buf = new RingBuffer<number>(2);
    buf.push(1);
    buf.clear();
    expect(buf.size).toBe(0);
    expect(buf.last()).toBeUndefined();
  });

  it("rejects nonsense capacity", () => {
    expect(() => new RingBuffer(0)).toThrow();
  });
});
