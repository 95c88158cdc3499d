/** Rolling line chart over ring-buffered series, drawn on a canvas.
 *
 * Each (stream, field) pair is one series capped at CHART_CAPACITY points;
 * a reconnect gap inserts a break so the line is not drawn across missing
 * data. Series can be toggled without losing their buffers. */

import { RingBuffer } from "./ringBuffer.js";
import { STREAM_VIEWS, type LiveSample, type StreamId } from "./types.js";

export const CHART_CAPACITY = 300;

export interface ChartPoint {
  t: number; // epoch millis
  value: number;
  gap: boolean; // true: break the line before this point
}

const PALETTE = ["#2f81f7", "#e5534b", "#57ab5a", "#c69026", "#986ee2", "#3192aa"];

export class SeriesBuffers {
  readonly series = new Map<string, RingBuffer<ChartPoint>>();
  private enabled = new Map<string, boolean>();
  private pendingGap = new Set<string>();

  static seriesKey(stream: StreamId, field: string): string {
    return `${stream}.${field}`;
  }

  private buffer(key: string): RingBuffer<ChartPoint> {
    let buf = this.series.get(key);
    if (!buf) {
      buf = new RingBuffer<ChartPoint>(CHART_CAPACITY);
      this.series.set(key, buf);
      this.enabled.set(key, true);
    }
    return buf;
  }

  apply(sample: LiveSample): void {
    for (const field of STREAM_VIEWS[sample.stream].fields) {
      const value = sample.fields[field];
      if (typeof value !== "number") continue;
      const key = SeriesBuffers.seriesKey(sample.stream, field);
      const gap = this.pendingGap.delete(key);
      this.buffer(key).push({ t: sample.ts_ms, value, gap });
    }
  }

  /** Mark every known series so its next point starts a new line segment. */
  markGap(): void {
    for (const key of this.series.keys()) this.pendingGap.add(key);
  }

  toggle(key: string, on: boolean): void {
    this.enabled.set(key, on);
  }

  isEnabled(key: string): boolean {
    return this.enabled.get(key) ?? true;
  }

  enabledSeries(): [string, ChartPoint[]][] {
    const out: [string, ChartPoint[]][] = [];
    for (const [key, buf] of this.series) {
      if (this.isEnabled(key)) out.push([key, buf.toArray()]);
    }
    return out;
  }
}

/** Minimal dependency-free renderer: one normalized line per series over a
 * rolling time window, newest data at the right edge. */
export function drawChart(
  canvas: HTMLCanvasElement,
  buffers: SeriesBuffers,
  windowMs = 5 * 60 * 1000,
  now = Date.now(),
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.font = "11px sans-serif";

  const t0 = now - windowMs;
  const seriesList = buffers.enabledSeries();
  let colorIndex = 0;
  let legendY = 14;

  for (const [key, points] of seriesList) {
    const visible = points.filter((p) => p.t >= t0);
    const color = PALETTE[colorIndex % PALETTE.length] ?? "#888";
    colorIndex += 1;
    if (visible.length === 0) continue;

    let lo = Infinity;
    let hi = -Infinity;
    for (const p of visible) {
      lo = Math.min(lo, p.value);
      hi = Math.max(hi, p.value);
    }
    if (hi === lo) {
      hi += 0.5;
      lo -= 0.5;
    }

    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    let penDown = false;
    for (const p of visible) {
      const x = ((p.t - t0) / windowMs) * width;
      const y = height - ((p.value - lo) / (hi - lo)) * (height - 24) - 12;
      if (p.gap || !penDown) {
        ctx.moveTo(x, y);
        penDown = true;
      } else {
        ctx.lineTo(x, y);
      }
    }
    ctx.stroke();

    const lastPoint = visible[visible.length - 1];
    ctx.fillStyle = color;
    ctx.fillText(`${key} = ${lastPoint ? lastPoint.value : ""}`, 8, legendY);
    legendY += 14;
  }
}
