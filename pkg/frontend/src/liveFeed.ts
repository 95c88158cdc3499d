/** Reconnecting consumer of the live NDJSON endpoint.
 *
 * Lines with a "stream" key are samples; heartbeat lines keep the
 * connection warm and are surfaced separately. A dropped connection
 * reconnects with doubling backoff and reports a gap so the chart can
 * mark the discontinuity. */

import type { ApiClient } from "./api.js";
import type { LiveSample, StreamId } from "./types.js";

export interface LiveFeedHandlers {
  onSample: (sample: LiveSample) => void;
  onHeartbeat?: () => void;
  onGap?: () => void;
  onStatus?: (status: "connecting" | "live" | "retrying") => void;
}

export interface LiveFeedOptions {
  backoffInitialMs?: number;
  backoffCapMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Split a byte stream into complete newline-terminated lines. */
export class LineSplitter {
  private carry = "";
  private decoder = new TextDecoder();

  push(chunk: Uint8Array): string[] {
    this.carry += this.decoder.decode(chunk, { stream: true });
    const parts = this.carry.split("\n");
    this.carry = parts.pop() ?? "";
    return parts.filter((line) => line.length > 0);
  }
}

export function parseLiveLine(line: string): LiveSample | "heartbeat" | null {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch {
    return null;
  }
  if (parsed === null || typeof parsed !== "object") return null;
  const record = parsed as Record<string, unknown>;
  if ("heartbeat" in record) return "heartbeat";
  if (typeof record.stream === "string" && typeof record.seq === "number") {
    return record as unknown as LiveSample;
  }
  return null;
}

export class LiveFeed {
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private api: ApiClient,
    private streams: StreamId[],
    private handlers: LiveFeedHandlers,
    private options: LiveFeedOptions = {},
  ) {}

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  async run(): Promise<void> {
    const initial = this.options.backoffInitialMs ?? 500;
    const cap = this.options.backoffCapMs ?? 8000;
    const sleep = this.options.sleep ?? defaultSleep;
    let backoff = initial;
    let hadConnection = false;

    while (!this.stopped) {
      this.handlers.onStatus?.("connecting");
      try {
        const response = await this.api.openLive(this.streams);
        if (!response.body) throw new Error("live response has no body");
        if (hadConnection) this.handlers.onGap?.();
        hadConnection = true;
        backoff = initial;
        this.handlers.onStatus?.("live");
        await this.consume(response.body);
      } catch (error) {
        if (this.stopped) return;
      }
      if (this.stopped) return;
      this.handlers.onStatus?.("retrying");
      await sleep(backoff);
      backoff = Math.min(backoff * 2, cap);
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const splitter = new LineSplitter();
    const reader = body.getReader();
    try {
      while (!this.stopped) {
        const { done, value } = await reader.read();
        if (done) return;
        for (const line of splitter.push(value)) {
          const event = parseLiveLine(line);
          if (event === "heartbeat") this.handlers.onHeartbeat?.();
          else if (event !== null) this.handlers.onSample(event);
        }
      }
    } finally {
      reader.releaseLock();
    }
  }
}
