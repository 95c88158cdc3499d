/** Shared shapes for the monitor API payloads and the dashboard views. */

export type StreamId = "esp32_energy" | "industrial_energy" | "environment";

export interface StreamDescriptor {
  id: StreamId;
  fields: string[];
  units: Record<string, string>;
  count: number;
}

/** One table row from /latest or /range: "time" plus the stream's fields. */
export type SampleRow = { time: string } & Record<string, number | string>;

export interface RangePage {
  rows: SampleRow[];
  next_cursor: string | null;
  total: number;
}

export interface LiveSample {
  stream: StreamId;
  time: string;
  seq: number;
  ts_ms: number;
  fields: Record<string, number>;
}

export interface FilterWindow {
  from: string; // "YYYY-MM-DD HH:MM:SS"
  to: string;
}

/** Per-stream table layout: column headers and the field behind each. */
export const STREAM_VIEWS: Record<
  StreamId,
  { label: string; columns: string[]; fields: string[] }
> = {
  esp32_energy: {
    label: "ESP32 Energy Meter",
    columns: ["#", "Time", "Voltage", "Current"],
    fields: ["voltage", "current"],
  },
  industrial_energy: {
    label: "Industrial Energy Meter",
    columns: ["#", "Time", "Power"],
    fields: ["power_kw"],
  },
  environment: {
    label: "Environment Monitor",
    columns: ["#", "Time", "Temperature", "Humidity"],
    fields: ["temperature_c", "humidity_pct"],
  },
};

export const ALL_STREAMS = Object.keys(STREAM_VIEWS) as StreamId[];
