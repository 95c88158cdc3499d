/** Table building is a pure function of the API page payload, so the
 * snapshot tests pin the exact rendering of every stream's table. */

import { STREAM_VIEWS, type RangePage, type StreamId } from "./types.js";

export interface TableModel {
  columns: string[];
  /** Cell strings per row; numbers rendered verbatim (no rounding). */
  rows: string[][];
  empty: string | null;
  nextCursor: string | null;
  total: number;
}

export function buildTableModel(
  stream: StreamId,
  page: RangePage,
  startIndex = 0,
): TableModel {
  const view = STREAM_VIEWS[stream];
  const rows = page.rows.map((row, i) => [
    String(startIndex + i + 1),
    String(row.time),
    ...view.fields.map((field) => String(row[field])),
  ]);
  return {
    columns: view.columns,
    rows,
    empty: rows.length === 0 ? "no data in the selected timeframe" : null,
    nextCursor: page.next_cursor,
    total: page.total,
  };
}

/** "2021-07-11T16:24:05" (datetime-local input) -> API timestamp format. */
export function inputToApiTime(value: string): string {
  const normalized = value.length === 16 ? value + ":00" : value;
  return normalized.replace("T", " ");
}

export function apiToInputTime(value: string): string {
  return value.replace(" ", "T");
}
