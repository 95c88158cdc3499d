/** Thin typed client for the monitor API. Every route the dashboard can
 * touch is built here, and only here, behind allow-listed helpers. */

import type { FilterWindow, RangePage, SampleRow, StreamDescriptor, StreamId } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class MissingToken extends Error {
  constructor() {
    super("not logged in");
  }
}

async function errorOf(response: Response): Promise<ApiError> {
  let message = `request failed with ${response.status}`;
  try {
    const body = await response.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the status message
  }
  return new ApiError(response.status, message);
}

export class ApiClient {
  token: string | null = null;
  /** Called once when any authenticated request comes back 401
   * (expired or revoked session). */
  onUnauthorized: (() => void) | null = null;

  constructor(
    public baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async authed(path: string, init?: RequestInit): Promise<Response> {
    if (!this.token) throw new MissingToken();
    const response = await this.fetchFn(this.baseUrl + path, {
      ...init,
      headers: { ...(init?.headers ?? {}), Authorization: `Bearer ${this.token}` },
    });
    if (response.status === 401) {
      this.token = null;
      this.onUnauthorized?.();
      throw await errorOf(response);
    }
    if (!response.ok && response.status !== 204) throw await errorOf(response);
    return response;
  }

  async login(user: string, password: string): Promise<void> {
    const response = await this.fetchFn(this.baseUrl + "/api/login", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ user, password }),
    });
    if (!response.ok) throw await errorOf(response);
    const body = await response.json();
    this.token = body.token;
  }

  async streams(): Promise<StreamDescriptor[]> {
    const response = await this.authed("/api/streams");
    return (await response.json()).streams;
  }

  async latest(stream: StreamId): Promise<SampleRow | null> {
    const response = await this.authed(`/api/streams/${stream}/latest`);
    if (response.status === 204) return null;
    return await response.json();
  }

  async range(
    stream: StreamId,
    window: FilterWindow,
    options: { limit?: number; order?: "asc" | "desc"; cursor?: string } = {},
  ): Promise<RangePage> {
    const params = new URLSearchParams({ from: window.from, to: window.to });
    if (options.limit !== undefined) params.set("limit", String(options.limit));
    if (options.order) params.set("order", options.order);
    if (options.cursor) params.set("cursor", options.cursor);
    const response = await this.authed(`/api/streams/${stream}/range?${params}`);
    return await response.json();
  }

  /** Open the live NDJSON feed; the caller consumes response.body. */
  async openLive(streams: StreamId[]): Promise<Response> {
    const params = streams.length ? `?streams=${streams.join(",")}` : "";
    return await this.authed(`/api/live${params}`);
  }

  async health(): Promise<{ status: string }> {
    const response = await this.fetchFn(this.baseUrl + "/healthz");
    if (!response.ok) throw await errorOf(response);
    return await response.json();
  }
}
