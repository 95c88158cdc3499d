/** DOM glue: login page, per-stream tables with timeframe filter, live
 * charts. All data access goes through ApiClient; views re-render from
 * the models in table.ts / chart.ts. */

import { ApiClient, ApiError } from "./api.js";
import { drawChart, SeriesBuffers } from "./chart.js";
import { LiveFeed } from "./liveFeed.js";
import { apiToInputTime, buildTableModel, inputToApiTime } from "./table.js";
import { ALL_STREAMS, STREAM_VIEWS, type StreamId } from "./types.js";
import { debounce, ViewState } from "./viewState.js";

const API_BASE = (window as { PLANTPULSE_API?: string }).PLANTPULSE_API ?? "";
const PAGE_LIMIT = 50;

const state = new ViewState();
const api = new ApiClient(API_BASE);
api.onUnauthorized = () => {
  state.reset();
  location.hash = "#/login";
};

const root = document.getElementById("app") as HTMLElement;
let activeFeed: LiveFeed | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

function navBar(active: string): HTMLElement {
  const links = ALL_STREAMS.map((stream) =>
    el(
      "a",
      {
        href: `#/stream/${stream}`,
        class: active === stream ? "active" : "",
      },
      STREAM_VIEWS[stream].label,
    ),
  );
  links.push(el("a", { href: "#/live", class: active === "live" ? "active" : "" }, "Live Charts"));
  const logout = el("a", { href: "#/login" }, "Log out");
  logout.addEventListener("click", () => state.reset());
  return el("nav", {}, ...links, logout);
}

// -- login -------------------------------------------------------------------

function renderLogin(message = ""): void {
  stopFeed();
  const user = el("input", { id: "user", placeholder: "user id", autocomplete: "username" });
  const password = el("input", {
    id: "password", type: "password", placeholder: "password",
    autocomplete: "current-password",
  });
  const banner = el("div", { class: "banner", role: "alert" }, message);
  if (!message) banner.style.display = "none";
  const form = el("form", { class: "login" },
    el("h1", {}, "plantpulse"),
    banner, user, password,
    el("button", { type: "submit" }, "Log in"),
  );
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    try {
      await api.login(user.value, password.value);
      state.token = api.token;
      location.hash = "#/stream/esp32_energy";
    } catch (error) {
      const detail = error instanceof ApiError
        ? error.status === 429
          ? "too many attempts, wait a minute"
          : "invalid credentials"
        : "cannot reach the server";
      banner.textContent = detail;
      banner.style.display = "block";
    }
  });
  root.replaceChildren(form);
}

// -- table view ---------------------------------------------------------------

function renderTable(stream: StreamId): void {
  stopFeed();
  state.selectedStream = stream;
  const table = el("table");
  const status = el("div", { class: "status" });
  const fromInput = el("input", { type: "datetime-local", step: "1" });
  const toInput = el("input", { type: "datetime-local", step: "1" });
  const prev = el("button", {}, "Newest");
  const next = el("button", {}, "Older →");

  if (state.filterWindow) {
    fromInput.value = apiToInputTime(state.filterWindow.from);
    toInput.value = apiToInputTime(state.filterWindow.to);
  }

  let cursor: string | undefined;
  let shown = 0;

  async function load(reset: boolean): Promise<void> {
    if (reset) {
      cursor = undefined;
      shown = 0;
    }
    const window = state.filterWindow ?? {
      from: "1970-01-01 00:00:00",
      to: "2100-01-01 00:00:00",
    };
    try {
      const page = await api.range(stream, window, {
        limit: PAGE_LIMIT,
        order: "desc",
        cursor,
      });
      const model = buildTableModel(stream, page, shown);
      shown += model.rows.length;
      cursor = model.nextCursor ?? undefined;
      table.replaceChildren(
        el("tr", {}, ...model.columns.map((c) => el("th", {}, c))),
        ...model.rows.map((cells) =>
          el("tr", {}, ...cells.map((cell) => el("td", {}, cell))),
        ),
      );
      status.textContent = model.empty ?? `${model.total} rows in window`;
      next.toggleAttribute("disabled", model.nextCursor === null);
    } catch (error) {
      if (error instanceof ApiError) status.textContent = error.message;
    }
  }

  const applyWindow = debounce(() => {
    if (!fromInput.value || !toInput.value) return;
    try {
      state.setWindow({
        from: inputToApiTime(fromInput.value),
        to: inputToApiTime(toInput.value),
      });
    } catch {
      status.textContent = "start must be before end";
      return;
    }
    void load(true);
  }, 300);

  fromInput.addEventListener("input", applyWindow);
  toInput.addEventListener("input", applyWindow);
  prev.addEventListener("click", () => void load(true));
  next.addEventListener("click", () => void load(false));

  root.replaceChildren(
    navBar(stream),
    el("section", {},
      el("h2", {}, STREAM_VIEWS[stream].label),
      el("div", { class: "filters" },
        el("label", {}, "From ", fromInput),
        el("label", {}, "To ", toInput),
        prev, next,
      ),
      status, table,
    ),
  );
  void load(true);
}

// -- live charts ---------------------------------------------------------------

function stopFeed(): void {
  activeFeed?.stop();
  activeFeed = null;
}

function renderLive(): void {
  stopFeed();
  state.liveMode = true;
  const canvas = el("canvas", { width: "900", height: "360" });
  const status = el("div", { class: "status" }, "connecting…");
  const toggles = el("div", { class: "filters" });
  const buffers = new SeriesBuffers();

  for (const stream of ALL_STREAMS) {
    for (const field of STREAM_VIEWS[stream].fields) {
      const key = SeriesBuffers.seriesKey(stream, field);
      const box = el("input", { type: "checkbox", checked: "" }) as HTMLInputElement;
      box.addEventListener("change", () => buffers.toggle(key, box.checked));
      toggles.append(el("label", {}, box, ` ${key} `));
    }
  }

  const feed = new LiveFeed(api, ALL_STREAMS, {
    onSample: (sample) => buffers.apply(sample),
    onGap: () => buffers.markGap(),
    onStatus: (s) => {
      status.textContent = s === "live" ? "live" : `${s}…`;
    },
  });
  activeFeed = feed;
  void feed.run();

  const repaint = setInterval(() => {
    if (activeFeed !== feed) {
      clearInterval(repaint);
      return;
    }
    drawChart(canvas, buffers);
  }, 500);

  root.replaceChildren(
    navBar("live"),
    el("section", {}, el("h2", {}, "Live Trends"), status, toggles, canvas),
  );
}

// -- router ---------------------------------------------------------------------

function route(): void {
  const hash = location.hash || "#/login";
  if (!state.loggedIn && hash !== "#/login") {
    location.hash = "#/login";
    return;
  }
  if (hash === "#/login") {
    renderLogin();
    return;
  }
  if (hash === "#/live") {
    renderLive();
    return;
  }
  const match = hash.match(/^#\/stream\/(.+)$/);
  if (match && (ALL_STREAMS as string[]).includes(match[1] ?? "")) {
    renderTable(match[1] as StreamId);
    return;
  }
  location.hash = "#/login";
}

window.addEventListener("hashchange", route);
route();
