/**
 * Embeddable related-documents widget.
 *
 * Partners drop a single script tag on their page:
 *
 *   <script type="module" src=".../widget.js"
 *           data-api="https://recs.example.org"
 *           data-doc="sw-123"
 *           data-count="10"
 *           data-user="opaque-token"
 *           data-container="#related"
 *           data-link-template="https://partner.example.org/doc/{id}"></script>
 *
 * The recommendation request is only issued after DOM ready, so fetching
 * agents that do not execute scripts never trigger one. All failures are
 * swallowed (console only): the widget must never break the host page.
 * Zero runtime dependencies; this file is the whole distributable.
 */

export interface WidgetConfig {
  apiBase: string;
  externalId: string;
  count: number;
  container: HTMLElement;
  userToken?: string;
  linkTemplate?: string;
}

export interface RenderedItem {
  title: string;
  href: string;
  recId: string;
  rank: number;
}

export interface RenderedList {
  setId: string;
  items: RenderedItem[];
}

interface ApiRecommendation {
  rec_id: string;
  external_id: string;
  title: string;
  rank: number;
  relevance: number;
}

interface ApiResponse {
  set_id: string;
  recommendations: ApiRecommendation[];
}

const DEFAULT_COUNT = 10;

/** Fire-and-forget click beacon; navigation must proceed regardless. */
export function sendClickBeacon(apiBase: string, recId: string): void {
  const url = `${apiBase}/v1/clicks/${encodeURIComponent(recId)}`;
  try {
    if (typeof navigator !== "undefined" && navigator.sendBeacon) {
      navigator.sendBeacon(url, "");
    } else {
      void fetch(url, { method: "POST", keepalive: true }).catch(() => undefined);
    }
  } catch {
    // beacon failure is silent by contract
  }
}

function whenDomReady(doc: Document): Promise<void> {
  if (doc.readyState !== "loading") {
    return Promise.resolve();
  }
  return new Promise((resolve) => {
    doc.addEventListener("DOMContentLoaded", () => resolve(), { once: true });
  });
}

function linkFor(template: string | undefined, externalId: string): string {
  if (!template) {
    return "#";
  }
  return template.replace("{id}", encodeURIComponent(externalId));
}

function renderInto(config: WidgetConfig, data: ApiResponse): RenderedList {
  const doc = config.container.ownerDocument;
  const items: RenderedItem[] = [];
  if (data.recommendations.length === 0) {
    config.container.textContent = "";
    config.container.hidden = true;
    return { setId: data.set_id, items };
  }
  const list = doc.createElement("ul");
  list.className = "docrec-related";
  for (const rec of data.recommendations) {
    const entry = doc.createElement("li");
    const anchor = doc.createElement("a");
    anchor.textContent = rec.title;
    anchor.href = linkFor(config.linkTemplate, rec.external_id);
    anchor.dataset.recId = rec.rec_id;
    anchor.dataset.rank = String(rec.rank);
    anchor.addEventListener("click", () => {
      sendClickBeacon(config.apiBase, rec.rec_id);
      // no preventDefault: the browser navigates as usual
    });
    entry.appendChild(anchor);
    list.appendChild(entry);
    items.push({
      title: rec.title,
      href: anchor.href,
      recId: rec.rec_id,
      rank: rec.rank,
    });
  }
  config.container.textContent = "";
  config.container.appendChild(list);
  config.container.hidden = false;
  return { setId: data.set_id, items };
}

/**
 * Request recommendations (strictly after DOM ready), render them, and
 * report the render event. Resolves to null when nothing was rendered.
 */
export async function mountWidget(config: WidgetConfig): Promise<RenderedList | null> {
  try {
    await whenDomReady(config.container.ownerDocument);
    const params = new URLSearchParams({ count: String(config.count) });
    if (config.userToken) {
      params.set("user", config.userToken);
    }
    const url =
      `${config.apiBase}/v1/documents/${encodeURIComponent(config.externalId)}` +
      `/related?${params}`;
    const resp = await fetch(url);
    if (!resp.ok) {
      console.error(`related-documents request failed: HTTP ${resp.status}`);
      return null;
    }
    const data = (await resp.json()) as ApiResponse;
    const rendered = renderInto(config, data);
    if (rendered.items.length > 0) {
      void fetch(`${config.apiBase}/v1/rendered/${encodeURIComponent(rendered.setId)}`, {
        method: "POST",
        keepalive: true,
      }).catch(() => undefined);
    }
    return rendered;
  } catch (err) {
    // never propagate into the host page
    console.error("related-documents widget error:", err);
    return null;
  }
}

function parseCount(raw: string | undefined): number {
  if (!raw) {
    return DEFAULT_COUNT;
  }
  const count = Number(raw);
  if (!Number.isInteger(count) || count < 1 || count > 15) {
    console.error(`data-count must be an integer in 1..15, got ${raw}; using ${DEFAULT_COUNT}`);
    return DEFAULT_COUNT;
  }
  return count;
}

/** Read data- attributes from the script tag and mount once. */
export function autoInit(doc: Document = document): Promise<RenderedList | null> | null {
  const script = (doc.currentScript ||
    doc.querySelector("script[data-doc]")) as HTMLScriptElement | null;
  if (!script || !script.dataset.doc || !script.dataset.api) {
    return null;
  }
  if (script.dataset.docrecMounted === "true") {
    return null; // one in-flight request per widget instance
  }
  script.dataset.docrecMounted = "true";

  let container: HTMLElement | null = null;
  if (script.dataset.container) {
    container = doc.querySelector(script.dataset.container);
    if (!container) {
      console.error(`widget container ${script.dataset.container} not found`);
      return null;
    }
  } else {
    container = doc.createElement("div");
    script.parentNode?.insertBefore(container, script);
  }

  return mountWidget({
    apiBase: script.dataset.api.replace(/\/$/, ""),
    externalId: script.dataset.doc,
    count: parseCount(script.dataset.count),
    container,
    userToken: script.dataset.user,
    linkTemplate: script.dataset.linkTemplate,
  });
}

// side-effect entry point when loaded as a script tag in a real page
if (typeof document !== "undefined" && typeof window !== "undefined" &&
    (document.currentScript || document.querySelector("script[data-doc]"))) {
  autoInit();
}
