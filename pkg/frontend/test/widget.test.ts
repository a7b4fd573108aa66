// @vitest-environment jsdom
/**
 * Widget behavior against a real local HTTP server, so the crawler-avoidance
 * property is observed server-side: a fetching agent that does not execute
 * scripts produces zero API requests, a script-executing one produces
 * exactly one request per page and one beacon per click.
 */

import { createServer, type Server } from "node:http";
import { JSDOM } from "jsdom";
import { afterAll, afterEach, beforeAll, beforeEach, describe, expect, it } from "vitest";

import { autoInit, mountWidget, sendClickBeacon } from "../src/widget";

interface Hit {
  method: string;
  path: string;
}

let server: Server;
let baseUrl: string;
let hits: Hit[];
let responseItems: number;
let failWith: number | null;

function apiPayload(n: number) {
  return {
    set_id: "set0001",
    processing_time_ms: 12,
    fallback_used: false,
    algorithm: { sampled: "cbf|terms", executed: "cbf|terms" },
    recommendations: Array.from({ length: n }, (_, i) => ({
      rec_id: `rec${i}`,
      external_id: `d${i}`,
      title: `Related paper ${i}`,
      rank: i + 1,
      relevance: 1.0 - i * 0.05,
    })),
  };
}

beforeAll(async () => {
  server = createServer((req, res) => {
    hits.push({ method: req.method ?? "", path: req.url ?? "" });
    if (failWith !== null) {
      res.writeHead(failWith).end();
      return;
    }
    if (req.url?.includes("/related")) {
      res.writeHead(200, { "content-type": "application/json" });
      res.end(JSON.stringify(apiPayload(responseItems)));
      return;
    }
    res.writeHead(204).end();
  });
  await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
  const addr = server.address();
  if (addr === null || typeof addr === "string") throw new Error("no port");
  baseUrl = `http://127.0.0.1:${addr.port}`;
});

afterAll(async () => {
  await new Promise((resolve) => server.close(resolve));
});

beforeEach(() => {
  hits = [];
  responseItems = 5;
  failWith = null;
  document.body.innerHTML = "";
  // jsdom has no sendBeacon; emulate the browser transport with a POST
  (navigator as unknown as { sendBeacon: (url: string) => boolean }).sendBeacon = (
    url: string,
  ) => {
    void fetch(url, { method: "POST" });
    return true;
  };
});

afterEach(() => {
  delete (navigator as unknown as { sendBeacon?: unknown }).sendBeacon;
});

async function settle(ms = 80): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, ms));
}

function hostPageHtml(): string {
  return `<!doctype html><html><body>
    <h1>Some partner page</h1>
    <div id="related"></div>
    <script src="${baseUrl}/widget.js" data-api="${baseUrl}" data-doc="sw-1"
            data-count="5" data-container="#related"></script>
  </body></html>`;
}

describe("crawler avoidance", () => {
  it("a non-script-executing fetch of the host page issues zero API requests", async () => {
    const dom = new JSDOM(hostPageHtml());
    await settle(120);
    expect(dom.window.document.querySelectorAll("script[data-doc]").length).toBe(1);
    expect(hits.length).toBe(0);
  });

  it("a script-executing agent issues exactly one request per page", async () => {
    document.body.innerHTML = `
      <div id="related"></div>
      <script data-api="${baseUrl}" data-doc="sw-1" data-count="5"
              data-container="#related"></script>`;
    const result = await autoInit(document);
    expect(result).not.toBeNull();
    await settle();
    const related = hits.filter((h) => h.path.includes("/related"));
    expect(related.length).toBe(1);
    expect(related[0].path).toContain("/v1/documents/sw-1/related");
    expect(related[0].path).toContain("count=5");
  });

  it("mounting twice still issues only one request", async () => {
    document.body.innerHTML = `
      <div id="related"></div>
      <script data-api="${baseUrl}" data-doc="sw-1" data-container="#related"></script>`;
    const first = autoInit(document);
    const second = autoInit(document);
    expect(second).toBeNull();
    await first;
    await settle();
    expect(hits.filter((h) => h.path.includes("/related")).length).toBe(1);
  });
});

describe("rendering", () => {
  function container(): HTMLElement {
    document.body.innerHTML = `<div id="related"></div>`;
    return document.getElementById("related") as HTMLElement;
  }

  it("renders anchors in rank order and posts the render event", async () => {
    const rendered = await mountWidget({
      apiBase: baseUrl,
      externalId: "sw-1",
      count: 5,
      container: container(),
      linkTemplate: "https://partner.example.org/doc/{id}",
    });
    expect(rendered?.items.length).toBe(5);
    const anchors = document.querySelectorAll("#related a");
    expect(anchors.length).toBe(5);
    anchors.forEach((a, i) => {
      expect(a.textContent).toBe(`Related paper ${i}`);
      expect((a as HTMLElement).dataset.rank).toBe(String(i + 1));
      expect((a as HTMLAnchorElement).href).toBe(`https://partner.example.org/doc/d${i}`);
    });
    await settle();
    expect(hits.filter((h) => h.path === "/v1/rendered/set0001").length).toBe(1);
  });

  it("zero items leave the container empty and hidden, no render event", async () => {
    responseItems = 0;
    const target = container();
    const rendered = await mountWidget({
      apiBase: baseUrl, externalId: "sw-1", count: 5, container: target,
    });
    expect(rendered?.items.length).toBe(0);
    expect(target.hidden).toBe(true);
    expect(target.textContent).toBe("");
    await settle();
    expect(hits.filter((h) => h.path.startsWith("/v1/rendered")).length).toBe(0);
  });

  it("API failure renders nothing and never throws into the host page", async () => {
    failWith = 500;
    const target = container();
    const rendered = await mountWidget({
      apiBase: baseUrl, externalId: "sw-1", count: 5, container: target,
    });
    expect(rendered).toBeNull();
    expect(target.querySelectorAll("a").length).toBe(0);
  });

  it("unreachable server is survived silently", async () => {
    const target = container();
    const rendered = await mountWidget({
      apiBase: "http://127.0.0.1:9", externalId: "sw-1", count: 5, container: target,
    });
    expect(rendered).toBeNull();
  });

  it("invalid data-count falls back to the default of 10", async () => {
    document.body.innerHTML = `
      <div id="related"></div>
      <script data-api="${baseUrl}" data-doc="sw-1" data-count="20"
              data-container="#related"></script>`;
    await autoInit(document);
    await settle();
    const related = hits.find((h) => h.path.includes("/related"));
    expect(related?.path).toContain("count=10");
  });
});

describe("dom-ready gating", () => {
  it("no request leaves the widget before DOMContentLoaded", async () => {
    const readyState = Object.getOwnPropertyDescriptor(Document.prototype, "readyState");
    Object.defineProperty(document, "readyState", {
      configurable: true,
      get: () => "loading",
    });
    document.body.innerHTML = `<div id="related"></div>`;
    const pending = mountWidget({
      apiBase: baseUrl, externalId: "sw-1", count: 5,
      container: document.getElementById("related") as HTMLElement,
    });
    await settle();
    expect(hits.length).toBe(0);

    Object.defineProperty(document, "readyState", {
      configurable: true,
      get: () => "interactive",
    });
    document.dispatchEvent(new Event("DOMContentLoaded"));
    await pending;
    await settle();
    expect(hits.filter((h) => h.path.includes("/related")).length).toBe(1);
    if (readyState) {
      Object.defineProperty(document, "readyState", readyState);
    } else {
      delete (document as unknown as Record<string, unknown>).readyState;
    }
  });
});

describe("click beacons", () => {
  it("one click, one beacon, navigation not prevented", async () => {
    document.body.innerHTML = `<div id="related"></div>`;
    await mountWidget({
      apiBase: baseUrl, externalId: "sw-1", count: 5,
      container: document.getElementById("related") as HTMLElement,
    });
    const anchor = document.querySelector("#related a") as HTMLAnchorElement;
    const event = new MouseEvent("click", { bubbles: true, cancelable: true });
    anchor.dispatchEvent(event);
    expect(event.defaultPrevented).toBe(false);
    await settle();
    expect(hits.filter((h) => h.method === "POST" && h.path === "/v1/clicks/rec0").length)
      .toBe(1);
  });

  it("double click sends a beacon per click", async () => {
    document.body.innerHTML = `<div id="related"></div>`;
    await mountWidget({
      apiBase: baseUrl, externalId: "sw-1", count: 5,
      container: document.getElementById("related") as HTMLElement,
    });
    const anchor = document.querySelector("#related a") as HTMLAnchorElement;
    anchor.dispatchEvent(new MouseEvent("click", { bubbles: true }));
    anchor.dispatchEvent(new MouseEvent("click", { bubbles: true }));
    await settle();
    expect(hits.filter((h) => h.path === "/v1/clicks/rec0").length).toBe(2);
  });

  it("beacon failure is silent and does not block", async () => {
    delete (navigator as unknown as { sendBeacon?: unknown }).sendBeacon;
    expect(() => sendClickBeacon("http://127.0.0.1:9", "recX")).not.toThrow();
  });
});
