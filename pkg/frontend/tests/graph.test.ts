import { describe, expect, it } from "vitest";

import { ApiClient, TraverseRequest, TraverseResult } from "../src/api.js";
import { GraphExplorer } from "../src/graphExplorer.js";
import { FakeServer, loadFixture } from "./harness.js";

const solar = loadFixture("traverse_solar");
const empty = loadFixture("traverse_empty");

function request(fixture: typeof solar): TraverseRequest {
  return fixture.request.body as TraverseRequest;
}

describe("graph exploration", () => {
  it("each expansion issues one traverse call and mirrors backend scores", async () => {
    const server = new FakeServer().route(solar);
    const explorer = new GraphExplorer(new ApiClient("", null, server.fetch));
    const result = await explorer.expand(request(solar));
    expect(server.countOf("POST", "/kg/traverse")).toBe(1);
    const recorded = solar.response as TraverseResult;
    expect(result.results.map((r) => [r.node_id, r.score])).toEqual(
      recorded.results.map((r) => [r.node_id, r.score]),
    );
    expect(result.results.length).toBeGreaterThan(0);
  });

  it("collapse and re-expand hits the client cache, not the server", async () => {
    const server = new FakeServer().route(solar);
    const explorer = new GraphExplorer(new ApiClient("", null, server.fetch));
    const first = await explorer.expand(request(solar));
    explorer.collapse(first.subject);
    expect(explorer.isExpanded(first.subject)).toBe(false);
    const second = await explorer.expand(request(solar));
    expect(second).toEqual(first);
    expect(explorer.isExpanded(first.subject)).toBe(true);
    expect(server.countOf("POST", "/kg/traverse")).toBe(1); // no duplicate request
  });

  it("different lexicons are cached independently", async () => {
    const server = new FakeServer().route(solar).route(empty);
    const explorer = new GraphExplorer(new ApiClient("", null, server.fetch));
    await explorer.expand(request(solar));
    await explorer.expand(request(empty));
    expect(server.countOf("POST", "/kg/traverse")).toBe(2);
  });

  it("an empty result is an explicit no-matches state", async () => {
    const server = new FakeServer().route(empty);
    const explorer = new GraphExplorer(new ApiClient("", null, server.fetch));
    const result = await explorer.expand(request(empty));
    expect(result.results).toEqual([]);
  });
});
