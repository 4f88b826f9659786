import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { MutationInFlight, UiSession } from "../src/session.js";
import { FakeService } from "./fake_service.js";

function makeSession(service: FakeService) {
  const api = new ApiClient("http://fake", { fetchFn: service.fetchFn(), retryDelayMs: 1 });
  return new UiSession(api, "run-0001", "a");
}

describe("UiSession", () => {
  it("walks the queue with progress 0/N to N/N", async () => {
    const service = new FakeService({ queueSize: 5 });
    const session = makeSession(service);
    await session.loadNext();
    expect(session.labeled).toBe(0);
    expect(session.total).toBe(5);
    while (session.item) {
      await session.submitLabel(true);
    }
    expect(session.labeled).toBe(5);
    expect(session.item).toBeNull();
  });

  it("skip defers the item to the queue tail", async () => {
    const service = new FakeService({ queueSize: 3 });
    const session = makeSession(service);
    await session.loadNext();
    expect(session.item?.admission_id).toBe("A0000");
    await session.skip();
    expect(session.item?.admission_id).toBe("A0001");
    await session.submitLabel(false);
    await session.submitLabel(true); // labels A0002
    // only the skipped item remains; it comes back at the tail
    expect(session.item?.admission_id).toBe("A0000");
    await session.submitLabel(true);
    expect(session.item).toBeNull();
  });

  it("rolls back optimistic progress when the service is down, keeping input", async () => {
    const service = new FakeService({ queueSize: 2 });
    const session = makeSession(service);
    await session.loadNext();
    const before = session.item?.admission_id;
    service.failNextRequests = 99; // outage beyond retry budget
    await expect(session.submitLabel(true)).rejects.toBeTruthy();
    expect(session.labeled).toBe(0); // optimistic step rolled back
    expect(session.item?.admission_id).toBe(before); // item not lost
    service.failNextRequests = 0;
    await session.submitLabel(true); // user retries, same input succeeds
    expect(session.labeled).toBe(1);
  });

  it("allows only one in-flight mutation per session", async () => {
    const service = new FakeService({ queueSize: 2 });
    const session = makeSession(service);
    await session.loadNext();
    const first = session.submitLabel(true);
    await expect(session.submitLabel(false)).rejects.toBeInstanceOf(MutationInFlight);
    await first;
  });

  it("batches every verdict into a single POST", async () => {
    const service = new FakeService({ queueSize: 4 });
    const session = makeSession(service);
    await session.loadNext();
    while (session.item) await session.submitLabel(true);
    await session.runIteration();
    session.prepareReview(["HP:0004326", "HP:0001824", "HP:0002202"]);
    session.toggleVerdict("HP:0002202"); // mark one Irrelevant
    const postsBefore = service.requests.filter(
      (r) => r.path.endsWith("/features/verdicts") && r.method === "POST",
    ).length;
    await session.submitVerdicts();
    const posts = service.requests.filter(
      (r) => r.path.endsWith("/features/verdicts") && r.method === "POST",
    );
    expect(posts.length - postsBefore).toBe(1);
    expect(service.verdictLog).toContainEqual({
      feature: "HP:0002202",
      verdict: "Irrelevant",
    });
    expect(service.verdictLog.filter((v) => v.verdict === "Relevant").length).toBe(2);
  });
});
