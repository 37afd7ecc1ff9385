// Lockstep client against a mock server with simulated generation latency.

import { beforeEach, afterEach, describe, expect, it, vi } from "vitest";

import { PlayClient, WsLike } from "../src/client.js";
import { ClientMessage } from "../src/protocol.js";

/** In-memory server honoring the wire protocol with configurable latency. */
class MockServer {
  sent: unknown[] = [];
  sockets: MockSocket[] = [];
  sessionCounter = 0;
  latencyMs = 500;
  failNextReset = false;

  factory = (url: string): WsLike => {
    const sock = new MockSocket(this);
    this.sockets.push(sock);
    queueMicrotask(() => sock.onopen?.());
    void url;
    return sock;
  };

  handle(sock: MockSocket, raw: string): void {
    const msg = ClientMessage.parse(JSON.parse(raw)); // server-side validation
    this.sent.push(msg);
    if (msg.type === "reset") {
      if (this.failNextReset) {
        this.failNextReset = false;
        sock.replyAfter(0, { type: "error", message: "checkpoint not found" });
        return;
      }
      this.sessionCounter += 1;
      sock.session = `s${this.sessionCounter}`;
      sock.step = 0;
      sock.replyAfter(this.latencyMs, this.frame(sock));
      return;
    }
    if (sock.session === null) {
      sock.replyAfter(0, { type: "error", message: "no active session" });
      return;
    }
    sock.step += 1;
    sock.replyAfter(this.latencyMs, this.frame(sock));
  }

  frame(sock: MockSocket) {
    return {
      type: "frame",
      step: sock.step,
      png_base64: "aGVsbG8=",
      latency_ms: this.latencyMs,
      session: sock.session ?? undefined,
    };
  }
}

class MockSocket implements WsLike {
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: string }) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  closed = false;
  session: string | null = null;
  step = 0;

  constructor(private server: MockServer) {}

  send(data: string): void {
    if (this.closed) throw new Error("socket closed");
    this.server.handle(this, data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  replyAfter(ms: number, payload: unknown): void {
    setTimeout(() => {
      if (!this.closed) this.onmessage?.({ data: JSON.stringify(payload) });
    }, ms);
  }
}

async function flush(): Promise<void> {
  await Promise.resolve();
  await Promise.resolve();
}

describe("lockstep client", () => {
  let server: MockServer;
  let frames: number[];
  let errors: string[];
  let client: PlayClient;

  beforeEach(() => {
    vi.useFakeTimers();
    server = new MockServer();
    frames = [];
    errors = [];
    client = new PlayClient(
      "ws://test/session",
      {
        onFrame: (f) => frames.push(f.step),
        onError: (m) => errors.push(m),
      },
      server.factory,
    );
  });

  afterEach(() => {
    vi.useRealTimers();
  });

  it("connect and reset renders the first frame", async () => {
    await connectAndReset();
    expect(frames).toEqual([0]);
    expect(client.state.step).toBe(0);
    expect(client.state.latencyMs).toBe(500);
  });

  async function connectAndReset(): Promise<void> {
    const p = client.connect();
    await flush();
    await p;
    client.reset("guided", 7);
    await vi.advanceTimersByTimeAsync(500);
  }

  it("holds the in-flight invariant under 500 ms latency", async () => {
    await connectAndReset();
    client.setHeldActionSource(() => 2); // key held forever
    expect(client.requestAction(2)).toBe(true);
    // hammer the client while generation is pending; nothing extra may leave
    for (let burst = 0; burst < 5; burst++) {
      expect(client.requestAction(2)).toBe(false);
      expect(client.state.inFlight).toBe(1);
      await vi.advanceTimersByTimeAsync(100);
      expect([0, 1]).toContain(client.state.inFlight);
    }
    // after several acks, sent counts track frames exactly one apart or equal
    const actions = server.sent.filter((m) => (m as { type: string }).type === "action");
    expect(actions.length).toBeGreaterThanOrEqual(2);
    expect(client.state.inFlight === 0 || client.state.inFlight === 1).toBe(true);
  });

  it("sends exactly one action per frame acknowledgment while a key is held", async () => {
    await connectAndReset();
    client.setHeldActionSource(() => 2);
    client.requestAction(2);
    await vi.advanceTimersByTimeAsync(500 * 4);
    const actions = server.sent.filter((m) => (m as { type: string }).type === "action");
    const framesReceived = frames.length - 1; // minus the reset frame
    expect(Math.abs(actions.length - framesReceived)).toBeLessThanOrEqual(1);
    expect(frames).toEqual([0, 1, 2, 3, 4]);
  });

  it("idle default sends nothing without input", async () => {
    await connectAndReset();
    await vi.advanceTimersByTimeAsync(5000);
    const actions = server.sent.filter((m) => (m as { type: string }).type === "action");
    expect(actions.length).toBe(0);
  });

  it("a positive idle cadence sends no-ops while nothing is held", async () => {
    const idleClient = new PlayClient("ws://test/session", {}, server.factory, 200);
    const p = idleClient.connect();
    await flush();
    await p;
    idleClient.reset("guided", 1);
    await vi.advanceTimersByTimeAsync(500); // reset frame ack
    await vi.advanceTimersByTimeAsync(200 + 500); // idle timer + generation
    await vi.advanceTimersByTimeAsync(200 + 500);
    const actions = server.sent.filter(
      (m) => (m as { type: string }).type === "action",
    ) as Array<{ action: number }>;
    expect(actions.length).toBeGreaterThanOrEqual(2);
    expect(actions.every((a) => a.action === 0)).toBe(true);
    expect(idleClient.state.inFlight === 0 || idleClient.state.inFlight === 1).toBe(true);
  });

  it("server errors pause the loop until reset", async () => {
    await connectAndReset();
    server.failNextReset = true;
    client.reset("missing", 0);
    await vi.advanceTimersByTimeAsync(10);
    expect(errors).toContain("checkpoint not found");
    expect(client.state.paused).toBe(true);
    expect(client.requestAction(2)).toBe(false);
    client.reset("guided", 1); // a fresh reset resumes
    await vi.advanceTimersByTimeAsync(500);
    expect(client.state.paused).toBe(false);
  });

  it("reconnect discards the old session", async () => {
    await connectAndReset();
    const firstSession = client.state.session;
    expect(firstSession).toBe("s1");
    const p = client.reconnectAndReset("guided", 9);
    await flush();
    await vi.advanceTimersByTimeAsync(500);
    await p;
    expect(server.sockets[0].closed).toBe(true);
    expect(client.state.session).toBe("s2");
    expect(client.state.inFlight).toBe(0);
  });

  it("all outbound traffic validates against the client schema", async () => {
    await connectAndReset();
    client.requestAction(5);
    await vi.advanceTimersByTimeAsync(500);
    for (const msg of server.sent) {
      expect(() => ClientMessage.parse(msg)).not.toThrow();
    }
  });
});
