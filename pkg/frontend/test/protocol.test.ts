// Protocol conformance against fixtures recorded from the real service.

import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import {
  ActionMessage,
  ClientMessage,
  ResetMessage,
  ServerMessage,
  encodeClientMessage,
} from "../src/protocol.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = JSON.parse(
  readFileSync(join(here, "fixtures", "session_exchange.json"), "utf-8"),
) as { client: unknown[]; server: unknown[] };

describe("recorded fixtures", () => {
  it("every recorded client message validates against the schema", () => {
    for (const msg of fixtures.client) {
      expect(() => ClientMessage.parse(msg)).not.toThrow();
    }
  });

  it("every recorded server message validates against the schema", () => {
    for (const msg of fixtures.server) {
      expect(() => ServerMessage.parse(msg)).not.toThrow();
    }
  });

  it("fixtures exercise reset, action, frame and error messages", () => {
    const clientTypes = new Set(fixtures.client.map((m) => (m as { type: string }).type));
    const serverTypes = new Set(fixtures.server.map((m) => (m as { type: string }).type));
    expect(clientTypes).toEqual(new Set(["reset", "action"]));
    expect(serverTypes).toEqual(new Set(["frame", "error"]));
  });
});

describe("schema rejections", () => {
  it("rejects out-of-range actions", () => {
    expect(() => ActionMessage.parse({ type: "action", action: 7 })).toThrow();
    expect(() => ActionMessage.parse({ type: "action", action: -1 })).toThrow();
    expect(() => ActionMessage.parse({ type: "action", action: 2.5 })).toThrow();
  });

  it("rejects resets without a checkpoint", () => {
    expect(() => ResetMessage.parse({ type: "reset", seed: 0 })).toThrow();
    expect(() => ResetMessage.parse({ type: "reset", checkpoint: "", seed: 0 })).toThrow();
  });

  it("rejects unknown message types", () => {
    expect(() => ServerMessage.parse({ type: "pong" })).toThrow();
  });

  it("encode round-trips valid client messages", () => {
    const msg = { type: "action", action: 3 } as const;
    expect(JSON.parse(encodeClientMessage(msg))).toEqual(msg);
  });
});
