import { describe, expect, it } from "vitest";

import {
  DEFAULT_KEY_MAP,
  KeyTracker,
  actionForKeys,
  coveredActions,
} from "../src/keymap.js";

describe("key map coverage", () => {
  it("the default map reaches all 7 actions", () => {
    expect(new Set(coveredActions(DEFAULT_KEY_MAP))).toEqual(
      new Set([0, 1, 2, 3, 4, 5, 6]),
    );
  });

  it("a custom map still covers all actions", () => {
    const custom = { left: "a", right: "d", jump: "w", down: "s", noop: "x" };
    expect(new Set(coveredActions(custom))).toEqual(new Set([0, 1, 2, 3, 4, 5, 6]));
  });
});

describe("held-key resolution", () => {
  const held = (...keys: string[]) => actionForKeys(new Set(keys));

  it("maps single keys", () => {
    expect(held("ArrowLeft")).toBe(1);
    expect(held("ArrowRight")).toBe(2);
    expect(held("ArrowUp")).toBe(3);
    expect(held("ArrowDown")).toBe(6);
    expect(held(" ")).toBe(0);
  });

  it("maps jump combinations", () => {
    expect(held("ArrowUp", "ArrowLeft")).toBe(4);
    expect(held("ArrowUp", "ArrowRight")).toBe(5);
  });

  it("returns null when nothing relevant is held", () => {
    expect(held()).toBeNull();
    expect(held("q")).toBeNull();
  });

  it("tracker follows key events", () => {
    const t = new KeyTracker();
    expect(t.currentAction()).toBeNull();
    t.keyDown("ArrowUp");
    t.keyDown("ArrowRight");
    expect(t.currentAction()).toBe(5);
    t.keyUp("ArrowUp");
    expect(t.currentAction()).toBe(2);
    t.clear();
    expect(t.currentAction()).toBeNull();
  });
});
