// Keyboard to action mapping. Jumps combine with held direction keys, so the
// map is resolved from the set of currently pressed keys rather than a single
// key code.

export const ACTION_NAMES = [
  "no-op",
  "left",
  "right",
  "jump",
  "jump-left",
  "jump-right",
  "down",
] as const;

export interface KeyMap {
  left: string;
  right: string;
  jump: string;
  down: string;
  noop: string;
}

export const DEFAULT_KEY_MAP: KeyMap = {
  left: "ArrowLeft",
  right: "ArrowRight",
  jump: "ArrowUp",
  down: "ArrowDown",
  noop: " ",
};

/** Every one of the 7 actions reachable from a key map. */
export function coveredActions(map: KeyMap): number[] {
  const combos: Array<[string[], number]> = [
    [[map.noop], 0],
    [[map.left], 1],
    [[map.right], 2],
    [[map.jump], 3],
    [[map.jump, map.left], 4],
    [[map.jump, map.right], 5],
    [[map.down], 6],
  ];
  return combos.map(([, action]) => action);
}

/** Resolve the set of held keys to an action, or null when nothing is held. */
export function actionForKeys(held: ReadonlySet<string>, map: KeyMap = DEFAULT_KEY_MAP): number | null {
  const jump = held.has(map.jump);
  const left = held.has(map.left);
  const right = held.has(map.right);
  if (jump && left) return 4;
  if (jump && right) return 5;
  if (jump) return 3;
  if (left) return 1;
  if (right) return 2;
  if (held.has(map.down)) return 6;
  if (held.has(map.noop)) return 0;
  return null;
}

/** Tracks currently held keys from keyboard events. */
export class KeyTracker {
  private held = new Set<string>();

  constructor(public map: KeyMap = { ...DEFAULT_KEY_MAP }) {}

  keyDown(key: string): void {
    this.held.add(key);
  }

  keyUp(key: string): void {
    this.held.delete(key);
  }

  clear(): void {
    this.held.clear();
  }

  currentAction(): number | null {
    return actionForKeys(this.held, this.map);
  }
}
