// Lockstep session client. Generation takes much longer than key-repeat, so
// exactly one action may be in flight at any time; the next action is sent
// only after the previous frame acknowledgment arrives. Fire-and-forget input
// would queue up and desynchronize the player's intent from the world state.

import {
  ClientMessage,
  FrameMessage,
  ResetMessage,
  encodeClientMessage,
  parseServerMessage,
} from "./protocol.js";

export interface WsLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
}

export type WsFactory = (url: string) => WsLike;

export type ConnectionStatus = "idle" | "connecting" | "connected" | "error" | "closed";

export interface ClientCallbacks {
  onFrame?: (frame: FrameMessage) => void;
  onError?: (message: string) => void;
  onStatus?: (status: ConnectionStatus) => void;
}

export interface ClientStateView {
  status: ConnectionStatus;
  step: number;
  latencyMs: number | null;
  checkpoint: string | null;
  session: string | null;
  inFlight: number; // 0 or 1; the lockstep invariant
  paused: boolean;
}

const defaultFactory: WsFactory = (url) => new WebSocket(url) as unknown as WsLike;

export class PlayClient {
  private ws: WsLike | null = null;
  private status: ConnectionStatus = "idle";
  private sent = 0;
  private received = 0;
  private step = 0;
  private latencyMs: number | null = null;
  private checkpoint: string | null = null;
  private session: string | null = null;
  private paused = false;
  private heldAction: () => number | null = () => null;
  private idleTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private url: string,
    private callbacks: ClientCallbacks = {},
    private wsFactory: WsFactory = defaultFactory,
    /** >0: send a no-op this many ms after an idle frame ack; 0: wait for input */
    private idleCadenceMs: number = 0,
  ) {}

  get state(): ClientStateView {
    return {
      status: this.status,
      step: this.step,
      latencyMs: this.latencyMs,
      checkpoint: this.checkpoint,
      session: this.session,
      inFlight: this.sent - this.received,
      paused: this.paused,
    };
  }

  /** Supplies the action to auto-send after each frame ack (held keys). */
  setHeldActionSource(source: () => number | null): void {
    this.heldAction = source;
  }

  connect(): Promise<void> {
    this.setStatus("connecting");
    return new Promise((resolve, reject) => {
      let settled = false;
      const ws = this.wsFactory(this.url);
      this.ws = ws;
      ws.onopen = () => {
        settled = true;
        this.setStatus("connected");
        resolve();
      };
      ws.onmessage = (ev) => this.handleMessage(ev.data);
      ws.onerror = () => {
        this.setStatus("error");
        this.callbacks.onError?.("connection failed");
        if (!settled) {
          settled = true;
          reject(new Error("connection failed"));
        }
      };
      ws.onclose = () => {
        if (this.status !== "error") this.setStatus("closed");
      };
    });
  }

  /** Reconnect after a drop: the old session is discarded, a fresh one starts. */
  async reconnectAndReset(checkpoint: string, seed: number): Promise<void> {
    this.ws?.close();
    this.ws = null;
    this.sent = 0;
    this.received = 0;
    this.session = null;
    this.paused = false;
    await this.connect();
    this.reset(checkpoint, seed);
  }

  reset(checkpoint: string, seed: number, extra: Partial<ResetMessage> = {}): void {
    if (!this.ws) throw new Error("not connected");
    this.checkpoint = checkpoint;
    this.paused = false;
    this.sendMessage({ type: "reset", checkpoint, seed, ...extra });
  }

  /** Send an action, respecting the lockstep invariant. Returns whether sent. */
  requestAction(action: number): boolean {
    if (!this.ws || this.status !== "connected" || this.paused) return false;
    if (this.sent - this.received >= 1) return false; // one in flight max
    this.sendMessage({ type: "action", action });
    return true;
  }

  private sendMessage(msg: ClientMessage): void {
    if (!this.ws) throw new Error("not connected");
    this.ws.send(encodeClientMessage(msg));
    this.sent += 1;
  }

  private handleMessage(raw: string): void {
    let msg;
    try {
      msg = parseServerMessage(raw);
    } catch {
      this.callbacks.onError?.("malformed server message");
      return;
    }
    this.received += 1;
    if (msg.type === "error") {
      this.paused = true; // loop pauses until the next reset
      this.callbacks.onError?.(msg.message);
      return;
    }
    this.step = msg.step;
    this.latencyMs = msg.latency_ms;
    if (msg.session) this.session = msg.session;
    this.callbacks.onFrame?.(msg);
    // lockstep: exactly one follow-up action per acknowledged frame
    const next = this.heldAction();
    if (next !== null) {
      this.requestAction(next);
    } else if (this.idleCadenceMs > 0) {
      if (this.idleTimer) clearTimeout(this.idleTimer);
      this.idleTimer = setTimeout(() => {
        if (this.heldAction() === null) this.requestAction(0);
      }, this.idleCadenceMs);
    }
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.callbacks.onStatus?.(status);
  }
}
