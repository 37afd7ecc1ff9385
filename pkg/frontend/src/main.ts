// DOM wiring: connect form, canvas, status/latency readouts, error banner,
// and the editable key-binding panel.

import { PlayClient } from "./client.js";
import { DEFAULT_KEY_MAP, KeyTracker } from "./keymap.js";
import { FrameRenderer } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function serverUrl(): string {
  const input = el<HTMLInputElement>("server").value.trim();
  const base = input || `${location.host || "127.0.0.1:8000"}`;
  const proto = location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${base.replace(/^wss?:\/\//, "")}/session`;
}

async function loadModels(): Promise<void> {
  const base = el<HTMLInputElement>("server").value.trim() || "127.0.0.1:8000";
  const select = el<HTMLSelectElement>("checkpoint");
  try {
    const res = await fetch(`http://${base.replace(/^https?:\/\//, "")}/models`);
    const models: Array<{ name: string; variant: string | null }> = await res.json();
    select.innerHTML = "";
    for (const m of models.filter((m) => m.variant === "guided")) {
      const opt = document.createElement("option");
      opt.value = m.name;
      opt.textContent = m.name;
      select.appendChild(opt);
    }
  } catch {
    showBanner("could not list models; type a checkpoint name manually");
  }
}

function showBanner(message: string): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message;
  banner.style.display = "block";
}

function hideBanner(): void {
  el<HTMLDivElement>("banner").style.display = "none";
}

function bindKeymapPanel(tracker: KeyTracker): void {
  const fields: Array<[keyof typeof DEFAULT_KEY_MAP, string]> = [
    ["left", "key-left"], ["right", "key-right"], ["jump", "key-jump"],
    ["down", "key-down"], ["noop", "key-noop"],
  ];
  for (const [slot, id] of fields) {
    const input = el<HTMLInputElement>(id);
    input.value = tracker.map[slot];
    input.addEventListener("change", () => {
      tracker.map[slot] = input.value || DEFAULT_KEY_MAP[slot];
    });
  }
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("world");
  const renderer = new FrameRenderer(canvas, 8);
  const tracker = new KeyTracker();
  bindKeymapPanel(tracker);

  const client = new PlayClient(serverUrl(), {
    onFrame: (frame) => {
      hideBanner();
      el<HTMLSpanElement>("step").textContent = String(frame.step);
      el<HTMLSpanElement>("latency").textContent = `${frame.latency_ms.toFixed(0)} ms`;
      void renderer.drawPngBase64(frame.png_base64);
    },
    onError: (message) => showBanner(message),
    onStatus: (status) => {
      el<HTMLSpanElement>("status").textContent = status;
    },
  });
  client.setHeldActionSource(() => tracker.currentAction());

  window.addEventListener("keydown", (ev) => {
    if ((ev.target as HTMLElement)?.tagName === "INPUT") return;
    if (ev.repeat) return;
    tracker.keyDown(ev.key);
    const action = tracker.currentAction();
    if (action !== null) {
      ev.preventDefault();
      client.requestAction(action); // lockstep-guarded
    }
  });
  window.addEventListener("keyup", (ev) => tracker.keyUp(ev.key));
  window.addEventListener("blur", () => tracker.clear());

  el<HTMLButtonElement>("connect").addEventListener("click", async () => {
    hideBanner();
    const checkpoint = el<HTMLSelectElement>("checkpoint").value;
    const seed = Number(el<HTMLInputElement>("seed").value) || 0;
    try {
      await client.reconnectAndReset(checkpoint, seed);
    } catch {
      showBanner("connection failed; check the server and retry");
    }
  });
  el<HTMLButtonElement>("refresh-models").addEventListener("click", () => void loadModels());
  void loadModels();
}

document.addEventListener("DOMContentLoaded", main);
