// Wire protocol of the play service: one duplex channel, JSON messages.
// Field names here are the contract; the schemas reject anything malformed
// before it reaches the wire.

import { z } from "zod";

export const NUM_ACTIONS = 7;

export const ResetMessage = z.object({
  type: z.literal("reset"),
  checkpoint: z.string().min(1),
  seed: z.number().int(),
  // optional initial-frame selectors understood by the server
  episode: z.number().int().nonnegative().optional(),
  frame_png_base64: z.string().optional(),
  difficulty: z.enum(["easy", "hard"]).optional(),
});

export const ActionMessage = z.object({
  type: z.literal("action"),
  action: z.number().int().min(0).max(NUM_ACTIONS - 1),
});

export const ClientMessage = z.discriminatedUnion("type", [
  ResetMessage,
  ActionMessage,
]);

export const FrameMessage = z.object({
  type: z.literal("frame"),
  step: z.number().int().nonnegative(),
  png_base64: z.string().min(1),
  latency_ms: z.number().nonnegative(),
  session: z.string().optional(),
});

export const ErrorMessage = z.object({
  type: z.literal("error"),
  message: z.string(),
});

export const ServerMessage = z.discriminatedUnion("type", [
  FrameMessage,
  ErrorMessage,
]);

export type ResetMessage = z.infer<typeof ResetMessage>;
export type ActionMessage = z.infer<typeof ActionMessage>;
export type ClientMessage = z.infer<typeof ClientMessage>;
export type FrameMessage = z.infer<typeof FrameMessage>;
export type ErrorMessage = z.infer<typeof ErrorMessage>;
export type ServerMessage = z.infer<typeof ServerMessage>;

export function parseServerMessage(raw: string): ServerMessage {
  return ServerMessage.parse(JSON.parse(raw));
}

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(ClientMessage.parse(msg));
}
