// WireMessage schemas, mirroring the server's documented JSON protocol
// field by field. Every outgoing message is validated before sending so a
// schema drift fails loudly on the client instead of as a server error.

import { z } from "zod";

export const pixelSchema = z.tuple([z.number().int(), z.number().int()]);

export const zKeySchema = z.enum(["none", "zoom_in", "zoom_out"]);
export type ZKey = z.infer<typeof zKeySchema>;

export const createSessionSchema = z
  .object({
    type: z.literal("create_session"),
    seed: z.number().int().optional(),
    latent: z.array(z.array(z.number())).optional(),
    use_average_direction: z.boolean().optional(),
  })
  .strict();

export const dragSchema = z
  .object({
    type: z.literal("drag"),
    session_id: z.string(),
    gesture_id: z.number().int().nonnegative(),
    s: pixelSchema,
    e: pixelSchema,
    z_key: zKeySchema,
  })
  .strict();

export const anchorAddSchema = z
  .object({ type: z.literal("anchor_add"), session_id: z.string(), p: pixelSchema })
  .strict();

export const anchorRemoveSchema = z
  .object({ type: z.literal("anchor_remove"), session_id: z.string(), p: pixelSchema })
  .strict();

export const wheelSchema = z
  .object({
    type: z.literal("wheel"),
    session_id: z.string(),
    gesture_id: z.number().int().nonnegative(),
    p: pixelSchema,
    clicks: z.number().int().refine((c) => c !== 0, "clicks must be non-zero"),
  })
  .strict();

export const commitSchema = z
  .object({ type: z.literal("commit"), session_id: z.string() })
  .strict();

export const revertSchema = z
  .object({ type: z.literal("revert"), session_id: z.string() })
  .strict();

export const setBetaSchema = z
  .object({ type: z.literal("set_beta"), session_id: z.string(), beta: z.number().positive() })
  .strict();

export const requestSchema = z.discriminatedUnion("type", [
  createSessionSchema,
  dragSchema,
  anchorAddSchema,
  anchorRemoveSchema,
  wheelSchema,
  commitSchema,
  revertSchema,
  setBetaSchema,
]);
export type Request = z.infer<typeof requestSchema>;

export const frameSchema = z
  .object({
    type: z.literal("frame"),
    session_id: z.string(),
    gesture_id: z.number().int().nullable(),
    image: z.string(),
    alpha: z.number().nullable(),
    k: z.number().int().nullable(),
    v: z.array(z.number()).length(3).nullable(),
    notice: z.string().nullable(),
  })
  .strict();
export type Frame = z.infer<typeof frameSchema>;

export const errorSchema = z
  .object({ type: z.literal("error"), message: z.string() })
  .strict();

export const responseSchema = z.discriminatedUnion("type", [frameSchema, errorSchema]);
export type Response = z.infer<typeof responseSchema>;

/** Parse and validate one incoming JSON payload. Throws on schema drift. */
export function parseResponse(raw: string): Response {
  return responseSchema.parse(JSON.parse(raw));
}
