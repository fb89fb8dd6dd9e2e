/**
 * Wire protocol types and framing for the navigation harness.
 *
 * One JSON object per '\n'-terminated UTF-8 line. The server speaks first
 * with a hello; the client echoes it, then drives reset/observe requests.
 * Key order in serialized replies is part of the golden-transcript
 * contract, so messages are built with their keys in canonical order.
 */

export const PROTOCOL_VERSION = 1;
export const PATCH_COUNT = 256;

export interface HelloMsg {
  type: "hello";
  version: number;
}

export interface ResetMsg {
  type: "reset";
  episode_id: string;
  instruction: string;
  n_hist: number;
  n_cur: number;
  c: number;
}

export interface ObserveMsg {
  type: "observe";
  step: number;
  frame: { n_x: number; c: number; data: number[] };
}

export type ClientMsg = HelloMsg | ResetMsg | ObserveMsg | { type: "bye" };

export type ServerMsg =
  | HelloMsg
  | { type: "ack" }
  | { type: "action"; text: string }
  | { type: "error"; message: string };

export function encode(msg: ServerMsg | ClientMsg): string {
  return JSON.stringify(msg) + "\n";
}

/** Incremental '\n'-delimited line splitter over socket chunks. */
export class LineReader {
  private buffer = "";

  push(chunk: Buffer | string): string[] {
    this.buffer += chunk.toString();
    const lines: string[] = [];
    for (;;) {
      const nl = this.buffer.indexOf("\n");
      if (nl < 0) break;
      lines.push(this.buffer.slice(0, nl));
      this.buffer = this.buffer.slice(nl + 1);
    }
    return lines;
  }

  /** Bytes of an unterminated trailing fragment, if any. */
  pending(): number {
    return this.buffer.length;
  }
}

export function parseClientMsg(line: string): ClientMsg {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (e) {
    throw new Error(`malformed message: ${(e as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null || typeof (raw as any).type !== "string") {
    throw new Error("message must be an object with a 'type'");
  }
  const msg = raw as any;
  switch (msg.type) {
    case "hello":
      if (typeof msg.version !== "number") throw new Error("hello needs a version");
      return msg as HelloMsg;
    case "reset":
      for (const key of ["episode_id", "instruction"] as const) {
        if (typeof msg[key] !== "string") throw new Error(`reset needs string ${key}`);
      }
      for (const key of ["n_hist", "n_cur", "c"] as const) {
        if (typeof msg[key] !== "number") throw new Error(`reset needs numeric ${key}`);
      }
      return msg as ResetMsg;
    case "observe":
      if (typeof msg.step !== "number") throw new Error("observe needs a step");
      if (
        typeof msg.frame !== "object" ||
        msg.frame === null ||
        typeof msg.frame.n_x !== "number" ||
        typeof msg.frame.c !== "number" ||
        !Array.isArray(msg.frame.data)
      ) {
        throw new Error("observe needs a frame {n_x, c, data}");
      }
      return msg as ObserveMsg;
    case "bye":
      return { type: "bye" };
    default:
      throw new Error(`unexpected message '${msg.type}'`);
  }
}
