/**
 * Callback-policy server: exposes an agent function over the wire protocol.
 *
 * Each connection carries one episode session. Frames arrive as flat
 * row-major float arrays and are regrouped into per-patch rows before the
 * callback sees them; whatever text the callback returns is forwarded
 * verbatim as the action answer.
 */

import * as net from "net";

import {
  LineReader,
  ObserveMsg,
  PATCH_COUNT,
  PROTOCOL_VERSION,
  ResetMsg,
  ServerMsg,
  encode,
  parseClientMsg,
} from "./protocol";

/** Frame as the callback sees it: one Float64Array of length c per patch. */
export type Frame = Float64Array[];

/**
 * The policy: gets the episode instruction and every frame observed so far
 * (current one last) and returns the answer sentence for this step.
 */
export type AgentCallback = (instruction: string, frames: Frame[]) => string;

export interface ServeOptions {
  host?: string;
  port?: number;
}

interface Session {
  instruction: string;
  c: number;
  frames: Frame[];
  expectedStep: number;
  helloSeen: boolean;
}

function regroup(msg: ObserveMsg): Frame {
  const { n_x, c, data } = msg.frame;
  const frame: Frame = [];
  for (let i = 0; i < n_x; i++) {
    const row = new Float64Array(c);
    for (let j = 0; j < c; j++) row[j] = data[i * c + j];
    frame.push(row);
  }
  return frame;
}

export class AgentServer {
  private server: net.Server;
  private sockets = new Set<net.Socket>();

  constructor(private callback: AgentCallback) {
    this.server = net.createServer((socket) => {
      this.sockets.add(socket);
      socket.on("close", () => this.sockets.delete(socket));
      this.handle(socket);
    });
  }

  listen(opts: ServeOptions = {}): Promise<net.AddressInfo> {
    return new Promise((resolve, reject) => {
      this.server.once("error", reject);
      this.server.listen(opts.port ?? 0, opts.host ?? "127.0.0.1", () => {
        this.server.removeListener("error", reject);
        resolve(this.server.address() as net.AddressInfo);
      });
    });
  }

  close(): Promise<void> {
    for (const socket of this.sockets) socket.destroy();
    this.sockets.clear();
    return new Promise((resolve) => this.server.close(() => resolve()));
  }

  private handle(socket: net.Socket): void {
    const reader = new LineReader();
    let session: Session | null = null;
    let helloSeen = false;
    let dead = false;

    const reply = (msg: ServerMsg) => socket.write(encode(msg));
    const fail = (message: string) => {
      if (dead) return;
      dead = true;
      reply({ type: "error", message });
      socket.end();
    };

    reply({ type: "hello", version: PROTOCOL_VERSION });

    socket.on("data", (chunk) => {
      if (dead) return;
      for (const line of reader.push(chunk)) {
        let msg;
        try {
          msg = parseClientMsg(line);
        } catch (e) {
          fail((e as Error).message);
          return;
        }
        if (!helloSeen) {
          if (msg.type !== "hello" || msg.version !== PROTOCOL_VERSION) {
            fail("version handshake failed");
            return;
          }
          helloSeen = true;
          continue;
        }
        switch (msg.type) {
          case "bye":
            dead = true;
            socket.end();
            return;
          case "reset": {
            if (session !== null) {
              fail("session already reset");
              return;
            }
            const reset = msg as ResetMsg;
            session = {
              instruction: reset.instruction,
              c: reset.c,
              frames: [],
              expectedStep: 0,
              helloSeen: true,
            };
            reply({ type: "ack" });
            break;
          }
          case "observe": {
            if (session === null) {
              fail("reset required");
              return;
            }
            const obs = msg as ObserveMsg;
            if (obs.step !== session.expectedStep) {
              fail(`expected step ${session.expectedStep}, got ${obs.step}`);
              return;
            }
            const { n_x, c, data } = obs.frame;
            if (n_x !== PATCH_COUNT || data.length !== n_x * c) {
              fail("bad frame: data length != n_x*c");
              return;
            }
            session.frames.push(regroup(obs));
            session.expectedStep += 1;
            let text: string;
            try {
              text = this.callback(session.instruction, session.frames);
            } catch (e) {
              fail(`agent callback failed: ${(e as Error).message}`);
              return;
            }
            reply({ type: "action", text });
            break;
          }
          default:
            fail(`unexpected message '${(msg as { type: string }).type}'`);
            return;
        }
      }
    });
    socket.on("error", () => {
      dead = true;
    });
  }
}

/** Start serving a callback policy; resolves to the bound address. */
export async function serve(
  callback: AgentCallback,
  opts: ServeOptions = {}
): Promise<{ server: AgentServer; address: net.AddressInfo }> {
  const server = new AgentServer(callback);
  const address = await server.listen(opts);
  return { server, address };
}
