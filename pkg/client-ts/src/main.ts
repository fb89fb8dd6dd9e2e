/**
 * Command-line entry: serve the example agent (or the stop agent) on a TCP
 * port. The first stdout line is always `listening on <host>:<port>` so
 * harnesses can scrape the bound address when using port 0.
 */

import { exampleAgent, stopAgent } from "./exampleAgent";
import { serve } from "./server";

function parseArgs(argv: string[]): { host: string; port: number; agent: string; steps: number } {
  const opts = { host: "127.0.0.1", port: 0, agent: "explore", steps: 30 };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--host":
        opts.host = argv[++i];
        break;
      case "--port":
        opts.port = Number(argv[++i]);
        break;
      case "--agent":
        opts.agent = argv[++i];
        break;
      case "--steps":
        opts.steps = Number(argv[++i]);
        break;
      default:
        console.error(`unknown flag ${argv[i]}`);
        process.exit(1);
    }
  }
  if (!Number.isInteger(opts.port) || opts.port < 0 || opts.port > 65535) {
    console.error(`bad port ${opts.port}`);
    process.exit(1);
  }
  if (opts.agent !== "explore" && opts.agent !== "stop") {
    console.error(`unknown agent '${opts.agent}' (explore|stop)`);
    process.exit(1);
  }
  return opts;
}

async function main(): Promise<void> {
  const opts = parseArgs(process.argv.slice(2));
  const callback = opts.agent === "stop" ? stopAgent() : exampleAgent(opts.steps);
  const { server, address } = await serve(callback, { host: opts.host, port: opts.port });
  console.log(`listening on ${address.address}:${address.port}`);
  const shutdown = () => {
    void server.close().then(() => process.exit(0));
  };
  process.on("SIGINT", shutdown);
  process.on("SIGTERM", shutdown);
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
