export { AgentCallback, AgentServer, Frame, ServeOptions, serve } from "./server";
export { exampleAgent, stopAgent } from "./exampleAgent";
export {
  LineReader,
  PATCH_COUNT,
  PROTOCOL_VERSION,
  encode,
  parseClientMsg,
} from "./protocol";
