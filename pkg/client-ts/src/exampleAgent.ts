/**
 * Scripted heuristic agent: steer toward the deepest-looking ray column,
 * move forward when roughly centered, and stop after a step budget. Proves
 * end-to-end integration; it is not meant to navigate well.
 */

import { AgentCallback, Frame } from "./server";

const RAY_COLUMNS = 16;
const FOV_DEG = 90;
const CENTER_TOLERANCE_DEG = 10;

/** Depth per ray column: channel 0 is column-constant, read row 0. */
export function columnDepths(frame: Frame): number[] {
  const depths: number[] = [];
  for (let j = 0; j < RAY_COLUMNS; j++) depths.push(frame[j][0]);
  return depths;
}

/** Relative bearing (degrees, positive = left) of a ray column. */
export function columnBearingDeg(j: number): number {
  return -FOV_DEG / 2 + (j + 0.5) * (FOV_DEG / RAY_COLUMNS);
}

export function exampleAgent(maxSteps = 30): AgentCallback {
  return (_instruction: string, frames: Frame[]): string => {
    if (frames.length >= maxSteps) {
      return "The next action is stop.";
    }
    const depths = columnDepths(frames[frames.length - 1]);
    let best = 0;
    for (let j = 1; j < depths.length; j++) {
      if (depths[j] > depths[best]) best = j;
    }
    const bearing = columnBearingDeg(best);
    if (Math.abs(bearing) > CENTER_TOLERANCE_DEG) {
      const amount = Math.min(90, Math.max(5, Math.round(Math.abs(bearing))));
      const side = bearing > 0 ? "left" : "right";
      return `The next action is turn ${side} ${amount} degrees.`;
    }
    return "The next action is move forward 25 cm.";
  };
}

/** Degenerate agent that stops immediately; used for golden transcripts. */
export function stopAgent(): AgentCallback {
  return () => "The next action is stop.";
}
