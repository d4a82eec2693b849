/**
 * Stdio server speaking the line-delimited predictive-backend protocol,
 * version "1".  One JSON record per line on stdin; every reply is one JSON
 * line on stdout.  Malformed or out-of-order requests produce an error
 * record carrying the offending request id; the session continues until a
 * `bye` record arrives, which is acknowledged and followed by a clean exit.
 *
 * Record kinds handled: hello{version}, fit{rows}, query_cdf{id, x, a,
 * y_grid}, query_prob{id, x}, absorb{x, a, y} (y null updates the treatment
 * model only), bye.  A second `fit` replaces the training state, which is
 * how a fresh absorb chain is started.
 *
 * Swapping in a heavier model is a matter of replacing FittedModels with
 * anything exposing cdf/prob/absorb with the same shapes.
 */

import { createInterface } from "node:readline";
import { FittedModels } from "./model.js";

const VERSION = "1";

type Record = { kind?: string; id?: number; [key: string]: unknown };

function send(record: object): void {
  process.stdout.write(JSON.stringify(record) + "\n");
}

function sendError(id: number | null, code: string, message: string): void {
  send({ kind: "error", id, code, message });
}

function asNumberArray(value: unknown, name: string): number[] {
  if (!Array.isArray(value) || !value.every((v) => typeof v === "number" && Number.isFinite(v))) {
    throw new Error(`${name} must be an array of finite numbers`);
  }
  return value as number[];
}

let fitted: FittedModels | null = null;

function handle(record: Record): boolean {
  const id = typeof record.id === "number" ? record.id : null;
  switch (record.kind) {
    case "hello": {
      send({ kind: "hello", version: VERSION });
      return true;
    }
    case "fit": {
      const rows = record.rows;
      if (!Array.isArray(rows)) {
        sendError(id, "bad_request", "fit requires rows");
        return true;
      }
      fitted = new FittedModels(rows as number[][]);
      send({ kind: "ok" });
      return true;
    }
    case "query_cdf": {
      if (fitted === null) {
        sendError(id, "not_fitted", "query before fit");
        return true;
      }
      const x = asNumberArray(record.x, "x");
      const grid = asNumberArray(record.y_grid, "y_grid");
      const arm = record.a;
      if (arm !== 0 && arm !== 1) {
        sendError(id, "bad_request", "a must be 0 or 1");
        return true;
      }
      send({ kind: "cdf", id, values: fitted.cdf(x, arm, grid) });
      return true;
    }
    case "query_prob": {
      if (fitted === null) {
        sendError(id, "not_fitted", "query before fit");
        return true;
      }
      const x = asNumberArray(record.x, "x");
      send({ kind: "prob", id, values: [fitted.prob(x)] });
      return true;
    }
    case "absorb": {
      if (fitted === null) {
        sendError(id, "not_fitted", "absorb before fit");
        return true;
      }
      const x = asNumberArray(record.x, "x");
      const arm = record.a;
      if (arm !== 0 && arm !== 1) {
        sendError(id, "bad_request", "a must be 0 or 1");
        return true;
      }
      const y = record.y;
      if (y !== null && typeof y !== "number") {
        sendError(id, "bad_request", "y must be a number or null");
        return true;
      }
      fitted.absorb(x, arm, y as number | null);
      send({ kind: "ok" });
      return true;
    }
    case "bye": {
      send({ kind: "bye" });
      return false;
    }
    default: {
      sendError(id, "unknown_kind", String(record.kind));
      return true;
    }
  }
}

const reader = createInterface({ input: process.stdin, terminal: false });
reader.on("line", (line: string) => {
  let record: Record;
  try {
    record = JSON.parse(line);
  } catch {
    sendError(null, "bad_json", line.slice(0, 120));
    return;
  }
  let keep = true;
  try {
    keep = handle(record);
  } catch (err) {
    sendError(
      typeof record.id === "number" ? record.id : null,
      "internal",
      err instanceof Error ? err.message : String(err),
    );
  }
  if (!keep) {
    reader.close();
    process.exit(0);
  }
});
