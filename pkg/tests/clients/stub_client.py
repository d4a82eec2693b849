"""Minimal well-behaved protocol stub used by the transport tests.

Serves a fixed logistic CDF around a fitted per-arm mean; not a real model,
just enough to exercise every record kind correctly.
"""

import json
import math
import sys


def main() -> int:
    fitted = None
    for line in sys.stdin:
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            print(json.dumps({"kind": "error", "id": None, "code": "bad_json", "message": line.strip()}), flush=True)
            continue
        kind = record.get("kind")
        if kind == "hello":
            print(json.dumps({"kind": "hello", "version": "1"}), flush=True)
        elif kind == "fit":
            rows = record["rows"]
            means = {0: 0.0, 1: 0.0}
            counts = {0: 0, 1: 0}
            treated = 0
            for row in rows:
                a = int(row[-2])
                means[a] += row[-1]
                counts[a] += 1
                treated += a
            fitted = {
                "mu": {a: (means[a] / counts[a] if counts[a] else 0.0) for a in (0, 1)},
                "p": (treated + 1.0) / (len(rows) + 2.0),
            }
            print(json.dumps({"kind": "ok"}), flush=True)
        elif kind in ("query_cdf", "query_prob"):
            if fitted is None:
                print(
                    json.dumps(
                        {"kind": "error", "id": record.get("id"), "code": "not_fitted", "message": "fit first"}
                    ),
                    flush=True,
                )
                continue
            if kind == "query_cdf":
                mu = fitted["mu"][int(record["a"])]

                def sigmoid(z):
                    if z >= 0:
                        return 1.0 / (1.0 + math.exp(-z))
                    e = math.exp(z)
                    return e / (1.0 + e)

                values = [sigmoid(y - mu) for y in record["y_grid"]]
                print(json.dumps({"kind": "cdf", "id": record["id"], "values": values}), flush=True)
            else:
                print(json.dumps({"kind": "prob", "id": record["id"], "values": [fitted["p"]]}), flush=True)
        elif kind == "absorb":
            if fitted is None:
                print(json.dumps({"kind": "error", "id": None, "code": "not_fitted", "message": "fit first"}), flush=True)
                continue
            print(json.dumps({"kind": "ok"}), flush=True)
        elif kind == "bye":
            print(json.dumps({"kind": "bye"}), flush=True)
            return 0
        else:
            print(json.dumps({"kind": "error", "id": record.get("id"), "code": "unknown_kind", "message": str(kind)}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
