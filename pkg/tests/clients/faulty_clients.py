"""Deliberately broken protocol stubs for fault-injection tests.

Run as: python faulty_clients.py <mode>
modes: wrong_version, wrong_id, die_mid_session, garbage
"""

import json
import sys


def main(mode: str) -> int:
    for line in sys.stdin:
        record = json.loads(line)
        kind = record.get("kind")
        if kind == "hello":
            version = "0" if mode == "wrong_version" else "1"
            print(json.dumps({"kind": "hello", "version": version}), flush=True)
        elif kind == "fit":
            print(json.dumps({"kind": "ok"}), flush=True)
        elif kind == "query_cdf":
            if mode == "die_mid_session":
                return 3
            if mode == "garbage":
                print("}{not json", flush=True)
                continue
            offset = 1 if mode == "wrong_id" else 0
            print(
                json.dumps(
                    {
                        "kind": "cdf",
                        "id": record["id"] + offset,
                        "values": [0.5] * len(record["y_grid"]),
                    }
                ),
                flush=True,
            )
        elif kind == "bye":
            return 0
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1]))
