"""Protocol test double: a scriptable evaluator speaking the wire format.

Reads request frames from stdin and answers with canned fitness values
(sum of the factor vector).  Behaviour switches for exercising the client:

    --reverse N      buffer N requests, then answer them in reverse order
    --error-substr S respond with an error frame when the id contains S
    --garbage-first  emit one non-JSON line before behaving normally
    --stray-first    emit one response with an unknown request id first
    --die-after N    exit abruptly after N responses
"""

import argparse
import json
import sys


def fitness_for(doc):
    return float(sum(doc["lambdas"]))


def respond(doc, error_substr):
    rid = doc["request_id"]
    if error_substr and error_substr in rid:
        return {"request_id": rid, "fitness": None, "per_sample": [], "error": "stub failure"}
    value = fitness_for(doc)
    return {"request_id": rid, "fitness": value, "per_sample": [value], "error": None}


def emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--reverse", type=int, default=0)
    parser.add_argument("--error-substr", default="")
    parser.add_argument("--garbage-first", action="store_true")
    parser.add_argument("--stray-first", action="store_true")
    parser.add_argument("--die-after", type=int, default=-1)
    args = parser.parse_args()

    if args.garbage_first:
        sys.stdout.write("this is not a frame\n")
        sys.stdout.flush()
    if args.stray_first:
        emit({"request_id": "nobody-waits-for-this", "fitness": 0.0, "per_sample": [], "error": None})

    sent = 0
    buffered = []
    for line in sys.stdin:
        if not line.strip():
            continue
        doc = json.loads(line)
        if args.reverse > 0:
            buffered.append(doc)
            if len(buffered) == args.reverse:
                for item in reversed(buffered):
                    emit(respond(item, args.error_substr))
                    sent += 1
                buffered = []
            continue
        emit(respond(doc, args.error_substr))
        sent += 1
        if args.die_after >= 0 and sent >= args.die_after:
            return


if __name__ == "__main__":
    main()
