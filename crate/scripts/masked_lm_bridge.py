#!/usr/bin/env python3
"""Subprocess bridge exposing a HuggingFace fill-mask model to the harness.

Configure a local-masked endpoint with this script as the asset:

    {"name": "bert-large-uncased", "kind": "local-masked",
     "asset": "scripts/masked_lm_bridge.py",
     "args": ["bert-large-uncased"]}

Protocol: one JSON request on stdin, one JSON reply on stdout.

    {"kind": "fill_mask", "masked_text": "..."}  ->  [["token", prob], ...]

The model is loaded per invocation; for long campaigns put this behind the
response cache (cache_dir in the config) or keep a server variant warm.
"""

import json
import sys


def main() -> int:
    model_name = sys.argv[1] if len(sys.argv) > 1 else "bert-large-uncased"
    request = json.loads(sys.stdin.read())
    if request.get("kind") != "fill_mask":
        print("this bridge only serves fill_mask requests", file=sys.stderr)
        return 1

    from transformers import pipeline

    fill = pipeline("fill-mask", model=model_name, top_k=50)
    predictions = fill(request["masked_text"])
    out = [[p["token_str"].strip(), float(p["score"])] for p in predictions]
    json.dump(out, sys.stdout)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
