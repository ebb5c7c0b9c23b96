#!/usr/bin/env python3
import sys

mode = sys.argv[1]
for line in sys.stdin:
    if mode == "garbage":
        print("not json at all", flush=True)
    elif mode == "range":
        print('{"entail": 1.5, "neutral": 0.0, "contradict": -0.5}', flush=True)
    elif mode == "sum":
        print('{"entail": 0.5, "neutral": 0.5, "contradict": 0.5}', flush=True)
    elif mode == "missing":
        print('{"entail": 1.0}', flush=True)
    elif mode == "exit":
        sys.exit(0)
    elif mode == "slow":
        import time
        time.sleep(5)
