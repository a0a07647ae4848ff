"""Run the acceptance-scale DNS ensembles once so the acceptance suite can reuse them.

Usage: python tools/populate_cache.py [cache_dir] [names...]
"""
import logging
import os
import sys
import time

from tbh_closure.harness import cmd_dns, preset

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
cache = sys.argv[1] if len(sys.argv) > 1 else os.environ.get("TBH_ACCEPTANCE_CACHE", ".acceptance_cache")
names = sys.argv[2:] or ["close", "far", "mid", "extreme"]
for name in names:
    t = time.time()
    spec = preset(name, cache_dir=cache, output_dir=os.path.join(cache, "runs", name))
    cmd_dns(spec)
    logging.info("%s done in %.0f s", name, time.time() - t)
