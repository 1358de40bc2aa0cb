"""Full seeded benchmark: block outages plus one sensor hidden during training.

Takes several minutes on one CPU. Prints model and baseline scores on the
same target cells.
"""

import logging

from stimpute.benchmark import BenchmarkConfig, run_synthetic

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = run_synthetic(BenchmarkConfig())
for key, value in out.items():
    if key != "losses":
        print(f"{key:22s} {value}")
