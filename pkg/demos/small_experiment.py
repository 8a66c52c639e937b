"""The four-algorithm comparison at smoke scale, written to disk.

The same pipeline at full size is ``bayesdrop experiment --scale paper``.
"""
import sys

from bayesdrop import RunSettings, run_experiment, write_experiment
from bayesdrop.evaluation import SMOKE_DATA, best_grids

out_dir = sys.argv[1] if len(sys.argv) > 1 else "smoke_results"
result = run_experiment(SMOKE_DATA, best_grids("smoke"), seed=0, settings=RunSettings(iterations=20_000))
paths = write_experiment(result, out_dir)

for row in result.algorithms:
    print(f"{row.algorithm:6s} {row.predictor:14s} test {row.test_accuracy:.3f}  schedule {row.schedule}")
print(f"bayes optimal {result.bayes_optimal:.3f}")
print("wrote", ", ".join(paths.values()))
