"""Feature-wise dropout rates learned on a small benchmark.

Ten informative features hidden among ninety noise features.  A shared
learned rate collapses toward zero while per-feature rates drift apart:
low on the informative block, staying high on the noise.
"""
import numpy as np

from bayesdrop import DataConfig, LogisticRegressionModel, StepSchedule, TrainConfig
from bayesdrop import generate, train_bayesian_dropout

data = generate(DataConfig(n_informative=10, n_noise=90, mean_shift=0.3,
                           n_train=500, n_valid=0, n_test=0, seed=1))
train = data["train"]
schedule = StepSchedule(a=1e-2, b=1e4, c=3e-2, d=1e5, delta=1e-3)

for algorithm in ("uor", "for"):
    config = TrainConfig(algorithm, iterations=200_000, seed=2, baseline=True)
    model, q = train_bayesian_dropout(LogisticRegressionModel.zeros(100), train, schedule, config)
    rates = q.dropout_rates
    print(f"{algorithm}: mean dropout rate informative {rates[:10].mean():.3f}, "
          f"noise {rates[10:].mean():.3f}")

print("\nper-feature rates, first 15 columns:")
print(np.round(rates[:15], 2))
