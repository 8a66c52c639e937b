"""Four ways to predict with a masked logistic regression.

Exact enumeration over masks is the reference; Monte Carlo converges to
it; the Gaussian approximation is close and cheap; plugging in the mean
mask ignores the spread of the pre-activation and is overconfident.
"""
import numpy as np

from bayesdrop import LogisticRegressionModel, MaskDistribution
from bayesdrop import predict_enumerate, predict_expected_mask, predict_mc
from bayesdrop.models import logreg_predict_gaussian

rng = np.random.default_rng(3)
m = 12
model = LogisticRegressionModel(rng.normal(0, 1.0, m))
q = MaskDistribution.per_feature(rng.uniform(0.2, 0.9, m))

print(f"{'exact':>8} {'mc':>8} {'gauss':>8} {'mean':>8}")
for _ in range(6):
    x = rng.normal(0, 1.5, m)
    exact = predict_enumerate(model, x, q)
    mc = predict_mc(model, x, q, 20_000, rng)
    gauss = logreg_predict_gaussian(model, x, q.keep_probs)
    mean = predict_expected_mask(model, x, q)
    print(f"{exact:8.4f} {mc:8.4f} {float(gauss):8.4f} {float(mean):8.4f}")
