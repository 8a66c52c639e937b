"""A three-layer sigmoid network with one learned rate per layer.

Input bits share one keep-probability and hidden bits another.  The
targets depend on two of six inputs.
"""
import numpy as np

from bayesdrop import StepSchedule, ThreeLayerNet, TrainConfig, train_bayesian_dropout
from bayesdrop.models import predict_expected_mask

rng = np.random.default_rng(4)
X = rng.normal(size=(300, 6))
Y = np.stack([1 / (1 + np.exp(-(2 * X[:, 0] - X[:, 1]))), 1 / (1 + np.exp(-X[:, 1]))], axis=1)

net = ThreeLayerNet.initialize(6, 8, 2, rng, scale=0.5)
config = TrainConfig("grouped", iterations=30_000, seed=5, groups=net.layer_groups, baseline=True)
schedule = StepSchedule(a=0.5, b=1e4, c=0.05, d=1e4, delta=1 / 300)

def mse(n, q=None):
    if q is None:
        preds = n.predict(X)
    else:
        preds = np.stack([predict_expected_mask(n, x, q) for x in X])
    return float(np.mean((preds - Y) ** 2))

print(f"squared error before training {mse(net):.4f}")
trained, q = train_bayesian_dropout(net, (X, Y), schedule, config)
print(f"squared error after training  {mse(trained, q):.4f}")
print(f"learned keep probabilities: inputs {q.keep_probs[0]:.3f}, hidden {q.keep_probs[6]:.3f}")
