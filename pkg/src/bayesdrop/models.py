"""Masked models: linear logistic regression and a three-layer sigmoid net.

Both models expose the same small surface used by the training loops:

``mask_dim``
    length of the mask vector ``z``.
``log_likelihood(x, y, z)`` / ``grad(x, y, z)``
    masked log-likelihood and its gradient over the parameters.
``predict_masked(x, Z)``
    model output for a batch of masks ``Z`` (shape ``(k, mask_dim)``).
``apply_gradient(g, step)``
    in-place ascent step ``theta += step * g``.

For the network the mask is the concatenation ``[z1, z2]`` of the input mask
and the hidden-unit mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .mask_distribution import MaskDistribution, all_masks, log_prob, sample_mask

MAX_ENUMERATION_DIM = 20


def _check_len(name, arr, n):
    if arr.shape[-1] != n:
        raise ValueError(f"{name} has length {arr.shape[-1]}, expected {n}")


def _parse_floats(text):
    return np.array([float(v) for v in text.split(",") if v], dtype=float)


def _format_floats(values):
    return ",".join(repr(float(v)) for v in np.ravel(values))


# -- logistic regression -----------------------------------------------------


@dataclass
class LogisticRegressionModel:
    """``p(y=1 | x, z) = sigmoid(theta . (z * x) + bias)``.

    The bias is off by default (``fit_bias=False`` keeps it at zero); when
    enabled it is never masked.
    """

    theta: np.ndarray
    bias: float = 0.0
    fit_bias: bool = False

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float).reshape(-1)
        self.bias = float(self.bias)
        if not np.all(np.isfinite(self.theta)) or not math.isfinite(self.bias):
            raise ValueError("logistic regression weights must be finite")

    @classmethod
    def zeros(cls, n, fit_bias=False):
        return cls(np.zeros(n), 0.0, fit_bias)

    @property
    def n_features(self):
        return self.theta.size

    @property
    def mask_dim(self):
        return self.theta.size

    def copy(self):
        return LogisticRegressionModel(self.theta.copy(), self.bias, self.fit_bias)

    def logit(self, x, z=None):
        x = np.asarray(x, dtype=float)
        _check_len("x", x, self.n_features)
        if z is None:
            return x @ self.theta + self.bias
        z = np.asarray(z)
        _check_len("z", z, self.n_features)
        return (z * x) @ self.theta + self.bias

    def log_likelihood(self, x, y, z):
        return logreg_log_likelihood(self, x, y, z)

    def grad(self, x, y, z):
        return logreg_grad(self, x, y, z)

    def apply_gradient(self, g, step):
        if self.fit_bias:
            self.theta += step * g[:-1]
            self.bias += step * float(g[-1])
        else:
            self.theta += step * g

    def gradient_is_finite(self, g):
        return bool(np.all(np.isfinite(g)))

    def predict_masked(self, x, Z):
        """Probability of class 1 under each mask row of ``Z``."""
        Z = np.asarray(Z)
        _check_len("mask batch", Z, self.n_features)
        return expit(Z @ (self.theta * np.asarray(x, dtype=float)) + self.bias)

    def loglik_masked(self, x, y, Z):
        u = np.asarray(Z) @ (self.theta * np.asarray(x, dtype=float)) + self.bias
        return _bernoulli_loglik(u, y)

    def predict(self, X):
        """Unmasked class-1 probability for one input or a batch of rows."""
        return expit(self.logit(X))

    def to_record(self):
        return (
            f"logistic_regression n={self.n_features} bias={self.bias!r} "
            f"fit_bias={int(self.fit_bias)} theta={_format_floats(self.theta)}"
        )


def _bernoulli_loglik(u, y):
    # log sigmoid(u) for y = 1, log(1 - sigmoid(u)) = log sigmoid(-u) for y = 0
    return log_expit(u) if y else log_expit(-u)


def logreg_log_likelihood(model, x, y, z):
    u = float(model.logit(x, z))
    return float(_bernoulli_loglik(u, y))


def logreg_grad(model, x, y, z):
    """``(y - sigmoid(u)) * (z * x)``, plus a trailing bias entry if fitted."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z)
    residual = float(y) - float(expit(model.logit(x, z)))
    g = residual * (z * x)
    if model.fit_bias:
        return np.append(g, residual)
    return g


def logreg_gaussian_moments(model, x, keep):
    """Mean and variance of ``u = theta . (z * x)`` for independent ``z_i ~ Ber(keep_i)``."""
    x = np.asarray(x, dtype=float)
    keep = np.asarray(keep, dtype=float)
    _check_len("x", x, model.n_features)
    _check_len("keep", keep, model.n_features)
    w = model.theta * x
    mu = w @ keep + model.bias
    s2 = (w * w) @ (keep * (1.0 - keep))
    return mu, s2


def logreg_predict_gaussian(model, x, keep):
    """Class-1 probability with the masked logit treated as a Gaussian.

    ``sigmoid(mu / sqrt(1 + pi s2 / 8))``; works on a single input or on a
    batch of rows.
    """
    mu, s2 = logreg_gaussian_moments(model, x, keep)
    return expit(mu / np.sqrt(1.0 + np.pi * s2 / 8.0))


def logreg_predict_expected_mask(model, x, keep):
    x = np.asarray(x, dtype=float)
    keep = np.asarray(keep, dtype=float)
    _check_len("x", x, model.n_features)
    _check_len("keep", keep, model.n_features)
    return expit(x @ (model.theta * keep) + model.bias)


# -- three-layer network -----------------------------------------------------


@dataclass
class ThreeLayerNet:
    """``h = sigmoid(W1 (z1 * x) + b1)``, ``y = sigmoid(W2 (z2 * h) + b2)``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.W1 = np.array(self.W1, dtype=float, ndmin=2)
        self.b1 = np.array(self.b1, dtype=float).reshape(-1)
        self.W2 = np.array(self.W2, dtype=float, ndmin=2)
        self.b2 = np.array(self.b2, dtype=float).reshape(-1)
        m, n = self.W1.shape
        l = self.W2.shape[0]
        if self.b1.size != m or self.W2.shape[1] != m or self.b2.size != l:
            raise ValueError(
                f"inconsistent shapes W1{self.W1.shape} b1({self.b1.size}) "
                f"W2{self.W2.shape} b2({self.b2.size})"
            )
        for name in ("W1", "b1", "W2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @classmethod
    def initialize(cls, n, m, l, rng, scale=0.1):
        """Uniform ``[-scale, scale]`` weights and biases."""
        return cls(
            rng.uniform(-scale, scale, (m, n)),
            rng.uniform(-scale, scale, m),
            rng.uniform(-scale, scale, (l, m)),
            rng.uniform(-scale, scale, l),
        )

    @property
    def n_inputs(self):
        return self.W1.shape[1]

    @property
    def n_hidden(self):
        return self.W1.shape[0]

    @property
    def n_outputs(self):
        return self.W2.shape[0]

    @property
    def mask_dim(self):
        return self.n_inputs + self.n_hidden

    @property
    def layer_groups(self):
        """Group assignment tying input bits (0) and hidden bits (1)."""
        return np.repeat([0, 1], [self.n_inputs, self.n_hidden])

    def copy(self):
        return ThreeLayerNet(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def split_mask(self, z):
        z = np.asarray(z)
        _check_len("mask", z, self.mask_dim)
        return z[..., : self.n_inputs], z[..., self.n_inputs :]

    def log_likelihood(self, x, y, z):
        z1, z2 = self.split_mask(z)
        return nn_log_likelihood(self, x, y, z1, z2)

    def grad(self, x, y, z):
        z1, z2 = self.split_mask(z)
        return nn_grad(self, x, y, z1, z2)

    def apply_gradient(self, g, step):
        self.W1 += step * g["W1"]
        self.b1 += step * g["b1"]
        self.W2 += step * g["W2"]
        self.b2 += step * g["b2"]

    def gradient_is_finite(self, g):
        return all(np.all(np.isfinite(v)) for v in g.values())

    def predict_masked(self, x, Z):
        Z1, Z2 = self.split_mask(np.atleast_2d(Z))
        x = np.asarray(x, dtype=float)
        H = expit((Z1 * x) @ self.W1.T + self.b1)
        return expit((Z2 * H) @ self.W2.T + self.b2)

    def loglik_masked(self, x, y, Z):
        out = self.predict_masked(x, Z)
        return -np.sum((np.asarray(y, dtype=float) - out) ** 2, axis=-1)

    def predict(self, X):
        return expit(expit(np.asarray(X) @ self.W1.T + self.b1) @ self.W2.T + self.b2)

    def to_record(self):
        return (
            f"three_layer_net n={self.n_inputs} m={self.n_hidden} l={self.n_outputs} "
            f"W1={_format_floats(self.W1)} b1={_format_floats(self.b1)} "
            f"W2={_format_floats(self.W2)} b2={_format_floats(self.b2)}"
        )


def _nn_check(net, x, z1, z2):
    x = np.asarray(x, dtype=float)
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    _check_len("x", x, net.n_inputs)
    _check_len("z1", z1, net.n_inputs)
    _check_len("z2", z2, net.n_hidden)
    return x, z1, z2


def nn_forward(net, x, z1, z2):
    x, z1, z2 = _nn_check(net, x, z1, z2)
    h = expit(net.W1 @ (z1 * x) + net.b1)
    return expit(net.W2 @ (z2 * h) + net.b2)


def nn_log_likelihood(net, x, y, z1, z2):
    """Negative squared error, the log-likelihood up to a constant."""
    y = np.asarray(y, dtype=float)
    _check_len("y", y, net.n_outputs)
    r = y - nn_forward(net, x, z1, z2)
    return -float(r @ r)


def nn_grad(net, x, y, z1, z2):
    """Backpropagated gradient of ``nn_log_likelihood`` for every block."""
    x, z1, z2 = _nn_check(net, x, z1, z2)
    y = np.asarray(y, dtype=float)
    _check_len("y", y, net.n_outputs)
    xm = z1 * x
    h = expit(net.W1 @ xm + net.b1)
    hm = z2 * h
    out = expit(net.W2 @ hm + net.b2)

    d_out = 2.0 * (y - out) * out * (1.0 - out)
    d_hidden = (net.W2.T @ d_out) * z2 * h * (1.0 - h)
    return {
        "W1": np.outer(d_hidden, xm),
        "b1": d_hidden,
        "W2": np.outer(d_out, hm),
        "b2": d_out,
    }


def predict_expected_mask(model, x, q):
    """Plug the mean mask into the model (halved weights at keep 0.5)."""
    keep = q.keep_probs if isinstance(q, MaskDistribution) else np.asarray(q, dtype=float)
    if isinstance(model, LogisticRegressionModel):
        return logreg_predict_expected_mask(model, x, keep)
    return model.predict_masked(x, keep[None, :])[0]


# -- averaging over masks ----------------------------------------------------


def predict_enumerate(model, x, q):
    """Exact ``sum_z q(z) f(x; z)`` over all ``2**mask_dim`` masks."""
    m = model.mask_dim
    if q.dim != m:
        raise ValueError(f"mask distribution has dim {q.dim}, model needs {m}")
    if m > MAX_ENUMERATION_DIM:
        raise ValueError(f"mask dimension {m} too large to enumerate (max {MAX_ENUMERATION_DIM})")
    Z = all_masks(m)
    weights = np.exp(log_prob(q, Z))
    preds = model.predict_masked(x, Z)
    return weights @ preds


def predict_mc(model, x, q, n_samples, rng, return_stderr=False):
    """Average prediction over ``n_samples`` masks drawn from ``q``."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    Z = np.stack([sample_mask(q, rng) for _ in range(n_samples)])
    preds = model.predict_masked(x, Z)
    mean = preds.mean(axis=0)
    if not return_stderr:
        return mean
    stderr = preds.std(axis=0, ddof=1) / np.sqrt(n_samples) if n_samples > 1 else np.inf
    return mean, stderr


@dataclass(frozen=True)
class PredictionVariant:
    """How to turn a trained model plus mask distribution into a prediction.

    ``kind`` is one of ``plain`` (no mask), ``enumerate``, ``monte_carlo``,
    ``expected_mask`` and ``gaussian``.
    """

    kind: str
    n_samples: int = 0

    KINDS = ("plain", "enumerate", "monte_carlo", "expected_mask", "gaussian")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown prediction variant {self.kind!r}")
        if self.kind == "monte_carlo" and self.n_samples < 1:
            raise ValueError("monte_carlo prediction needs n_samples >= 1")

    def predict(self, model, X, q=None, rng=None):
        """Class-1 probabilities (or network outputs) for the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        if self.kind == "plain":
            return model.predict(X)
        if q is None:
            raise ValueError(f"{self.kind} prediction needs a mask distribution")
        if self.kind == "expected_mask":
            if isinstance(model, LogisticRegressionModel):
                return logreg_predict_expected_mask(model, X, q.keep_probs)
            return np.array([predict_expected_mask(model, x, q) for x in X])
        if self.kind == "gaussian":
            if not isinstance(model, LogisticRegressionModel):
                raise ValueError("gaussian prediction is defined for logistic regression only")
            return logreg_predict_gaussian(model, X, q.keep_probs)
        if self.kind == "enumerate":
            return np.array([predict_enumerate(model, x, q) for x in X])
        if rng is None:
            raise ValueError("monte_carlo prediction needs a random generator")
        return np.array([predict_mc(model, x, q, self.n_samples, rng) for x in X])


PLAIN = PredictionVariant("plain")
EXPECTED_MASK = PredictionVariant("expected_mask")
GAUSSIAN = PredictionVariant("gaussian")
ENUMERATE = PredictionVariant("enumerate")


# -- checkpoints ---------------------------------------------------------------


def model_from_record(text):
    tokens = text.split()
    if not tokens:
        raise ValueError("empty model record")
    tag, fields = tokens[0], dict(tok.split("=", 1) for tok in tokens[1:])
    try:
        if tag == "logistic_regression":
            theta = _parse_floats(fields["theta"])
            if theta.size != int(fields["n"]):
                raise ValueError("theta length does not match n")
            return LogisticRegressionModel(
                theta, float(fields.get("bias", 0.0)), bool(int(fields.get("fit_bias", 0)))
            )
        if tag == "three_layer_net":
            n, m, l = int(fields["n"]), int(fields["m"]), int(fields["l"])
            return ThreeLayerNet(
                _parse_floats(fields["W1"]).reshape(m, n),
                _parse_floats(fields["b1"]),
                _parse_floats(fields["W2"]).reshape(l, m),
                _parse_floats(fields["b2"]),
            )
    except KeyError as exc:
        raise ValueError(f"{tag} record missing {exc.args[0]}") from None
    raise ValueError(f"unknown model tag {tag!r}")
