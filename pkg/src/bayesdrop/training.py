"""SGD training loops for masked models and exact small-instance objectives.

Training algorithms
-------------------
``mle``       plain SGD on the unmasked log-likelihood.
``fixed``     standard dropout: masks drawn with a fixed dropout rate.
``uor``       Bayesian dropout, one keep-probability shared by all bits.
``for``       Bayesian dropout, one keep-probability per bit.
``grouped``   Bayesian dropout, one keep-probability per group of bits.

Every Bayesian step samples ``(x_t, y_t)`` and ``z_t ~ q``, takes a theta
ascent step on ``log p(y_t | x_t, z_t)`` and a logit step on

    score(z_t) * (log p(y_t | x_t, z_t) - baseline) + delta_t * d/drho [E_q log p(z) + H(q)]

The exact objectives below enumerate all ``2**m`` masks and are only meant
for small ``m``; they serve as oracles for the stochastic updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logit, logsumexp, xlogy

from . import _kernels

from .mask_distribution import (
    LOGIT_BOUND,
    MaskDistribution,
    PriorMask,
    all_masks,
    log_prob,
    regularizer_gradient,
    score_gradient,
)
from .models import LogisticRegressionModel

log = logging.getLogger(__name__)

ALGORITHMS = ("mle", "fixed", "uor", "for", "grouped")
BAYESIAN = ("uor", "for", "grouped")
MAX_EXACT_DIM = 10
BLOCK_STEPS = 256


class TrainingError(FloatingPointError):
    """A training step produced a non-finite quantity."""


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``eta_t = a / (1 + t/b)`` and ``eps_t = c / (1 + t/d)``.

    ``delta`` weights the closed-form regularizer.  ``"1/n"`` (the default)
    means one over the training-set size, fixed when training starts;
    ``"1/t"`` selects ``delta_t = 1 / (t + 1)``.
    """

    a: float = 1e-3
    b: float = 1e3
    c: float = 1e-3
    d: float = 1e4
    delta: float | str = "1/n"

    def __post_init__(self):
        if self.a < 0 or self.c < 0:
            raise ValueError("step scales a and c must be non-negative")
        if self.b <= 0 or self.d <= 0:
            raise ValueError("decay constants b and d must be positive")
        if isinstance(self.delta, str):
            if self.delta not in ("1/t", "1/n"):
                raise ValueError(f"unknown delta schedule {self.delta!r}")
        elif not self.delta > 0:
            raise ValueError("delta must be positive")

    def eta(self, t):
        return self.a / (1.0 + t / self.b)

    def eps(self, t):
        return self.c / (1.0 + t / self.d)

    def delta_at(self, t):
        if self.delta == "1/t":
            return 1.0 / (t + 1.0)
        if self.delta == "1/n":
            raise ValueError("delta '1/n' must be resolved against the data first")
        return float(self.delta)

    def for_data(self, n):
        """Copy with ``"1/n"`` replaced by ``1 / n``."""
        return replace(self, delta=1.0 / n) if self.delta == "1/n" else self


@dataclass
class TrainConfig:
    algorithm: str = "mle"
    iterations: int = 20000
    seed: int = 0
    dropout_rate: float = 0.5
    minibatch_size: int = 1
    baseline: bool = False
    baseline_decay: float = 0.99
    prior: PriorMask | None = None
    initial_keep_prob: float = 0.5
    groups: np.ndarray | None = None
    progress_every: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if not 0.0 < self.initial_keep_prob < 1.0:
            raise ValueError("initial keep probability must lie in (0, 1)")
        if self.minibatch_size < 1:
            raise ValueError("minibatch size must be at least 1")
        if self.algorithm == "grouped" and self.groups is None:
            raise ValueError("grouped algorithm needs a group assignment")

    def initial_distribution(self, dim):
        if self.algorithm == "uor":
            return MaskDistribution.shared(dim, self.initial_keep_prob)
        if self.algorithm == "for":
            return MaskDistribution.per_feature(np.full(dim, self.initial_keep_prob))
        if self.algorithm == "grouped":
            return MaskDistribution.grouped(self.groups, self.initial_keep_prob)
        if self.algorithm == "fixed":
            return MaskDistribution.shared(dim, 1.0 - self.dropout_rate)
        return None

    def prior_for(self, dim):
        prior = self.prior if self.prior is not None else PriorMask.uniform(dim)
        if prior.dim != dim:
            raise ValueError(f"prior has dim {prior.dim}, model mask needs {dim}")
        return prior


@dataclass
class TrainState:
    """Mutable state of one training run."""

    t: int
    model: object
    q: MaskDistribution | None
    rng: np.random.Generator
    baseline: float | None = None
    loglik_sum: float = 0.0
    loglik_count: int = 0
    history: list = field(default_factory=list)


def as_arrays(data):
    """``(inputs, labels)`` from a Dataset-like object or a pair."""
    if hasattr(data, "inputs"):
        return np.asarray(data.inputs, dtype=float), np.asarray(data.labels)
    X, Y = data
    return np.asarray(X, dtype=float), np.asarray(Y)


def _mean_grad(grads):
    if len(grads) == 1:
        return grads[0]
    if isinstance(grads[0], dict):
        return {k: sum(g[k] for g in grads) / len(grads) for k in grads[0]}
    return sum(grads) / len(grads)


def _draw_block(rng, n_rows, steps, batch, m, masked):
    # fixed draw order per block: sample indices, then mask uniforms
    idx = rng.integers(n_rows, size=(steps, batch))
    U = rng.random((steps, batch, m)) if masked else None
    return idx, U


def _blocks(state, n_rows, iterations, batch, masked):
    remaining = iterations
    while remaining > 0:
        k = min(BLOCK_STEPS, remaining)
        yield _draw_block(state.rng, n_rows, k, batch, state.model.mask_dim, masked)
        remaining -= k


def _step(state, X, Y, schedule, config, prior, idx, U, update_theta=True, update_rho=True):
    """One SGD step on pre-drawn rows ``idx`` and uniforms ``U``.

    Returns the theta gradient and the logit gradient (None when the logits
    are not updated).
    """
    model, q, t = state.model, state.q, state.t
    if q is None:
        ones = np.ones(model.mask_dim, dtype=np.int8)
        masks = [ones] * len(idx)
    else:
        keep = q.keep_probs
        masks = [(u < keep).astype(np.int8) for u in U]
    lls = [model.log_likelihood(X[i], Y[i], z) for i, z in zip(idx, masks)]
    g = _mean_grad([model.grad(X[i], Y[i], z) for i, z in zip(idx, masks)])
    if not model.gradient_is_finite(g):
        raise TrainingError(f"non-finite theta gradient at iteration {t}")
    ll_mean = float(np.mean(lls))
    if not np.isfinite(ll_mean):
        raise TrainingError(f"non-finite log-likelihood at iteration {t}")

    rho_grad = None
    if update_rho and config.algorithm in BAYESIAN:
        if config.baseline:
            if state.baseline is None:
                state.baseline = ll_mean
            b = state.baseline
        else:
            b = 0.0
        score_term = sum(score_gradient(q, z) * (ll - b) for z, ll in zip(masks, lls)) / len(masks)
        if not np.all(np.isfinite(score_term)):
            raise TrainingError(f"non-finite score-function term at iteration {t}")
        reg_term = schedule.delta_at(t) * regularizer_gradient(q, prior)
        if not np.all(np.isfinite(reg_term)):
            raise TrainingError(f"non-finite regularizer term at iteration {t}")
        rho_grad = score_term + reg_term

    if update_theta:
        model.apply_gradient(g, schedule.eta(t))
    if rho_grad is not None:
        q.logits += schedule.eps(t) * rho_grad
        np.clip(q.logits, -LOGIT_BOUND, LOGIT_BOUND, out=q.logits)
    if config.baseline:
        if state.baseline is None:
            state.baseline = ll_mean
        else:
            decay = config.baseline_decay
            state.baseline = decay * state.baseline + (1 - decay) * ll_mean

    state.loglik_sum += ll_mean
    state.loglik_count += 1
    state.t = t + 1
    return g, rho_grad


_KERNEL_ERRORS = {
    _kernels.BAD_THETA: "non-finite theta gradient",
    _kernels.BAD_LOGLIK: "non-finite log-likelihood",
    _kernels.BAD_SCORE: "non-finite score-function term",
    _kernels.BAD_REGULARIZER: "non-finite regularizer term",
}


def _fast_steps(state, X, Y, schedule, config, prior_logit, idx, U):
    """Compiled equivalent of calling ``_step`` for each row of ``idx``."""
    model, q = state.model, state.q
    masked = q is not None
    bayes = config.algorithm in BAYESIAN
    m = model.mask_dim
    if masked:
        logits, index = q.logits, q.index
    else:
        logits, index = np.zeros(1), np.zeros(m, dtype=np.intp)
    if U is None:
        U = np.empty((0, 0, 0))
    bias = np.array([model.bias])
    baseline = np.array([state.baseline or 0.0, float(state.baseline is not None)])
    out = np.zeros(3)
    delta = schedule.delta
    _kernels.logreg_block(
        model.theta, bias, logits, index, prior_logit, X, Y, idx, U, state.t,
        schedule.a, schedule.b, schedule.c, schedule.d,
        0.0 if delta == "1/t" else float(delta), delta == "1/t",
        model.fit_bias, masked, True, bayes,
        config.baseline, baseline, config.baseline_decay, out,
    )
    if out[0] != _kernels.OK:
        raise TrainingError(f"{_KERNEL_ERRORS[int(out[0])]} at iteration {int(out[1])}")
    model.bias = float(bias[0])
    if config.baseline:
        state.baseline = float(baseline[0]) if baseline[1] else None
    state.t = int(out[1])
    state.loglik_sum += float(out[2])
    state.loglik_count += idx.shape[0]


def _progress_record(state, schedule):
    t = state.t
    rec = {
        "iteration": t,
        "eta": schedule.eta(t),
        "eps": schedule.eps(t),
        "train_loglik": state.loglik_sum / max(state.loglik_count, 1),
        "mean_keep_prob": float(state.q.keep_probs.mean()) if state.q is not None else 1.0,
    }
    state.loglik_sum, state.loglik_count = 0.0, 0
    return rec


def _emit(state, schedule, progress):
    rec = _progress_record(state, schedule)
    state.history.append(rec)
    if progress is not None:
        progress(rec)
    log.debug("progress %s", rec)


def new_state(model, config, q=None):
    return TrainState(0, model.copy(), None if q is None else q.copy(),
                      np.random.default_rng(config.seed))


def _use_kernel(model, fast):
    return fast and isinstance(model, LogisticRegressionModel) and model.mask_dim > 0


def run(model, data, schedule, config, progress=None, q=None, fast=True):
    """Train according to ``config.algorithm``; returns the final TrainState.

    ``q`` overrides the initial mask distribution of Bayesian algorithms.
    Logistic regression runs through a compiled loop unless ``fast`` is
    False; both paths consume random numbers identically.
    """
    X, Y = as_arrays(data)
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    schedule = schedule.for_data(X.shape[0])
    m = model.mask_dim
    if q is None or config.algorithm not in BAYESIAN:
        q = config.initial_distribution(m)
    elif q.dim != m:
        raise ValueError(f"mask distribution has dim {q.dim}, model needs {m}")
    prior = config.prior_for(m) if config.algorithm in BAYESIAN else None
    state = new_state(model, config, q)
    every = config.progress_every or X.shape[0]
    masked = state.q is not None
    kernel = _use_kernel(state.model, fast)
    if kernel:
        X = np.ascontiguousarray(X)
        Y = np.ascontiguousarray(Y, dtype=float)
        prior_logit = logit(prior.keep_probs) if prior is not None else np.zeros(m)

    for idx, U in _blocks(state, X.shape[0], config.iterations, config.minibatch_size, masked):
        start = 0
        while start < idx.shape[0]:
            stop = min(idx.shape[0], start + every - state.t % every)
            if kernel:
                _fast_steps(state, X, Y, schedule, config, prior_logit,
                            idx[start:stop], None if U is None else U[start:stop])
            else:
                for k in range(start, stop):
                    _step(state, X, Y, schedule, config, prior, idx[k],
                          None if U is None else U[k])
            start = stop
            if state.t % every == 0:
                _emit(state, schedule, progress)
    if state.loglik_count:
        _emit(state, schedule, progress)
    return state


def train_mle(model, data, schedule, config, progress=None):
    if config.algorithm != "mle":
        config = replace(config, algorithm="mle")
    return run(model, data, schedule, config, progress).model


def train_standard_dropout(model, data, schedule, config, progress=None):
    if config.algorithm != "fixed":
        config = replace(config, algorithm="fixed")
    return run(model, data, schedule, config, progress).model


def train_bayesian_dropout(model, data, schedule, config, progress=None, q=None):
    """Returns ``(model, q)`` after joint theta / dropout-rate training."""
    if config.algorithm not in BAYESIAN:
        raise ValueError(f"{config.algorithm!r} is not a Bayesian dropout algorithm")
    state = run(model, data, schedule, config, progress, q)
    return state.model, state.q


def train_em_like(
    model,
    data,
    schedule,
    config,
    theta_tol=1e-2,
    rho_tol=1e-2,
    window=100,
    progress=None,
):
    """Alternate theta-only and logit-only phases.

    A phase ends once the norm of its gradient averaged over the last
    ``window`` steps drops below its tolerance.  The step counter ``t`` and
    the schedules run across phases.  Phase switches are reported to
    ``progress`` as records with a ``phase`` key.
    """
    if config.algorithm not in BAYESIAN:
        raise ValueError(f"{config.algorithm!r} is not a Bayesian dropout algorithm")
    X, Y = as_arrays(data)
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    schedule = schedule.for_data(X.shape[0])
    schedule = schedule.for_data(X.shape[0])
    m = model.mask_dim
    prior = config.prior_for(m)
    state = new_state(model, config, config.initial_distribution(m))
    phase, acc, n_acc = "theta", None, 0
    every = config.progress_every or X.shape[0]

    def report(rec):
        state.history.append(rec)
        if progress is not None:
            progress(rec)

    report({"iteration": 0, "phase": phase})
    for idx, U in _blocks(state, X.shape[0], config.iterations, config.minibatch_size, True):
        for k in range(idx.shape[0]):
            g, rho_g = _step(
                state, X, Y, schedule, config, prior, idx[k], U[k],
                update_theta=phase == "theta", update_rho=phase == "rho",
            )
            vec = _flatten(g) if phase == "theta" else rho_g
            acc = vec.copy() if acc is None else acc + vec
            n_acc += 1
            if n_acc == window:
                norm = float(np.linalg.norm(acc / n_acc))
                tol = theta_tol if phase == "theta" else rho_tol
                if norm < tol:
                    phase = "rho" if phase == "theta" else "theta"
                    report({"iteration": state.t, "phase": phase, "grad_norm": norm})
                acc, n_acc = None, 0
            if state.t % every == 0:
                _emit(state, schedule, progress)
    return state.model, state.q



def _flatten(g):
    if isinstance(g, dict):
        return np.concatenate([np.ravel(g[k]) for k in sorted(g)])
    return np.asarray(g, dtype=float)


# -- exact objectives by enumeration ------------------------------------------


def _check_exact(m):
    if m > MAX_EXACT_DIM:
        raise ValueError(f"mask dimension {m} too large for exact enumeration (max {MAX_EXACT_DIM})")


def mask_table(q, m):
    """All masks and their probabilities under ``q``.

    ``q`` is a MaskDistribution or an explicit probability vector indexed
    like ``all_masks(m)``.
    """
    _check_exact(m)
    Z = all_masks(m)
    if isinstance(q, MaskDistribution):
        if q.dim != m:
            raise ValueError(f"mask distribution has dim {q.dim}, model needs {m}")
        return Z, np.exp(log_prob(q, Z))
    probs = np.asarray(q, dtype=float)
    if probs.shape != (Z.shape[0],):
        raise ValueError(f"probability table must have {Z.shape[0]} entries")
    return Z, probs


def loglik_table(model, data):
    """``L[t, k] = log p(y_t | x_t, z_k)`` over all masks ``z_k``."""
    X, Y = as_arrays(data)
    m = model.mask_dim
    _check_exact(m)
    Z = all_masks(m)
    return np.stack([model.loglik_masked(x, y, Z) for x, y in zip(X, Y)])


def expected_loglik_exact(model, data, q):
    """First lower-bound term ``sum_t sum_z q(z) log p(y_t | x_t, z)``."""
    Z, probs = mask_table(q, model.mask_dim)
    return float(loglik_table(model, data).sum(axis=0) @ probs)


def expected_loglik_rho_grad_exact(model, data, q):
    """Logit gradient of ``expected_loglik_exact`` via ``E_q[score * loglik]``."""
    Z, probs = mask_table(q, model.mask_dim)
    total = loglik_table(model, data).sum(axis=0)
    return score_gradient(q, Z).T @ (probs * total)


def expected_loglik_theta_grad_exact(model, data, q):
    """Theta gradient of the first lower-bound term, mask by mask."""
    X, Y = as_arrays(data)
    Z, probs = mask_table(q, model.mask_dim)
    out = None
    for z, w in zip(Z, probs):
        for x, y in zip(X, Y):
            g = _flatten(model.grad(x, y, z))
            out = w * g if out is None else out + w * g
    return out


def lower_bound_exact(model, data, q, prior):
    """``E_q[log p(D | z)] + E_q[log p(z)] - E_q[log q(z)]`` by enumeration."""
    m = model.mask_dim
    if prior.dim != m:
        raise ValueError(f"prior has dim {prior.dim}, model mask needs {m}")
    Z, probs = mask_table(q, m)
    data_term = loglik_table(model, data).sum(axis=0) @ probs
    prior_term = probs @ prior.log_prob(Z)
    entropy_term = -xlogy(probs, probs).sum()
    return float(data_term + prior_term + entropy_term)


def _log_joint(model, data, prior):
    m = model.mask_dim
    if prior.dim != m:
        raise ValueError(f"prior has dim {prior.dim}, model mask needs {m}")
    _check_exact(m)
    return loglik_table(model, data).sum(axis=0) + prior.log_prob(all_masks(m))


def marginal_log_likelihood_exact(model, data, prior):
    """``log sum_z prod_t p(y_t | x_t, z) p(z)`` with log-sum-exp."""
    return float(logsumexp(_log_joint(model, data, prior)))


def posterior_exact(model, data, prior):
    """Mask posterior ``p(z | D)`` as a table indexed like ``all_masks``."""
    lj = _log_joint(model, data, prior)
    return np.exp(lj - logsumexp(lj))
