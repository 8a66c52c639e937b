"""Independent Bernoulli distributions over binary masks.

A mask ``z`` has one bit per input feature (or hidden unit); ``z_i = 1``
keeps the feature.  The distribution is stored through unconstrained logits
``rho`` so that the keep-probability ``lam_i = expit(rho[g(i)])`` always lies
in (0, 1).  The index map ``g`` ties features together:

* ``shared``      -- one logit for every feature,
* ``per_feature`` -- one logit per feature,
* ``grouped``     -- one logit per group of features.

The dropout rate seen by users is ``1 - lam``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logit, xlogy

LOGIT_BOUND = 12.0
MODES = ("shared", "per_feature", "grouped")


def _as_mask(z, dim):
    z = np.asarray(z)
    if z.shape[-1] != dim:
        raise ValueError(f"mask length {z.shape[-1]} does not match dimension {dim}")
    return z


def all_masks(m):
    """Every binary mask of length ``m`` as a ``(2**m, m)`` int8 array.

    Row ``k`` holds the binary digits of ``k`` (least significant bit first).
    """
    if m > 24:
        raise ValueError(f"refusing to enumerate 2**{m} masks")
    codes = np.arange(2**m, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(np.int8)


@dataclass
class MaskDistribution:
    """Product of Bernoulli keep-probabilities over ``dim`` mask bits."""

    mode: str
    dim: int
    logits: np.ndarray
    groups: np.ndarray | None = None
    index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.dim = int(self.dim)
        self.logits = np.array(self.logits, dtype=float).reshape(-1)
        if self.mode == "shared":
            expected = 1
            self.index = np.zeros(self.dim, dtype=np.intp)
        elif self.mode == "per_feature":
            expected = self.dim
            self.index = np.arange(self.dim, dtype=np.intp)
        else:
            if self.groups is None:
                raise ValueError("grouped mode needs a group assignment")
            self.groups = np.asarray(self.groups, dtype=np.intp).reshape(-1)
            if self.groups.size != self.dim:
                raise ValueError("group assignment length must equal dim")
            if self.groups.size and self.groups.min() < 0:
                raise ValueError("group indices must be non-negative")
            expected = int(self.groups.max()) + 1 if self.groups.size else 0
            self.index = self.groups
        if self.logits.size != expected:
            raise ValueError(
                f"{self.mode} mode over {self.dim} bits needs {expected} logits, "
                f"got {self.logits.size}"
            )
        if np.isnan(self.logits).any():
            raise ValueError("logits must not be NaN")

    # -- constructors -------------------------------------------------------

    @classmethod
    def shared(cls, dim, keep_prob=0.5):
        return cls("shared", dim, [logit(keep_prob)])

    @classmethod
    def per_feature(cls, keep_probs):
        keep_probs = np.asarray(keep_probs, dtype=float).reshape(-1)
        return cls("per_feature", keep_probs.size, logit(keep_probs))

    @classmethod
    def grouped(cls, groups, keep_probs=0.5):
        groups = np.asarray(groups, dtype=np.intp).reshape(-1)
        n_groups = int(groups.max()) + 1 if groups.size else 0
        keep = np.broadcast_to(np.asarray(keep_probs, dtype=float), (n_groups,))
        return cls("grouped", groups.size, logit(keep), groups=groups)

    def copy(self):
        groups = None if self.groups is None else self.groups.copy()
        return MaskDistribution(self.mode, self.dim, self.logits.copy(), groups)

    def with_logits(self, logits):
        groups = None if self.groups is None else self.groups.copy()
        return MaskDistribution(self.mode, self.dim, logits, groups)

    # -- derived quantities -------------------------------------------------

    @property
    def n_params(self):
        return self.logits.size

    @property
    def rho(self):
        """Logits expanded to one entry per mask bit."""
        return self.logits[self.index]

    @property
    def keep_probs(self):
        return expit(self.rho)

    @property
    def dropout_rates(self):
        return expit(-self.rho)

    def clamp(self, bound=LOGIT_BOUND):
        np.clip(self.logits, -bound, bound, out=self.logits)
        return self

    def reduce(self, per_bit):
        """Sum a per-bit quantity onto the parameter index (last axis)."""
        per_bit = np.asarray(per_bit, dtype=float)
        if self.mode == "per_feature":
            return per_bit
        if per_bit.ndim == 1:
            return np.bincount(self.index, weights=per_bit, minlength=self.n_params)
        out = np.zeros(per_bit.shape[:-1] + (self.n_params,))
        np.add.at(out, (..., self.index), per_bit)
        return out

    # -- serialization ------------------------------------------------------

    def to_record(self):
        parts = ["mask_distribution", f"mode={self.mode}", f"dim={self.dim}"]
        if self.groups is not None:
            parts.append("groups=" + ",".join(str(int(g)) for g in self.groups))
        parts.append("logits=" + ",".join(repr(float(v)) for v in self.logits))
        return " ".join(parts)

    @classmethod
    def from_record(cls, text):
        tokens = text.split()
        if not tokens or tokens[0] != "mask_distribution":
            raise ValueError("not a mask_distribution record")
        fields = dict(tok.split("=", 1) for tok in tokens[1:])
        try:
            mode = fields["mode"]
            dim = int(fields["dim"])
            logits = _parse_floats(fields["logits"])
        except KeyError as exc:
            raise ValueError(f"mask_distribution record missing {exc.args[0]}") from None
        groups = None
        if "groups" in fields:
            groups = np.array([int(g) for g in fields["groups"].split(",") if g], dtype=np.intp)
        return cls(mode, dim, logits, groups)


def _parse_floats(text):
    return np.array([float(v) for v in text.split(",") if v], dtype=float)


@dataclass
class PriorMask:
    """Fixed independent Bernoulli prior over masks (keep-probabilities)."""

    keep_probs: np.ndarray

    def __post_init__(self):
        self.keep_probs = np.asarray(self.keep_probs, dtype=float).reshape(-1)
        if np.any((self.keep_probs <= 0) | (self.keep_probs >= 1)):
            raise ValueError("prior keep-probabilities must lie strictly in (0, 1)")

    @classmethod
    def uniform(cls, dim, keep_prob=0.5):
        return cls(np.full(dim, keep_prob))

    @property
    def dim(self):
        return self.keep_probs.size

    def log_prob(self, z):
        z = _as_mask(z, self.dim)
        p = self.keep_probs
        return np.where(z != 0, np.log(p), np.log1p(-p)).sum(axis=-1)


# -- operations -------------------------------------------------------------


def sample_mask(q, rng):
    """Draw one mask; bit ``i`` is 1 with probability ``lam_i``.

    Consumes exactly ``q.dim`` uniforms from ``rng``.
    """
    return (rng.random(q.dim) < q.keep_probs).astype(np.int8)


def log_prob(q, z):
    """``log q(z)``; ``z`` may be a single mask or a batch of masks."""
    z = _as_mask(z, q.dim)
    rho = q.rho
    return np.where(z != 0, log_expit(rho), log_expit(-rho)).sum(axis=-1)


def score_gradient(q, z):
    """Gradient of ``log q(z)`` with respect to the logits.

    With the logistic link each bit contributes ``z_i - lam_i`` to the logit
    it is tied to.
    """
    z = _as_mask(z, q.dim)
    return q.reduce(z - q.keep_probs)


def entropy(q):
    rho = q.rho
    lam, one_minus = expit(rho), expit(-rho)
    return float(-(xlogy(lam, lam) + xlogy(one_minus, one_minus)).sum())


def cross_entropy_with_prior(q, prior):
    """``sum_z q(z) log p(z)`` in closed form (a negative cross-entropy)."""
    if prior.dim != q.dim:
        raise ValueError(f"prior dimension {prior.dim} does not match {q.dim}")
    rho = q.rho
    p = prior.keep_probs
    return float((expit(rho) * np.log(p) + expit(-rho) * np.log1p(-p)).sum())


def regularizer_gradient(q, prior):
    """Logit gradient of ``cross_entropy_with_prior + entropy``.

    Per bit this is ``lam (1 - lam) (logit p - logit lam)``, i.e. a pull of
    each keep-probability toward the prior.
    """
    if prior.dim != q.dim:
        raise ValueError(f"prior dimension {prior.dim} does not match {q.dim}")
    rho = q.rho
    slope = expit(rho) * expit(-rho)
    return q.reduce(slope * (logit(prior.keep_probs) - rho))


def expected_mask(q):
    return q.keep_probs
