"""Dirichlet evidence head: concentration outputs, predictive summaries
and the two evidence losses.

The head maps the max-pooled backbone feature to per-class evidence
through softplus, and the Dirichlet concentration is evidence + 1, so
every component is at least one and the all-ones vector (total
ignorance) is reachable exactly when the evidence is zero.

With concentration a and a0 = sum(a):

    expected probability  a_i / a0
    uncertainty mass      k / a0

The uncertainty is the remaining belief mass once each class has
claimed (a_i - 1)/a0, so it is 1 for the all-ones concentration and
falls toward 0 as evidence accumulates.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation
from .special import lngamma as _lngamma

ALPHA_CAP = 1e6


class EvidentialHead:
    def __init__(self, dim, num_classes, seed=0, alpha_cap=ALPHA_CAP):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 17])))
        self.dim = int(dim)
        self.num_classes = int(num_classes)
        self.alpha_cap = float(alpha_cap)
        self.params = {
            "head.w": ad.Tensor(rng.normal(0.0, 0.01, size=(dim, num_classes)),
                                requires_grad=True),
            "head.b": ad.Tensor(np.zeros(num_classes), requires_grad=True),
        }

    def concentration(self, pooled):
        """(B, d) pooled features -> (B, k) Dirichlet concentration.

        Capped elementwise so a runaway logit cannot push later digamma
        and lngamma evaluations into overflow.
        """
        if pooled.values.ndim != 2 or pooled.values.shape[1] != self.dim:
            raise ContractViolation(
                f"head expects (B, {self.dim}), got {pooled.values.shape}")
        z = ad.add_bias(ad.matmul(pooled, self.params["head.w"]),
                        self.params["head.b"])
        return ad.clamp_max(ad.add(ad.softplus(z), ad.Tensor(1.0)), self.alpha_cap)


def expected_probability(alpha):
    """Mean of the Dirichlet: alpha_i / alpha_0, rows sum to one."""
    a = np.asarray(alpha, dtype=np.float64)
    return a / a.sum(axis=-1, keepdims=True)


def uncertainty_mass(alpha):
    """k / alpha_0 in (0, 1]; equals 1 exactly at the all-ones vector."""
    a = np.asarray(alpha, dtype=np.float64)
    return a.shape[-1] / a.sum(axis=-1)


def dirichlet_covariance(alpha):
    """Covariance matrix of the Dirichlet over the simplex."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1:
        raise ContractViolation("covariance expects a single concentration vector")
    a0 = a.sum()
    mean = a / a0
    cov = -np.outer(mean, mean) / (a0 + 1.0)
    cov[np.diag_indices_from(cov)] = mean * (1.0 - mean) / (a0 + 1.0)
    return cov


def _alpha_checks(alpha, onehot):
    if alpha.values.shape != onehot.values.shape:
        raise ContractViolation(
            f"alpha {alpha.values.shape} and labels {onehot.values.shape} differ")
    if np.any(alpha.values < 1.0):
        raise ContractViolation("concentration components must be >= 1")


def error_loss(alpha, onehot):
    """Expected squared error under the Dirichlet, in closed form.

    E_{p ~ Dir(a)} ||y - p||^2
      = sum_j (y_j - a_j/a0)^2 + a_j (a0 - a_j) / (a0^2 (a0 + 1))

    i.e. squared bias of the mean plus the per-component variance.
    Mean over the batch.
    """
    _alpha_checks(alpha, onehot)
    B, k = alpha.values.shape
    a0 = ad.reduce_sum(alpha, axis=1, keepdims=True)
    a0r = ad.repeat(a0, k, 1)
    mean = ad.div(alpha, a0r)
    bias = ad.pow_const(ad.sub(onehot, mean), 2.0)
    var = ad.div(ad.mul(alpha, ad.sub(a0r, alpha)),
                 ad.mul(ad.mul(a0r, a0r), ad.add(a0r, ad.Tensor(1.0))))
    total = ad.reduce_sum(ad.add(bias, var))
    return ad.div(total, ad.Tensor(float(B)))


def misleading_concentration(alpha, onehot):
    """Concentration with the ground-truth component flattened to one:
    (1 - y) * (alpha - 1) + 1. What remains is exactly the evidence
    assigned to wrong classes."""
    keep = ad.sub(ad.Tensor(np.ones_like(onehot.values)), onehot)
    return ad.add(ad.mul(ad.sub(alpha, ad.Tensor(1.0)), keep), ad.Tensor(1.0))


def kl_uniform_loss(alpha, onehot):
    """KL(Dir(alpha_hat) || Dir(1,...,1)) with the ground-truth
    component removed, mean over the batch.

    Penalizes evidence for wrong classes only: it is exactly zero when
    alpha_hat is all ones and grows with misleading evidence.
    """
    _alpha_checks(alpha, onehot)
    B, k = alpha.values.shape
    ahat = misleading_concentration(alpha, onehot)
    a0 = ad.reduce_sum(ahat, axis=1, keepdims=True)
    a0r = ad.repeat(a0, k, 1)
    lg_a0 = ad.reduce_sum(ad.lngamma(a0))
    lg_terms = ad.reduce_sum(ad.lngamma(ahat))
    centered = ad.sub(ad.digamma(ahat), ad.digamma(a0r))
    inner = ad.reduce_sum(ad.mul(ad.sub(ahat, ad.Tensor(1.0)), centered))
    const = ad.Tensor(float(B) * _lngamma(float(k)))
    total = ad.add(ad.sub(ad.sub(lg_a0, const), lg_terms), inner)
    return ad.div(total, ad.Tensor(float(B)))


@dataclass(frozen=True)
class EvidentialSummary:
    alpha: np.ndarray
    expected_p: np.ndarray
    uncertainty: np.ndarray

    @staticmethod
    def from_alpha(alpha):
        a = np.asarray(alpha, dtype=np.float64)
        return EvidentialSummary(a, expected_probability(a), uncertainty_mass(a))
