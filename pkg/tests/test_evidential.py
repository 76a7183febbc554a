import numpy as np
import pytest

import protoscope.autodiff as ad
from protoscope.errors import ContractViolation
from protoscope.evidential import (ALPHA_CAP, EvidentialHead, EvidentialSummary,
                                   dirichlet_covariance, error_loss,
                                   expected_probability, kl_uniform_loss,
                                   misleading_concentration, uncertainty_mass)

from oracles import dirichlet_cov, mc_brier, mc_kl_uniform


# -- summary quantities: a fixed concentration, checked to machine precision ----

def test_expected_probability_fixed_vector():
    alpha = np.array([3.5, 4.5, 5.5, 2.5])
    want = np.array([0.21875, 0.28125, 0.34375, 0.15625])
    assert np.all(np.abs(expected_probability(alpha) - want) <= 1e-12)


def test_uncertainty_fixed_vector():
    alpha = np.array([3.5, 4.5, 5.5, 2.5])
    assert abs(uncertainty_mass(alpha) - 0.25) <= 1e-12


def test_total_ignorance_is_exactly_one():
    assert uncertainty_mass(np.ones(4)) == 1.0
    assert np.allclose(expected_probability(np.ones(4)), 0.25, atol=0.0)


def test_uncertainty_falls_as_evidence_accumulates():
    base = np.ones(4)
    u = [uncertainty_mass(base + e) for e in (0.0, 1.0, 10.0, 100.0)]
    assert all(a > b for a, b in zip(u, u[1:]))


def test_expected_probability_batched_rows_sum_to_one(rng):
    alpha = 1.0 + rng.uniform(0.0, 5.0, size=(10, 4))
    p = expected_probability(alpha)
    assert p.shape == (10, 4)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_covariance_matches_closed_form(rng):
    alpha = 1.0 + rng.uniform(0.0, 4.0, size=5)
    assert np.allclose(dirichlet_covariance(alpha), dirichlet_cov(alpha),
                       rtol=1e-12, atol=1e-15)


def test_covariance_rows_sum_to_zero(rng):
    alpha = 1.0 + rng.uniform(0.0, 4.0, size=4)
    cov = dirichlet_covariance(alpha)
    assert np.allclose(cov.sum(axis=1), 0.0, atol=1e-15)


# -- losses against Monte Carlo oracles -----------------------------------------

def test_error_loss_matches_monte_carlo(rng):
    alpha = 1.0 + rng.uniform(0.0, 6.0, size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    onehot = np.eye(4)[labels]
    got = float(error_loss(ad.Tensor(alpha), ad.Tensor(onehot)).values)
    mc = np.mean([mc_brier(onehot[i], alpha[i], n_samples=200_000, seed=i)
                  for i in range(6)])
    assert abs(got - mc) <= 1e-2


def test_kl_loss_matches_monte_carlo(rng):
    alpha = 1.0 + rng.uniform(0.0, 4.0, size=(4, 4))
    labels = rng.integers(0, 4, size=4)
    onehot = np.eye(4)[labels]
    got = float(kl_uniform_loss(ad.Tensor(alpha), ad.Tensor(onehot)).values)
    ahat = (1.0 - onehot) * (alpha - 1.0) + 1.0
    mc = np.mean([mc_kl_uniform(ahat[i], n_samples=400_000, seed=i)
                  for i in range(4)])
    assert abs(got - mc) <= 5e-3


def test_kl_loss_exactly_zero_at_all_ones():
    alpha = np.ones((3, 4))
    onehot = np.eye(4)[[0, 1, 2]]
    got = float(kl_uniform_loss(ad.Tensor(alpha), ad.Tensor(onehot)).values)
    assert got == 0.0


def test_kl_ignores_ground_truth_evidence():
    onehot = np.eye(4)[[2]]
    lo = np.ones((1, 4)); lo[0, 2] = 1.0
    hi = np.ones((1, 4)); hi[0, 2] = 50.0
    l_lo = float(kl_uniform_loss(ad.Tensor(lo), ad.Tensor(onehot)).values)
    l_hi = float(kl_uniform_loss(ad.Tensor(hi), ad.Tensor(onehot)).values)
    assert l_lo == l_hi == 0.0


def test_kl_grows_with_misleading_evidence():
    onehot = np.eye(4)[[0]]
    vals = []
    for e in (0.0, 0.5, 2.0, 8.0):
        alpha = np.ones((1, 4)); alpha[0, 1] += e
        vals.append(float(kl_uniform_loss(ad.Tensor(alpha), ad.Tensor(onehot)).values))
    assert vals[0] == 0.0
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_misleading_concentration_flattens_truth_only():
    alpha = np.array([[4.0, 2.0, 7.0, 1.5]])
    onehot = np.eye(4)[[2]]
    ahat = misleading_concentration(ad.Tensor(alpha), ad.Tensor(onehot)).values
    assert np.allclose(ahat, [[4.0, 2.0, 1.0, 1.5]], atol=0.0)


def test_error_loss_decreases_toward_confident_truth():
    onehot = np.eye(4)[[1]]
    losses = []
    for e in (0.0, 2.0, 10.0, 50.0):
        alpha = np.ones((1, 4)); alpha[0, 1] += e
        losses.append(float(error_loss(ad.Tensor(alpha), ad.Tensor(onehot)).values))
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_loss_gradients_match_finite_differences(rng):
    from oracles import numeric_gradient
    alpha = 1.0 + rng.uniform(0.5, 4.0, size=(3, 4))
    onehot = np.eye(4)[rng.integers(0, 4, size=3)]
    for loss in (error_loss, kl_uniform_loss):
        t = ad.Tensor(alpha, requires_grad=True)
        loss(t, ad.Tensor(onehot)).backward()
        num = numeric_gradient(
            lambda v: float(loss(ad.Tensor(v), ad.Tensor(onehot)).values), alpha)
        denom = np.maximum(1.0, np.abs(num))
        assert np.max(np.abs(t.grad - num) / denom) <= 1e-3


# -- the head -------------------------------------------------------------------

def test_head_output_shape_and_floor(rng):
    head = EvidentialHead(dim=16, num_classes=4, seed=0)
    pooled = ad.Tensor(rng.normal(size=(5, 16)))
    alpha = head.concentration(pooled)
    assert alpha.values.shape == (5, 4)
    assert np.all(alpha.values >= 1.0)


def test_head_cap_bounds_runaway_evidence():
    head = EvidentialHead(dim=2, num_classes=3, seed=0, alpha_cap=50.0)
    head.params["head.w"].values[:] = 100.0
    pooled = ad.Tensor(np.full((1, 2), 100.0))
    alpha = head.concentration(pooled)
    assert np.all(alpha.values <= 50.0)


def test_head_rejects_wrong_width(rng):
    head = EvidentialHead(dim=16, num_classes=4)
    with pytest.raises(ContractViolation):
        head.concentration(ad.Tensor(rng.normal(size=(5, 8))))


def test_head_seeded_init_is_reproducible():
    a = EvidentialHead(dim=8, num_classes=4, seed=11)
    b = EvidentialHead(dim=8, num_classes=4, seed=11)
    assert np.array_equal(a.params["head.w"].values, b.params["head.w"].values)


def test_alpha_below_one_rejected():
    alpha = np.full((2, 4), 0.5)
    onehot = np.eye(4)[[0, 1]]
    with pytest.raises(ContractViolation):
        error_loss(ad.Tensor(alpha), ad.Tensor(onehot))


def test_shape_mismatch_rejected():
    with pytest.raises(ContractViolation):
        error_loss(ad.Tensor(np.ones((2, 4))), ad.Tensor(np.eye(3)[[0, 1]]))


def test_summary_bundles_consistent_views():
    s = EvidentialSummary.from_alpha(np.array([[3.5, 4.5, 5.5, 2.5]]))
    assert np.allclose(s.expected_p, expected_probability(s.alpha))
    assert np.allclose(s.uncertainty, uncertainty_mass(s.alpha))
