"""Prototype bank invariants, similarity paths and score losses."""

import numpy as np
import pytest

from protoscope import autodiff as ad
from protoscope.errors import ContractViolation
from protoscope.prototypes import (PrototypeBank, class_scores_graph, cluster_loss,
                                   cross_entropy_loss, max_similarity_graph,
                                   separation_loss, similarity_maps)

NAMES = ("a", "b", "c")


def small_bank(seed=0, **kw):
    return PrototypeBank(NAMES, per_class=2, dim=5, seed=seed, **kw)


class TestBank:
    def test_random_init_unit_norm(self):
        bank = small_bank()
        norms = np.linalg.norm(bank.P.values, axis=2)
        assert np.allclose(norms, 1.0, atol=1e-12)
        assert np.array_equal(bank.w.values, np.ones((3, 2)))

    def test_seeded_init_reproducible(self):
        assert np.array_equal(small_bank(seed=5).P.values, small_bank(seed=5).P.values)
        assert not np.array_equal(small_bank(seed=5).P.values, small_bank(seed=6).P.values)

    def test_counts(self):
        bank = small_bank()
        assert bank.num_classes == 3
        assert bank.num_prototypes == 6

    def test_owner_and_proto_id_round_trip(self):
        bank = small_bank()
        for ci in range(3):
            for j in range(2):
                flat = int(bank.proto_id(ci, j)[1:])
                assert bank.owner(flat) == ci

    def test_owner_out_of_range(self):
        bank = small_bank()
        with pytest.raises(ContractViolation):
            bank.owner(6)
        with pytest.raises(ContractViolation):
            bank.owner(-1)

    def test_degenerate_sizes_rejected(self):
        with pytest.raises(ContractViolation):
            PrototypeBank(("only",), per_class=2, dim=5)
        with pytest.raises(ContractViolation):
            PrototypeBank(NAMES, per_class=0, dim=5)
        with pytest.raises(ContractViolation):
            PrototypeBank(NAMES, per_class=2, dim=0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            PrototypeBank(NAMES, per_class=2, dim=5, vectors=np.ones((3, 2, 4)))
        with pytest.raises(ContractViolation):
            PrototypeBank(NAMES, per_class=2, dim=5, weights=np.ones((2, 2)))

    def test_validate_rejects_bad_values(self):
        with pytest.raises(ContractViolation):
            small_bank(weights=-np.ones((3, 2)))
        with pytest.raises(ContractViolation):
            small_bank(vectors=np.zeros((3, 2, 5)))

    def test_version_tracks_content(self):
        bank = small_bank()
        v0 = bank.version()
        assert len(v0) == 16 and v0 == bank.version()
        bank.w.values[0, 0] = 0.5
        assert bank.version() != v0

    def test_clamp_weights_projects_in_place(self):
        bank = small_bank()
        bank.w.values[:] = [[-1.0, 2.0], [0.0, -0.5], [3.0, 1.0]]
        bank.clamp_weights()
        assert np.array_equal(bank.w.values, [[0.0, 2.0], [0.0, 0.0], [3.0, 1.0]])

    def test_with_weights_keeps_vectors(self):
        bank = small_bank()
        other = bank.with_weights(np.full((3, 2), 0.25))
        assert np.array_equal(other.P.values, bank.P.values)
        assert np.all(other.w.values == 0.25)
        other.P.values[0, 0, 0] += 1.0
        assert bank.P.values[0, 0, 0] != other.P.values[0, 0, 0]

    def test_init_from_patches_samples_own_class(self, rng):
        bank = small_bank()
        maps = rng.uniform(0.1, 1.0, size=(9, 4, 4, 5))
        labels = np.repeat([0, 1, 2], 3)
        bank.init_from_patches(maps, labels, seed=2)
        for ci in range(3):
            own = maps[labels == ci].reshape(-1, 5)
            for j in range(2):
                vec = bank.P.values[ci, j]
                assert np.any(np.all(np.isclose(own, vec, atol=0.0), axis=1))

    def test_init_from_patches_reproducible(self, rng):
        maps = rng.uniform(size=(6, 4, 4, 5))
        labels = np.repeat([0, 1, 2], 2)
        a = small_bank().init_from_patches(maps, labels, seed=3)
        b = small_bank().init_from_patches(maps, labels, seed=3)
        assert np.array_equal(a.P.values, b.P.values)

    def test_init_from_patches_zero_cell_fallback(self):
        bank = small_bank()
        maps = np.zeros((3, 2, 2, 5))
        bank.init_from_patches(maps, np.array([0, 1, 2]), seed=0)
        assert np.allclose(bank.P.values, 1.0 / np.sqrt(5.0))
        bank.validate()

    def test_init_from_patches_missing_class(self, rng):
        bank = small_bank()
        with pytest.raises(ContractViolation):
            bank.init_from_patches(rng.uniform(size=(4, 2, 2, 5)),
                                   np.array([0, 0, 1, 1]), seed=0)

    def test_init_from_patches_wrong_dim(self, rng):
        with pytest.raises(ContractViolation):
            small_bank().init_from_patches(rng.uniform(size=(3, 2, 2, 4)),
                                           np.array([0, 1, 2]), seed=0)


def loop_max_similarity(feats, bank, eps=1e-8):
    B, h, w, _ = feats.shape
    out = np.zeros((B, bank.num_classes, bank.per_class))
    for b in range(B):
        for ci in range(bank.num_classes):
            for j in range(bank.per_class):
                p = bank.P.values[ci, j]
                best = -np.inf
                for r in range(h):
                    for c in range(w):
                        x = feats[b, r, c]
                        s = x @ p / ((np.linalg.norm(x) + eps) * (np.linalg.norm(p) + eps))
                        best = max(best, s)
                out[b, ci, j] = best
    return out


class TestSimilarity:
    def test_graph_matches_loop_oracle(self, rng):
        bank = small_bank()
        feats = rng.uniform(0.1, 1.0, size=(3, 4, 4, 5))
        smax = max_similarity_graph(ad.Tensor(feats), bank).values
        assert np.allclose(smax, loop_max_similarity(feats, bank), atol=1e-12)

    def test_graph_and_inference_paths_agree(self, rng):
        bank = small_bank()
        feats = rng.uniform(0.1, 1.0, size=(4, 4, 4, 5))
        smax_graph = max_similarity_graph(ad.Tensor(feats), bank).values
        maps, smax_inf, cells = similarity_maps(feats, bank)
        assert np.allclose(smax_graph, smax_inf, atol=1e-12)
        assert maps.shape == (4, 3, 2, 4, 4)
        assert cells.shape == (4, 3, 2, 2)

    def test_argmax_cell_attains_max(self, rng):
        bank = small_bank()
        feats = rng.uniform(0.1, 1.0, size=(2, 4, 4, 5))
        maps, smax, cells = similarity_maps(feats, bank)
        for b in range(2):
            for ci in range(3):
                for j in range(2):
                    r, c = cells[b, ci, j]
                    assert maps[b, ci, j, r, c] == smax[b, ci, j]
                    assert maps[b, ci, j].max() == smax[b, ci, j]

    def test_exact_prototype_match_scores_near_one(self):
        bank = small_bank()
        feats = np.tile(bank.P.values[1, 0], (1, 4, 4, 1))
        _, smax, _ = similarity_maps(feats, bank)
        assert smax[0, 1, 0] == pytest.approx(1.0, abs=1e-6)

    def test_dim_mismatch_rejected(self, rng):
        with pytest.raises(ContractViolation):
            max_similarity_graph(ad.Tensor(rng.uniform(size=(1, 4, 4, 3))), small_bank())

    def test_graph_gradient_flows_to_prototypes(self, rng):
        bank = small_bank()
        feats = ad.Tensor(rng.uniform(0.1, 1.0, size=(2, 4, 4, 5)), requires_grad=True)
        loss = ad.reduce_sum(max_similarity_graph(feats, bank))
        loss.backward()
        assert bank.P.grad is not None and np.any(bank.P.grad != 0.0)
        assert feats.grad is not None and np.any(feats.grad != 0.0)


class TestScoresAndLosses:
    def test_class_scores_weighted_sum(self):
        bank = small_bank()
        bank.w.values[:] = [[1.0, 2.0], [0.5, 0.5], [3.0, 0.0]]
        smax = np.array([[[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]])
        tau = class_scores_graph(ad.Tensor(smax), bank).values
        want = (smax * bank.w.values[None]).sum(axis=2)
        assert np.allclose(tau, want, atol=1e-12)
        assert tau[0, 0] == pytest.approx(0.1 * 1.0 + 0.2 * 2.0, abs=1e-12)

    def test_cross_entropy_matches_manual(self):
        tau = np.array([[2.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
        onehot = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        got = cross_entropy_loss(ad.Tensor(tau), ad.Tensor(onehot)).values
        logp = tau - np.log(np.exp(tau).sum(axis=1, keepdims=True))
        want = -(logp[0, 0] + logp[1, 1]) / 2.0
        assert got == pytest.approx(want, abs=1e-12)

    def test_cluster_loss_min_mode_hand_value(self):
        smax = np.array([[[0.9, 0.2], [0.1, 0.8], [0.4, 0.3]]])
        onehot = np.array([[1.0, 0.0, 0.0]])
        got = cluster_loss(ad.Tensor(smax), ad.Tensor(onehot), mode="min").values
        assert got == pytest.approx(-0.2, abs=1e-12)

    def test_cluster_loss_max_mode_hand_value(self):
        smax = np.array([[[0.9, 0.2], [0.1, 0.8], [0.4, 0.3]]])
        onehot = np.array([[0.0, 1.0, 0.0]])
        got = cluster_loss(ad.Tensor(smax), ad.Tensor(onehot), mode="max").values
        assert got == pytest.approx(-0.8, abs=1e-12)

    def test_cluster_loss_unknown_mode(self):
        with pytest.raises(ContractViolation):
            cluster_loss(ad.Tensor(np.zeros((1, 3, 2))), ad.Tensor(np.zeros((1, 3))),
                         mode="mean")

    def test_separation_loss_hand_value(self):
        smax = np.array([[[0.9, 0.2], [0.1, 0.8], [0.4, 0.3]]])
        complement = np.array([[0.0, 1.0, 1.0]])
        got = separation_loss(ad.Tensor(smax), ad.Tensor(complement)).values
        assert got == pytest.approx(0.8 + 0.4, abs=1e-12)

    def test_losses_average_over_batch(self):
        smax = np.array([[[0.9, 0.2], [0.1, 0.8], [0.4, 0.3]],
                         [[0.5, 0.5], [0.6, 0.2], [0.1, 0.1]]])
        onehot = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        got = cluster_loss(ad.Tensor(smax), ad.Tensor(onehot), mode="min").values
        assert got == pytest.approx(-(0.2 + 0.2) / 2.0, abs=1e-12)
