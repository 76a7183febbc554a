"""Class-owned prototype vectors, cosine similarity and the prototype
losses.

Every class owns a fixed number of prototype vectors living in the
backbone's feature space. A prototype's similarity to an image is the
maximum cosine similarity over all spatial cells of the feature map, so
each similarity is traceable to one cell and, through the backbone's
geometry, to one patch of the input image.

The class score is a weighted sum of the per-prototype similarities
with nonnegative weights, which keeps every contribution readable as
"this prototype added this much".
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation


class PrototypeBank:
    def __init__(self, class_names, per_class, dim, seed=0, vectors=None, weights=None):
        self.class_names = tuple(class_names)
        self.per_class = int(per_class)
        self.dim = int(dim)
        k, m, d = len(self.class_names), self.per_class, self.dim
        if k < 2 or m < 1 or d < 1:
            raise ContractViolation("bank needs >= 2 classes, >= 1 prototype, dim >= 1")
        if vectors is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 23])))
            vectors = rng.normal(size=(k, m, d))
            vectors /= np.linalg.norm(vectors, axis=2, keepdims=True)
        if weights is None:
            weights = np.ones((k, m))
        vectors = np.asarray(vectors, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if vectors.shape != (k, m, d) or weights.shape != (k, m):
            raise ContractViolation(
                f"bank arrays must be ({k},{m},{d}) and ({k},{m})")
        self.P = ad.Tensor(vectors, requires_grad=True)
        self.w = ad.Tensor(weights, requires_grad=True)
        self.validate()

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def num_prototypes(self):
        return self.num_classes * self.per_class

    def owner(self, flat_index):
        """Class index owning prototype ``P<flat_index>``."""
        if not 0 <= flat_index < self.num_prototypes:
            raise ContractViolation(f"prototype index {flat_index} out of range")
        return flat_index // self.per_class

    def proto_id(self, class_index, j):
        return f"P{class_index * self.per_class + j}"

    def validate(self):
        if np.any(self.w.values < 0.0):
            raise ContractViolation("prototype weights must be nonnegative")
        norms = np.linalg.norm(self.P.values, axis=2)
        if np.any(norms <= 0.0):
            raise ContractViolation("prototype vectors must have positive norm")
        return self

    def version(self):
        """Content hash identifying this bank's exact parameter values."""
        h = hashlib.sha256()
        h.update(json.dumps(list(self.class_names)).encode())
        h.update(np.ascontiguousarray(self.P.values).tobytes())
        h.update(np.ascontiguousarray(self.w.values).tobytes())
        return h.hexdigest()[:16]

    def clamp_weights(self):
        """Project weights back onto the nonnegative orthant in place."""
        np.maximum(self.w.values, 0.0, out=self.w.values)

    def with_weights(self, new_weights):
        """A new bank sharing vectors but carrying different weights."""
        return PrototypeBank(self.class_names, self.per_class, self.dim,
                             vectors=self.P.values.copy(),
                             weights=np.asarray(new_weights, dtype=np.float64).copy())

    def init_from_patches(self, feature_maps, labels, seed=0):
        """Replace each class's vectors with feature cells sampled from
        that class's own images.

        ``feature_maps`` is (n, h, w, d); ``labels`` is (n,) of class
        indices. Cells are drawn uniformly with a per-class derived
        seed, so the warm start is reproducible.
        """
        maps = np.asarray(feature_maps, dtype=np.float64)
        labels = np.asarray(labels)
        if maps.ndim != 4 or maps.shape[3] != self.dim:
            raise ContractViolation(f"feature maps (n,h,w,{self.dim}) expected")
        n, h, w, d = maps.shape
        for ci in range(self.num_classes):
            idx = np.flatnonzero(labels == ci)
            if idx.size == 0:
                raise ContractViolation(f"no images of class {ci} for patch init")
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([seed, 31, ci])))
            for j in range(self.per_class):
                img = idx[rng.integers(idx.size)]
                cell = maps[img, rng.integers(h), rng.integers(w)].copy()
                norm = np.linalg.norm(cell)
                if norm <= 1e-12:
                    cell = np.ones(d) / np.sqrt(d)
                self.P.values[ci, j] = cell
        return self


def max_similarity_graph(feats, bank, eps=1e-8):
    """(B, h, w, d) features -> (B, k, m) max-over-cells cosine similarity."""
    B, h, w, d = feats.values.shape
    if d != bank.dim:
        raise ContractViolation(f"feature dim {d} differs from bank dim {bank.dim}")
    k, m = bank.num_classes, bank.per_class
    cells = ad.reshape(feats, (B * h * w, d))
    pflat = ad.reshape(bank.P, (k * m, d))
    sims = ad.cosine_sim(cells, pflat, eps=eps)              # (B*h*w, k*m)
    sims = ad.reshape(sims, (B, h * w, k * m))
    sims = ad.transpose(sims, (0, 2, 1))                     # (B, k*m, h*w)
    smax = ad.reduce_max(sims, axis=2)                       # (B, k*m)
    return ad.reshape(smax, (B, k, m))


def class_scores_graph(smax, bank):
    """Weighted similarity totals per class: (B, k, m) -> (B, k)."""
    B = smax.values.shape[0]
    wrep = ad.repeat(ad.reshape(bank.w, (1,) + bank.w.values.shape), B, 0)
    return ad.reduce_sum(ad.mul(smax, wrep), axis=2)


def similarity_maps(feature_maps, bank, eps=1e-8):
    """Inference-path similarity: full maps plus max and argmax cells.

    ``feature_maps`` is a plain (B, h, w, d) array. Returns
    (maps (B,k,m,h,w), smax (B,k,m), argmax (B,k,m,2)).
    """
    maps_in = np.asarray(feature_maps, dtype=np.float64)
    B, h, w, d = maps_in.shape
    k, m = bank.num_classes, bank.per_class
    cells = maps_in.reshape(B * h * w, d)
    pf = bank.P.values.reshape(k * m, d)
    nx = np.sqrt((cells * cells).sum(axis=1)) + eps
    npr = np.sqrt((pf * pf).sum(axis=1)) + eps
    sims = (cells @ pf.T) / (nx[:, None] * npr[None, :])
    sims = sims.reshape(B, h * w, k * m).transpose(0, 2, 1).reshape(B, k, m, h, w)
    flat = sims.reshape(B, k, m, h * w)
    arg = flat.argmax(axis=3)
    smax = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]
    cells_rc = np.stack([arg // w, arg % w], axis=-1)
    return sims, smax, cells_rc


def cross_entropy_loss(tau, onehot):
    """Mean negative log-likelihood of softmax class scores."""
    B = tau.values.shape[0]
    ls = ad.log_softmax(tau, axis=1)
    return ad.neg(ad.div(ad.reduce_sum(ad.mul(ls, onehot)), ad.Tensor(float(B))))

def cluster_loss(smax, onehot, mode="min"):
    """Pulls the ground-truth class's prototypes toward the image.

    With ``mode="min"`` the weakest prototype of the true class is
    raised, so all of the class's prototypes end up matching somewhere
    in class images; ``mode="max"`` raises only the best match.
    """
    if mode not in ("min", "max"):
        raise ContractViolation(f"unknown cluster mode {mode!r}")
    B = smax.values.shape[0]
    red = ad.reduce_min(smax, axis=2) if mode == "min" else ad.reduce_max(smax, axis=2)
    picked = ad.reduce_sum(ad.mul(red, onehot))
    return ad.neg(ad.div(picked, ad.Tensor(float(B))))


def separation_loss(smax, onehot_complement):
    """Pushes wrong-class prototypes away: mean over images of the
    summed best similarity to each non-ground-truth class."""
    B = smax.values.shape[0]
    best = ad.reduce_max(smax, axis=2)
    picked = ad.reduce_sum(ad.mul(best, onehot_complement))
    return ad.div(picked, ad.Tensor(float(B)))
