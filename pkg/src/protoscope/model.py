"""The full model: backbone features feed both the prototype layer and
the evidential head.

Two predictive distributions come out of one forward pass:

* ``expected_p``: the Dirichlet mean from the evidential head, the
  primary predictive distribution (it knows how much it doesn't know)
* ``p_softmax``: softmax over the prototype class scores, the
  transparent path whose every logit decomposes into per-prototype
  contributions and is what interventions operate on
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .backbone import BackboneConfig, ConvBackbone
from .errors import ContractViolation
from .evidential import ALPHA_CAP, EvidentialHead, expected_probability, uncertainty_mass
from .prototypes import (PrototypeBank, class_scores_graph, max_similarity_graph,
                         similarity_maps)


@dataclass(frozen=True)
class ModelConfig:
    class_names: tuple
    backbone: BackboneConfig = BackboneConfig()
    protos_per_class: int = 10
    sim_eps: float = 1e-8
    alpha_cap: float = ALPHA_CAP
    proto_init: str = "random"      # "random" | "patches"
    cluster_mode: str = "min"       # "min" | "max"

    def validate(self):
        self.backbone.validate()
        if len(self.class_names) < 2:
            raise ContractViolation("need at least two classes")
        if self.proto_init not in ("random", "patches"):
            raise ContractViolation(f"unknown proto_init {self.proto_init!r}")
        if self.cluster_mode not in ("min", "max"):
            raise ContractViolation(f"unknown cluster_mode {self.cluster_mode!r}")
        return self

    def to_dict(self):
        return {
            "class_names": list(self.class_names),
            "backbone": {
                "input_size": self.backbone.input_size,
                "in_channels": self.backbone.in_channels,
                "channels": list(self.backbone.channels),
                "kernel_size": self.backbone.kernel_size,
            },
            "protos_per_class": self.protos_per_class,
            "sim_eps": self.sim_eps,
            "alpha_cap": self.alpha_cap,
            "proto_init": self.proto_init,
            "cluster_mode": self.cluster_mode,
        }

    @staticmethod
    def from_dict(d):
        bb = d["backbone"]
        return ModelConfig(
            class_names=tuple(d["class_names"]),
            backbone=BackboneConfig(
                input_size=int(bb["input_size"]),
                in_channels=int(bb["in_channels"]),
                channels=tuple(bb["channels"]),
                kernel_size=int(bb["kernel_size"]),
            ),
            protos_per_class=int(d["protos_per_class"]),
            sim_eps=float(d["sim_eps"]),
            alpha_cap=float(d["alpha_cap"]),
            proto_init=str(d["proto_init"]),
            cluster_mode=str(d["cluster_mode"]),
        )


@dataclass
class ForwardGraph:
    feats: ad.Tensor
    pooled: ad.Tensor
    smax: ad.Tensor
    tau: ad.Tensor
    alpha: ad.Tensor


@dataclass
class PredictionBatch:
    alpha: np.ndarray         # (B, k)
    expected_p: np.ndarray    # (B, k)
    uncertainty: np.ndarray   # (B,)
    tau: np.ndarray           # (B, k)
    p_softmax: np.ndarray     # (B, k)
    smax: np.ndarray          # (B, k, m)
    argmax_cells: np.ndarray  # (B, k, m, 2)
    feature_maps: np.ndarray = field(repr=False, default=None)


def stable_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class PrototypeNet:
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.backbone = ConvBackbone(config.backbone, seed=seed)
        self.bank = PrototypeBank(config.class_names, config.protos_per_class,
                                  config.backbone.feature_dim, seed=seed)
        self.head = EvidentialHead(config.backbone.feature_dim,
                                   len(config.class_names), seed=seed,
                                   alpha_cap=config.alpha_cap)

    # -- parameters ----------------------------------------------------------

    def parameters(self):
        out = dict(self.backbone.params)
        out.update(self.head.params)
        out["protos.P"] = self.bank.P
        out["protos.w"] = self.bank.w
        return out

    def param_groups(self):
        return {
            "backbone": dict(self.backbone.params),
            "head": dict(self.head.params),
            "prototypes": {"protos.P": self.bank.P},
            "proto_weights": {"protos.w": self.bank.w},
        }

    def state(self):
        return {name: t.values.copy() for name, t in self.parameters().items()}

    def load_state(self, arrays):
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ContractViolation(f"state missing parameters: {sorted(missing)}")
        for name, t in params.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != t.values.shape:
                raise ContractViolation(
                    f"state shape mismatch for {name}: {a.shape} vs {t.values.shape}")
            t.values = a.copy()
        self.bank.validate()

    # -- forward -------------------------------------------------------------

    def forward_graph(self, images):
        """Training path; ``images`` is a plain (B, H, W, C) array."""
        x = ad.Tensor(images)
        feats = self.backbone.features(x)
        pooled = ad.reduce_max(ad.reduce_max(feats, axis=1), axis=1)
        smax = max_similarity_graph(feats, self.bank, eps=self.config.sim_eps)
        tau = class_scores_graph(smax, self.bank)
        alpha = self.head.concentration(pooled)
        return ForwardGraph(feats=feats, pooled=pooled, smax=smax, tau=tau,
                            alpha=alpha)

    def predict(self, images, keep_features=False):
        """Inference path: numpy in, numpy out, no graph retained."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        with ad.no_grad():
            fg = self.forward_graph(images)
        feats = fg.feats.values
        _, smax, cells = similarity_maps(feats, self.bank, eps=self.config.sim_eps)
        alpha = fg.alpha.values
        return PredictionBatch(
            alpha=alpha,
            expected_p=expected_probability(alpha),
            uncertainty=uncertainty_mass(alpha),
            tau=fg.tau.values,
            p_softmax=stable_softmax(fg.tau.values, axis=1),
            smax=smax,
            argmax_cells=cells,
            feature_maps=feats if keep_features else None,
        )

    def feature_maps(self, images, batch_size=64):
        """Backbone features for a stack of images, batched, no graph."""
        images = np.asarray(images, dtype=np.float64)
        chunks = []
        with ad.no_grad():
            for start in range(0, len(images), batch_size):
                x = ad.Tensor(images[start:start + batch_size])
                chunks.append(self.backbone.features(x).values)
        return np.concatenate(chunks, axis=0)
