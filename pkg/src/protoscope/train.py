"""Training loop: joint prototype-and-evidence objective, staged
backbone freezing, per-epoch deterministic shuffling and augmentation,
best/last checkpointing, and resume.

Randomness policy: nothing consumes a long-lived RNG stream. Epoch
shuffles and per-image augmentations draw from generators seeded by
(run seed, purpose, epoch, image index), so a resumed run replays the
exact trajectory of an uninterrupted one.
"""

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .backbone import AugmentConfig, augment
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import ContractViolation, NumericFault, TrainingDiverged
from .evidential import error_loss, kl_uniform_loss
from .metrics import (cohen_kappa, macro_auroc, macro_rates, normalized_entropy,
                      per_class_rates)
from .model import ModelConfig, PrototypeNet
from .optim import AdamW, ParamGroup
from .prototypes import cluster_loss, cross_entropy_loss, separation_loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    freeze_epochs: int = 5
    batch_size: int = 32
    lr_backbone: float = 1e-3
    # The evidence head is a single k-output linear map; its argmax sharpens
    # far more slowly than ranking metrics saturate, so it gets a faster rate.
    lr_head: float = 1e-2
    lr_protos: float = 1e-2
    lr_weights: float = 1e-2
    betas: tuple = (0.9, 0.99)
    weight_decay: float = 0.0
    lambda_cluster: float = 1e-3
    lambda_separation: float = 1e-3
    kl_ramp_epochs: int = 0          # 0 -> epochs // 2
    val_fraction: float = 0.2        # used only when the corpus has no val split
    seed: int = 0
    augment: AugmentConfig = AugmentConfig()
    eval_scores: str = "expected_p"  # "expected_p" | "softmax_tau"

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractViolation("epochs and batch size must be positive")
        if not 0 <= self.freeze_epochs <= self.epochs:
            raise ContractViolation("freeze_epochs must lie within [0, epochs]")
        if self.eval_scores not in ("expected_p", "softmax_tau"):
            raise ContractViolation(f"unknown eval_scores {self.eval_scores!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ContractViolation("val_fraction must be in (0, 1)")
        return self

    def kl_weight(self, epoch):
        """Linear ramp 0 -> 1 over the first half of training, then 1."""
        ramp = self.kl_ramp_epochs if self.kl_ramp_epochs > 0 else max(1, self.epochs // 2)
        return min(1.0, epoch / ramp)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "epochs", "freeze_epochs", "batch_size", "lr_backbone", "lr_head",
            "lr_protos", "lr_weights", "weight_decay", "lambda_cluster",
            "lambda_separation", "kl_ramp_epochs", "val_fraction", "seed",
            "eval_scores")}
        d["betas"] = list(self.betas)
        d["augment"] = {"flip": self.augment.flip,
                        "max_rotate_deg": self.augment.max_rotate_deg,
                        "max_brightness": self.augment.max_brightness}
        return d

    @staticmethod
    def from_dict(d):
        aug = d.get("augment", {})
        return TrainConfig(
            epochs=int(d["epochs"]), freeze_epochs=int(d["freeze_epochs"]),
            batch_size=int(d["batch_size"]), lr_backbone=float(d["lr_backbone"]),
            lr_head=float(d["lr_head"]), lr_protos=float(d["lr_protos"]),
            lr_weights=float(d["lr_weights"]), betas=tuple(d["betas"]),
            weight_decay=float(d["weight_decay"]),
            lambda_cluster=float(d["lambda_cluster"]),
            lambda_separation=float(d["lambda_separation"]),
            kl_ramp_epochs=int(d["kl_ramp_epochs"]),
            val_fraction=float(d["val_fraction"]), seed=int(d["seed"]),
            augment=AugmentConfig(flip=bool(aug.get("flip", True)),
                                  max_rotate_deg=float(aug.get("max_rotate_deg", 15.0)),
                                  max_brightness=float(aug.get("max_brightness", 0.2))),
            eval_scores=str(d["eval_scores"]))


def paper_hparams(config: TrainConfig) -> TrainConfig:
    """The published training schedule, for parity runs: 75 epochs,
    10 frozen, batch 64, per-group learning rates 5e-5 / 1e-4 / 1e-2 / 1e-2."""
    return replace(config, epochs=75, freeze_epochs=10, batch_size=64,
                   lr_backbone=5e-5, lr_head=1e-4, lr_protos=1e-2,
                   lr_weights=1e-2, betas=(0.9, 0.99))


# -- objectives ----------------------------------------------------------------

def prototype_objective(smax, tau, onehot, lambda_cluster, lambda_separation,
                        cluster_mode="min"):
    """Cross-entropy over class scores plus weighted cluster and
    separation terms. Returns (loss tensor, per-term floats)."""
    y = ad.Tensor(onehot)
    y_comp = ad.Tensor(1.0 - onehot)
    ce = cross_entropy_loss(tau, y)
    clst = cluster_loss(smax, y, mode=cluster_mode)
    sep = separation_loss(smax, y_comp)
    loss = ad.add(ce, ad.add(ad.mul(ad.Tensor(lambda_cluster), clst),
                             ad.mul(ad.Tensor(lambda_separation), sep)))
    return loss, {"cross_entropy": ce.item(), "cluster": clst.item(),
                  "separation": sep.item()}


def evidence_objective(alpha, onehot, kl_weight):
    """Expected squared error plus ramped KL regularizer on misleading
    evidence. Returns (loss tensor, per-term floats)."""
    y = ad.Tensor(onehot)
    err = error_loss(alpha, y)
    kl = kl_uniform_loss(alpha, y)
    loss = ad.add(err, ad.mul(ad.Tensor(float(kl_weight)), kl))
    return loss, {"evidence_error": err.item(), "evidence_kl": kl.item()}


def training_objective(fg, onehot, config: TrainConfig, kl_weight, cluster_mode):
    proto_loss, proto_terms = prototype_objective(
        fg.smax, fg.tau, onehot, config.lambda_cluster, config.lambda_separation,
        cluster_mode)
    ev_loss, ev_terms = evidence_objective(fg.alpha, onehot, kl_weight)
    loss = ad.add(proto_loss, ev_loss)
    terms = {**proto_terms, **ev_terms, "total": loss.item()}
    return loss, terms


# -- evaluation ------------------------------------------------------------------

@dataclass
class EvalResult:
    ids: list
    labels: np.ndarray
    scores: np.ndarray        # the distribution metrics are computed on
    expected_p: np.ndarray
    p_softmax: np.ndarray
    alpha: np.ndarray
    tau: np.ndarray
    uncertainty: np.ndarray
    entropy: np.ndarray       # normalized entropy of `scores`
    smax_flat: np.ndarray     # (n, k*m) per-prototype max similarities
    pred: np.ndarray
    metrics: dict = field(default_factory=dict)

    def records(self):
        """Per-image rows for the evaluation dump consumed by the DOR
        command; everything needed to recompute activation tables
        without another forward pass."""
        rows = []
        for i, rid in enumerate(self.ids):
            rows.append({
                "id": rid,
                "label": int(self.labels[i]),
                "pred": int(self.pred[i]),
                "expected_p": self.expected_p[i].tolist(),
                "p_softmax": self.p_softmax[i].tolist(),
                "alpha": self.alpha[i].tolist(),
                "uncertainty": float(self.uncertainty[i]),
                "entropy": float(self.entropy[i]),
                "max_sims": self.smax_flat[i].tolist(),
            })
        return rows


def evaluate(model: PrototypeNet, images, labels, ids=None, batch_size=64,
             eval_scores="expected_p"):
    """Forward the stack once and compute the full metric table."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = len(model.config.class_names)
    parts = [model.predict(images[s:s + batch_size])
             for s in range(0, len(images), batch_size)]
    alpha = np.concatenate([p.alpha for p in parts])
    expected_p = np.concatenate([p.expected_p for p in parts])
    p_softmax = np.concatenate([p.p_softmax for p in parts])
    tau = np.concatenate([p.tau for p in parts])
    uncertainty = np.concatenate([p.uncertainty for p in parts])
    smax = np.concatenate([p.smax for p in parts])
    scores = expected_p if eval_scores == "expected_p" else p_softmax
    pred = scores.argmax(axis=1)
    entropy = normalized_entropy(scores)

    result = EvalResult(
        ids=list(ids) if ids is not None else [str(i) for i in range(len(images))],
        labels=labels, scores=scores, expected_p=expected_p, p_softmax=p_softmax,
        alpha=alpha, tau=tau, uncertainty=uncertainty, entropy=entropy,
        smax_flat=smax.reshape(len(images), -1), pred=pred)

    macro, per_class = macro_auroc(scores, labels)
    rates = per_class_rates(labels, pred, k)
    result.metrics = {
        "macro_auroc": macro,
        "per_class_auroc": per_class,
        "kappa": cohen_kappa(labels, pred, k),
        "accuracy": float((pred == labels).mean()),
        "per_class": [{"class": int(r.class_index), "sensitivity": r.sensitivity,
                       "specificity": r.specificity, "ppv": r.ppv} for r in rates],
        "macro_rates": macro_rates(rates),
        "mean_entropy": float(entropy.mean()),
        "eval_scores": eval_scores,
    }
    return result


# -- the loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list
    best_path: str = ""
    last_path: str = ""


def _epoch_rng(seed, purpose, epoch):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, purpose, epoch])))


def _stratified_split(labels, fraction, seed):
    """Deterministic stratified carve-out; returns (fit_idx, holdout_idx)."""
    rng = _epoch_rng(seed, 307, 0)
    fit, hold = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_hold = max(1, int(round(fraction * len(idx))))
        hold.extend(idx[:n_hold])
        fit.extend(idx[n_hold:])
    return np.sort(np.array(fit)), np.sort(np.array(hold))


def _snapshot(model, optimizer, config, model_config, epoch, history, best_epoch):
    tensors = model.state()
    scalars, opt_tensors = optimizer.state()
    tensors.update(opt_tensors)
    return Checkpoint(
        config={"model": model_config.to_dict(), "train": config.to_dict()},
        epoch=epoch,
        tensors=tensors,
        history=[dict(h) for h in history],
        rng={"scheme": "per-epoch-derived", "seed": config.seed, "next_epoch": epoch + 1},
        extra={"optimizer": scalars, "best_epoch": best_epoch,
               "bank_version": model.bank.version()},
    )


def restore_model(ckpt: Checkpoint) -> PrototypeNet:
    model_config = ModelConfig.from_dict(ckpt.config["model"])
    model = PrototypeNet(model_config, seed=int(ckpt.config["train"]["seed"]))
    model.load_state({k: v for k, v in ckpt.tensors.items()
                      if not k.startswith("optim.")})
    return model


def train(corpus, config: TrainConfig, model_config: ModelConfig = None,
          out_dir=None, resume_from=None, log=None, split_override=None):
    """Run the full schedule; returns best/last checkpoints and history.

    ``resume_from`` restarts after the checkpoint's epoch and requires
    ``out_dir`` so the best-so-far file written by the interrupted run
    keeps accumulating. ``split_override`` is a (fit_idx, holdout_idx)
    pair over the train split, used by the k-fold runner.
    """
    config.validate()
    if resume_from is not None and out_dir is None:
        raise ContractViolation("resume requires out_dir")

    if model_config is None:
        model_config = ModelConfig(class_names=tuple(corpus.class_names))
    model_config.validate()

    train_images = corpus.images("train")
    train_labels = corpus.labels("train")
    if split_override is not None:
        fit_idx, hold_idx = split_override
        val_images, val_labels = train_images[hold_idx], train_labels[hold_idx]
        train_images, train_labels = train_images[fit_idx], train_labels[fit_idx]
    elif corpus.split("val"):
        val_images, val_labels = corpus.images("val"), corpus.labels("val")
    else:
        fit_idx, hold_idx = _stratified_split(train_labels, config.val_fraction,
                                              config.seed)
        val_images, val_labels = train_images[hold_idx], train_labels[hold_idx]
        train_images, train_labels = train_images[fit_idx], train_labels[fit_idx]

    k = len(model_config.class_names)
    n = len(train_images)
    onehot_all = np.eye(k)[train_labels]

    start_epoch = 0
    history = []
    best_epoch = -1
    best_metric = -np.inf

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        model = restore_model(ckpt)
        optimizer = _build_optimizer(model, config)
        optimizer.load_state(ckpt.extra["optimizer"],
                             {k_: v for k_, v in ckpt.tensors.items()
                              if k_.startswith("optim.")})
        start_epoch = int(ckpt.rng["next_epoch"])
        history = [dict(h) for h in ckpt.history]
        best_epoch = int(ckpt.extra["best_epoch"])
        if best_epoch >= 0:
            best_metric = history[best_epoch]["val_auroc"]
    else:
        model = PrototypeNet(model_config, seed=config.seed)
        if model_config.proto_init == "patches":
            maps = model.feature_maps(train_images)
            model.bank.init_from_patches(maps, train_labels, seed=config.seed)
        optimizer = _build_optimizer(model, config)

    best_ckpt = None
    best_path = last_path = ""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        best_path = os.path.join(str(out_dir), "best.ckpt")
        last_path = os.path.join(str(out_dir), "last.ckpt")

    for epoch in range(start_epoch, config.epochs):
        t0 = time.monotonic()
        kl_weight = config.kl_weight(epoch)
        frozen = epoch < config.freeze_epochs
        model.backbone.set_trainable(not frozen)
        active = {"head", "prototypes", "proto_weights"} | (
            set() if frozen else {"backbone"})

        perm = _epoch_rng(config.seed, 101, epoch).permutation(n)
        term_sums, steps = {}, 0
        for s in range(0, n, config.batch_size):
            idx = perm[s:s + config.batch_size]
            batch = np.stack([
                _augmented(train_images[i], config, epoch, i) for i in idx])
            onehot = onehot_all[idx]
            try:
                fg = model.forward_graph(batch)
                loss, terms = training_objective(fg, onehot, config, kl_weight,
                                                 model_config.cluster_mode)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step(active=active)
            except NumericFault as e:
                raise TrainingDiverged(epoch, e.op) from e
            for name, value in terms.items():
                if not np.isfinite(value):
                    raise TrainingDiverged(epoch, name)
                term_sums[name] = term_sums.get(name, 0.0) + value
            model.bank.clamp_weights()
            steps += 1

        val = evaluate(model, val_images, val_labels, batch_size=64,
                       eval_scores=config.eval_scores)
        entry = {"epoch": epoch, "lambda_kl": kl_weight,
                 "val_auroc": val.metrics["macro_auroc"],
                 "val_kappa": val.metrics["kappa"],
                 "val_accuracy": val.metrics["accuracy"],
                 "seconds": round(time.monotonic() - t0, 3)}
        for name, total in term_sums.items():
            entry[f"loss_{name}"] = total / steps
        history.append(entry)

        if entry["val_auroc"] > best_metric:
            best_metric = entry["val_auroc"]
            best_epoch = epoch
            best_ckpt = _snapshot(model, optimizer, config, model_config, epoch,
                                  history, best_epoch)
            if best_path:
                save_checkpoint(best_ckpt, best_path)
        if last_path:
            save_checkpoint(_snapshot(model, optimizer, config, model_config,
                                      epoch, history, best_epoch), last_path)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {entry.get('loss_total', float('nan')):8.4f}  "
                f"val auroc {entry['val_auroc']:.4f}  kappa {entry['val_kappa']:.4f}  "
                f"({entry['seconds']:.1f}s)")

    last_ckpt = _snapshot(model, optimizer, config, model_config,
                          config.epochs - 1, history, best_epoch)
    if best_ckpt is None:
        # every epoch tied or resume never improved: reread best from disk,
        # else fall back to the final state
        if best_path and os.path.exists(best_path):
            best_ckpt = load_checkpoint(best_path)
        else:
            best_ckpt = last_ckpt
    return TrainResult(best=best_ckpt, last=last_ckpt, history=history,
                       best_path=best_path, last_path=last_path)


def _augmented(image, config, epoch, index):
    if config.augment.is_identity:
        return image
    return augment(image, [config.seed, 211, epoch, int(index)], config.augment)


def _build_optimizer(model, config: TrainConfig):
    groups = model.param_groups()
    return AdamW([
        ParamGroup("backbone", groups["backbone"], lr=config.lr_backbone,
                   betas=config.betas, weight_decay=config.weight_decay),
        ParamGroup("head", groups["head"], lr=config.lr_head,
                   betas=config.betas, weight_decay=config.weight_decay),
        ParamGroup("prototypes", groups["prototypes"], lr=config.lr_protos,
                   betas=config.betas),
        ParamGroup("proto_weights", groups["proto_weights"], lr=config.lr_weights,
                   betas=config.betas),
    ])


def kfold_indices(labels, folds, seed):
    """Stratified fold assignment; returns a list of (fit_idx, holdout_idx)."""
    if folds < 2:
        raise ContractViolation("need at least 2 folds")
    labels = np.asarray(labels)
    assignment = np.empty(len(labels), dtype=np.int64)
    rng = _epoch_rng(seed, 401, 0)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = np.arange(len(idx)) % folds
    return [(np.flatnonzero(assignment != f), np.flatnonzero(assignment == f))
            for f in range(folds)]


def run_kfold(corpus, config: TrainConfig, model_config: ModelConfig = None,
              folds=5, log=None):
    """Train once per fold over the train split; returns the per-fold
    results and the mean/std of the final validation metrics."""
    labels = corpus.labels("train")
    results = []
    for f, (fit_idx, hold_idx) in enumerate(kfold_indices(labels, folds, config.seed)):
        fold_config = replace(config, seed=config.seed + f)
        results.append(train(corpus, fold_config, model_config,
                             split_override=(fit_idx, hold_idx), log=log))
    aurocs = [r.history[-1]["val_auroc"] for r in results]
    kappas = [r.history[-1]["val_kappa"] for r in results]
    summary = {"folds": folds,
               "val_auroc_mean": float(np.mean(aurocs)),
               "val_auroc_std": float(np.std(aurocs)),
               "val_kappa_mean": float(np.mean(kappas)),
               "val_kappa_std": float(np.std(kappas))}
    return results, summary
