"""Turning similarities into things a reader can look at: upscaled
heatmaps, contour crops, ranked contribution lists, representative
training patches, and the localization/retrieval scores that audit
them.

The bilinear upscale uses align-corners sampling, so the four corner
cells of a feature-space map land exactly on the four corner pixels of
the image-space heatmap and the argmax can be compared against the
motif mask without any half-cell offset bookkeeping.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ContractViolation
from .metrics import normalized_entropy
from .model import stable_softmax
from .prototypes import similarity_maps

CONTOUR_THRESHOLD = 0.5
CROP_PAD = 4


def bilinear_upscale(src, out_h, out_w):
    """(h, w) -> (out_h, out_w) bilinear interpolation.

    Map cell (i, j) sits at output pixel (i*out_h/h, j*out_w/w): with a
    stride-s center-aligned feature grid over an s*h pixel image, that is
    each cell's receptive-field center, so the upscaled peak lands where
    the network actually looked. Pixels past the last center clamp to it.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] < 2 or src.shape[1] < 2:
        raise ContractViolation("bilinear_upscale expects a (h>=2, w>=2) map")
    h, w = src.shape
    rows = np.minimum(np.arange(int(out_h)) * (h / float(out_h)), h - 1.0)
    cols = np.minimum(np.arange(int(out_w)) * (w / float(out_w)), w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r0 = np.minimum(r0, h - 2)
    c0 = np.minimum(c0, w - 2)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    a = src[np.ix_(r0, c0)]
    b = src[np.ix_(r0, c0 + 1)]
    c = src[np.ix_(r0 + 1, c0)]
    d = src[np.ix_(r0 + 1, c0 + 1)]
    return (a * (1 - fr) * (1 - fc) + b * (1 - fr) * fc
            + c * fr * (1 - fc) + d * fr * fc)


def contour_mask(heatmap, threshold=CONTOUR_THRESHOLD):
    """Pixels whose upscaled similarity reaches the threshold."""
    return np.asarray(heatmap, dtype=np.float64) >= threshold


def crop_box(mask_or_point, shape, pad=CROP_PAD):
    """Padded bounding box; accepts a boolean mask or an (r, c) point."""
    if isinstance(mask_or_point, tuple):
        r, c = mask_or_point
        r0, c0, r1, c1 = r, c, r + 1, c + 1
    else:
        mask = np.asarray(mask_or_point)
        if not mask.any():
            raise ContractViolation("empty mask has no bounding box")
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        r0, c0, r1, c1 = rows[0], cols[0], rows[-1] + 1, cols[-1] + 1
    return (int(max(0, r0 - pad)), int(max(0, c0 - pad)),
            int(min(shape[0], r1 + pad)), int(min(shape[1], c1 + pad)))


def heatmap_to_rgb(heatmap):
    """Fixed diverging ramp: -1 maps to blue, 0 to white, +1 to red."""
    v = np.clip(np.asarray(heatmap, dtype=np.float64), -1.0, 1.0)
    pos = np.clip(v, 0.0, 1.0)
    neg = np.clip(-v, 0.0, 1.0)
    r = 1.0 - neg
    g = 1.0 - np.maximum(pos, neg)
    b = 1.0 - pos
    rgb = np.stack([r, g, b], axis=-1)
    return np.round(rgb * 255.0).astype(np.uint8)


class ArtifactStore:
    """Content-addressed files: the name is a digest of the bytes, so
    identical artifacts are written once and references never go stale."""

    def __init__(self, root):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)

    def put_bytes(self, data, suffix):
        name = hashlib.sha256(data).hexdigest()[:20] + suffix
        path = os.path.join(self.root, name)
        if not os.path.exists(path):
            tmp = path + ".tmp"
            with open(tmp, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        return name

    def put_png(self, rgb):
        import io
        buf = io.BytesIO()
        Image.fromarray(rgb).save(buf, format="PNG")
        return self.put_bytes(buf.getvalue(), ".png")

    def put_array(self, arr):
        import io
        buf = io.BytesIO()
        np.save(buf, np.asarray(arr, dtype=np.float64))
        return self.put_bytes(buf.getvalue(), ".npy")


@dataclass
class Contribution:
    prototype: str
    class_index: int
    class_name: str
    within_class: int
    similarity: float
    weight: float
    contribution: float
    argmax_cell: tuple           # feature-map (row, col)
    heatmap: np.ndarray = field(repr=False, default=None)
    contour: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {
            "prototype": self.prototype,
            "class_index": self.class_index,
            "class_name": self.class_name,
            "within_class": self.within_class,
            "similarity": self.similarity,
            "weight": self.weight,
            "contribution": self.contribution,
            "argmax_cell": list(self.argmax_cell),
        }


@dataclass
class Explanation:
    case_id: str
    bank_version: str
    class_names: tuple
    image_size: int
    tau: np.ndarray
    p_softmax: np.ndarray
    alpha: np.ndarray
    expected_p: np.ndarray
    uncertainty: float
    entropy: float
    top: list                     # Contribution, ranked
    contributions: np.ndarray     # (k, m) full table, tau rows sum
    similarities: np.ndarray      # (k, m) max similarity per prototype

    def predicted_class(self):
        return int(np.argmax(self.tau))

    def to_dict(self, store: ArtifactStore = None):
        d = {
            "case_id": self.case_id,
            "bank_version": self.bank_version,
            "class_names": list(self.class_names),
            "image_size": self.image_size,
            "tau": self.tau.tolist(),
            "p_softmax": self.p_softmax.tolist(),
            "alpha": self.alpha.tolist(),
            "expected_p": self.expected_p.tolist(),
            "uncertainty": self.uncertainty,
            "entropy": self.entropy,
            "predicted_class": self.predicted_class(),
            "top": [c.to_dict() for c in self.top],
            "contributions": self.contributions.tolist(),
            "similarities": self.similarities.tolist(),
        }
        if store is not None:
            for c, cd in zip(self.top, d["top"]):
                cd["heatmap_png"] = store.put_png(heatmap_to_rgb(c.heatmap))
                cd["heatmap_raw"] = store.put_array(c.heatmap)
                cd["contour_box"] = list(crop_box(
                    c.contour if c.contour.any() else _argmax_point(c.heatmap),
                    c.heatmap.shape))
        return d


def _argmax_point(heatmap):
    flat = int(np.argmax(heatmap))
    return (flat // heatmap.shape[1], flat % heatmap.shape[1])


def rank_contributions(similarities, weights):
    """Descending by weight*similarity; ties broken toward the lower
    prototype index so orderings are reproducible."""
    contrib = (weights * similarities).reshape(-1)
    order = np.lexsort((np.arange(contrib.size), -contrib))
    return order, contrib


def explain(model, image, case_id="case", top_n=3):
    """Full decision record for one image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ContractViolation("explain expects a single (H, W, C) image")
    if top_n < 1:
        raise ContractViolation("top_n must be >= 1")
    pred = model.predict(image[None], keep_features=True)
    maps, smax, cells = similarity_maps(pred.feature_maps, model.bank,
                                        eps=model.config.sim_eps)
    k, m = model.bank.num_classes, model.bank.per_class
    size = model.config.backbone.input_size
    weights = model.bank.w.values
    order, contrib = rank_contributions(smax[0], weights)
    top_n = min(top_n, k * m)

    top = []
    for flat in order[:top_n]:
        ci, j = int(flat) // m, int(flat) % m
        hm = bilinear_upscale(maps[0, ci, j], size, size)
        top.append(Contribution(
            prototype=model.bank.proto_id(ci, j),
            class_index=ci,
            class_name=model.bank.class_names[ci],
            within_class=j,
            similarity=float(smax[0, ci, j]),
            weight=float(weights[ci, j]),
            contribution=float(contrib[flat]),
            argmax_cell=(int(cells[0, ci, j, 0]), int(cells[0, ci, j, 1])),
            heatmap=hm,
            contour=contour_mask(hm),
        ))

    tau = pred.tau[0]
    p_soft = stable_softmax(tau)
    return Explanation(
        case_id=case_id,
        bank_version=model.bank.version(),
        class_names=tuple(model.bank.class_names),
        image_size=size,
        tau=tau,
        p_softmax=p_soft,
        alpha=pred.alpha[0],
        expected_p=pred.expected_p[0],
        uncertainty=float(pred.uncertainty[0]),
        entropy=float(normalized_entropy(pred.expected_p[0])),
        top=top,
        contributions=(weights * smax[0]),
        similarities=smax[0],
    )


# -- representatives and their audits -------------------------------------------

@dataclass(frozen=True)
class Representative:
    image_id: str
    label: int
    similarity: float
    argmax_cell: tuple
    crop: tuple  # pixel-space (r0, c0, r1, c1) around the activating region

    def to_dict(self):
        return {"image_id": self.image_id, "label": self.label,
                "similarity": self.similarity,
                "argmax_cell": list(self.argmax_cell), "crop": list(self.crop)}


def compute_representatives(model, corpus, split="train", per_proto=5,
                            batch_size=64):
    """For every prototype, the distinct corpus images it matches best,
    with the activating patch located on each."""
    images = corpus.images(split)
    labels = corpus.labels(split)
    ids = corpus.ids(split)
    feats = model.feature_maps(images, batch_size=batch_size)
    maps, smax, cells = similarity_maps(feats, model.bank, eps=model.config.sim_eps)
    k, m = model.bank.num_classes, model.bank.per_class
    size = model.config.backbone.input_size

    out = {}
    for ci in range(k):
        for j in range(m):
            scores = smax[:, ci, j]
            top = np.argsort(-scores, kind="mergesort")[:per_proto]
            reps = []
            for img_idx in top:
                hm = bilinear_upscale(maps[img_idx, ci, j], size, size)
                cm = contour_mask(hm)
                box = crop_box(cm if cm.any() else _argmax_point(hm), hm.shape)
                reps.append(Representative(
                    image_id=ids[img_idx],
                    label=int(labels[img_idx]),
                    similarity=float(scores[img_idx]),
                    argmax_cell=(int(cells[img_idx, ci, j, 0]),
                                 int(cells[img_idx, ci, j, 1])),
                    crop=box))
            out[model.bank.proto_id(ci, j)] = reps
    return out


def retrieval_accuracy(representatives, bank, ks=(1, 3, 5)):
    """acc@n: the fraction of prototypes whose top-n retrieved images
    include at least one image of the owning class; per class and
    macro."""
    k, m = bank.num_classes, bank.per_class
    per_class = {n: np.zeros(k) for n in ks}
    for ci in range(k):
        for j in range(m):
            reps = representatives[bank.proto_id(ci, j)]
            for n in ks:
                hit = any(r.label == ci for r in reps[:n])
                per_class[n][ci] += float(hit)
    result = {}
    for n in ks:
        rates = per_class[n] / m
        result[f"acc@{n}"] = {
            "per_class": rates.tolist(),
            "macro": float(rates.mean()),
        }
    return result


def localization_rate(model, corpus, split="test", batch_size=64):
    """Of the correctly classified images in the split (argmax of the
    primary predictive distribution), the fraction whose strongest
    ground-truth-class prototype peaks inside the motif mask. Peak
    location is the argmax of the upscaled heatmap."""
    images = corpus.images(split)
    labels = corpus.labels(split)
    masks = corpus.masks(split)
    preds = []
    feats = []
    for s in range(0, len(images), batch_size):
        batch = model.predict(images[s:s + batch_size], keep_features=True)
        preds.append(batch.expected_p.argmax(axis=1))
        feats.append(batch.feature_maps)
    preds = np.concatenate(preds)
    feats = np.concatenate(feats)
    maps, smax, _ = similarity_maps(feats, model.bank, eps=model.config.sim_eps)
    size = model.config.backbone.input_size
    weights = model.bank.w.values

    hits = 0
    total = 0
    for i in range(len(images)):
        if preds[i] != labels[i]:
            continue
        total += 1
        ci = int(labels[i])
        j = int(np.argmax(weights[ci] * smax[i, ci]))
        hm = bilinear_upscale(maps[i, ci, j], size, size)
        r, c = _argmax_point(hm)
        if masks[i, r, c]:
            hits += 1
    if total == 0:
        return 0.0, 0, 0
    return hits / total, hits, total


def save_explanation(explanation, out_dir):
    """Write the JSON record plus heatmap PNGs and raw arrays."""
    store = ArtifactStore(os.path.join(str(out_dir), "artifacts"))
    d = explanation.to_dict(store)
    path = os.path.join(str(out_dir), f"{explanation.case_id}.json")
    with open(path, "w") as f:
        json.dump(d, f, indent=2, sort_keys=True)
    return path
