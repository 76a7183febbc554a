"""Synthetic motif corpus: four texture classes on noisy backgrounds,
plus an out-of-distribution checkerboard split used only for rejection
experiments.

Each image is a 64x64 grayscale rendering (stored as 3-channel PNG) of
one motif on a noisy background, with class-independent confounders
(corner vignette, glare spot) sprinkled on half the images regardless
of class. A motif region mask is stored alongside the image, so
localization claims can be scored against ground truth. The region is
the drawn strokes closed with a disk of half the feature stride and
hole-filled: a ring's interior or the gap between two cluster blobs
belongs to the motif when attention is judged at the resolution the
model actually sees.

Generation is deterministic: every image draws from a generator seeded
by (corpus seed, split, class, index), so the same spec reproduces the
same bytes file for file.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ContractViolation, ManifestError

CLASS_NAMES = ("ring", "feathery-streaks", "blob-cluster", "dendrite")
OOD_NAME = "checkerboard"
_SPLIT_CODES = {"train": 0, "val": 1, "test": 2, "ood": 3}


@dataclass(frozen=True)
class SynthSpec:
    out_dir: str
    seed: int = 0
    image_size: int = 64
    train_per_class: int = 200
    val_per_class: int = 50
    test_per_class: int = 50
    ood_count: int = 50
    motif_delta: float = 0.40
    noise_level: float = 0.03
    confounder_prob: float = 0.5

    def validate(self):
        if self.image_size < 32:
            raise ContractViolation("image size must be at least 32")
        if min(self.train_per_class, self.val_per_class, self.test_per_class) < 1:
            raise ContractViolation("every split needs at least one image per class")
        return self


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    path: str
    mask_path: str
    label: str
    class_index: int  # -1 for out-of-distribution images
    split: str
    bbox: tuple  # (r0, c0, r1, c1), exclusive ends
    params: dict


# -- geometry helpers ----------------------------------------------------------

def _segments_mask(rr, cc, segments, width):
    mask = np.zeros(rr.shape, dtype=bool)
    w2 = width * width
    for (r0, c0), (r1, c1) in segments:
        dr, dc = r1 - r0, c1 - c0
        length2 = dr * dr + dc * dc
        if length2 == 0.0:
            dist2 = (rr - r0) ** 2 + (cc - c0) ** 2
        else:
            t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / length2, 0.0, 1.0)
            dist2 = (rr - r0 - t * dr) ** 2 + (cc - c0 - t * dc) ** 2
        mask |= dist2 <= w2
    return mask


def _draw_ring(rng, rr, cc, size):
    center = rng.uniform(17.0, size - 17.0, size=2)
    radius = rng.uniform(9.0, 13.0)
    thickness = rng.uniform(1.4, 2.0)
    dist = np.sqrt((rr - center[0]) ** 2 + (cc - center[1]) ** 2)
    mask = np.abs(dist - radius) <= thickness
    return mask, {"center": center.tolist(), "radius": radius, "thickness": thickness}


def _draw_feathery(rng, rr, cc, size):
    # A filled elongated patch whose margin sprouts fine barbs: a streak
    # with a feathered border, not a bare line. The solid core carries the
    # class evidence; barbs are spaced wider than any fine periodic texture.
    center = rng.uniform(18.0, size - 18.0, size=2)
    theta = rng.uniform(0.0, np.pi)
    d = np.array([np.sin(theta), np.cos(theta)])
    n = np.array([d[1], -d[0]])
    half_len = rng.uniform(9.0, 12.0)
    half_wid = rng.uniform(2.2, 3.0)
    along = (rr - center[0]) * d[0] + (cc - center[1]) * d[1]
    across = (rr - center[0]) * n[0] + (cc - center[1]) * n[1]
    core = (np.abs(along) <= half_len) & (np.abs(across) <= half_wid)
    barbs = []
    barb_len = rng.uniform(4.0, 5.0)
    for i, s in enumerate(np.linspace(-0.9 * half_len, 0.9 * half_len, 11)):
        side = 1.0 if i % 2 == 0 else -1.0
        base = center + s * d + side * half_wid * n
        bd = side * n + rng.uniform(0.5, 0.9) * d
        bd = bd / np.hypot(*bd)
        barbs.append((base, base + barb_len * bd))
    mask = core | _segments_mask(rr, cc, barbs, 0.8)
    return mask, {"center": center.tolist(), "theta": theta,
                  "half_len": half_len, "half_wid": half_wid,
                  "barb_len": barb_len}


def _draw_blobs(rng, rr, cc, size):
    # Each disc is chained off an earlier one so the cluster stays one
    # connected lobed mass: a sparse archipelago puts the similarity peak
    # between blobs, outside any single disc.
    center = rng.uniform(16.0, size - 16.0, size=2)
    count = int(rng.integers(5, 8))
    positions = [center]
    radii = [rng.uniform(3.2, 4.2)]
    attempts = 0
    while len(positions) < count and attempts < 200:
        attempts += 1
        anchor = positions[int(rng.integers(len(positions)))]
        ang = rng.uniform(0.0, 2.0 * np.pi)
        cand = anchor + rng.uniform(3.5, 6.0) * np.array([np.sin(ang), np.cos(ang)])
        if np.hypot(*(cand - center)) > 9.0:
            continue
        if all(np.hypot(*(cand - p)) >= 3.0 for p in positions):
            positions.append(cand)
            radii.append(rng.uniform(3.0, 4.2))
    mask = np.zeros(rr.shape, dtype=bool)
    for p, rad in zip(positions, radii):
        mask |= (rr - p[0]) ** 2 + (cc - p[1]) ** 2 <= rad * rad
    return mask, {"center": center.tolist(), "count": len(positions),
                  "radii": [float(r) for r in radii]}


def _draw_dendrite(rng, rr, cc, size):
    # A sparse two-level branching tree of long thin strokes. Few corners
    # per unit area: dense corner-rich clutter would share first-layer
    # texture with the held-out checkerboard and soak up its evidence.
    base = rng.uniform(22.0, size - 22.0, size=2)
    theta0 = rng.uniform(0.0, 2.0 * np.pi)
    segments = []
    stack = [(base, theta0, 14.0, 0)]
    while stack:
        start, theta, length, depth = stack.pop()
        end = start + length * np.array([np.sin(theta), np.cos(theta)])
        segments.append((start, end))
        if depth < 2:
            for side in (1.0, -1.0):
                stack.append((end, theta + side * rng.uniform(0.5, 0.8),
                              length * 0.75, depth + 1))
    mask = _segments_mask(rr, cc, segments, 1.0)
    return mask, {"base": base.tolist(), "theta": theta0,
                  "num_segments": len(segments)}


def _draw_checkerboard(rng, rr, cc, size):
    # Flat squares at a scale no trained motif occupies: bigger than any
    # stroke or blob lobe, smaller than the ring, so the board reads as
    # alien texture instead of re-exciting a known shape.
    cell = int(rng.integers(7, 9))
    cells = 3
    while cell * cells > size - 9:
        cells -= 1
    extent = cell * cells
    origin = rng.integers(4, size - extent - 4, size=2)
    mask = np.zeros(rr.shape, dtype=bool)
    for i in range(cells):
        for j in range(cells):
            if (i + j) % 2 == 0:
                r0, c0 = origin[0] + i * cell, origin[1] + j * cell
                mask[r0:r0 + cell, c0:c0 + cell] = True
    return mask, {"cell": cell, "origin": origin.tolist()}


_DRAWERS = {
    "ring": _draw_ring,
    "feathery-streaks": _draw_feathery,
    "blob-cluster": _draw_blobs,
    "dendrite": _draw_dendrite,
    OOD_NAME: _draw_checkerboard,
}


_CLOSE_RADIUS = 4  # half the backbone feature stride
_HALO_RADIUS = 2   # sub-stride margin so grid-quantized peaks on the
                   # motif's edge still count as inside the region


def _disk(radius):
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return y * y + x * x <= radius * radius


def _region_mask(ink):
    """Drawn strokes -> motif region: close sub-stride gaps, fill
    interiors, then add a thin halo."""
    region = ndimage.binary_closing(ink, structure=_disk(_CLOSE_RADIUS))
    region = ndimage.binary_fill_holes(region)
    return ndimage.binary_dilation(region, structure=_disk(_HALO_RADIUS))


def _render(rng, label, spec):
    """One image, its motif region mask, and draw parameters."""
    size = spec.image_size
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)

    area = float(size * size)
    for _ in range(40):
        mask, params = _DRAWERS[label](rng, rr, cc, size)
        region = _region_mask(mask)
        border = np.zeros_like(mask)
        border[:2, :] = border[-2:, :] = True
        border[:, :2] = border[:, -2:] = True
        if (region & border).any():
            continue
        if 0.025 <= region.sum() / area <= 0.21:
            break
    else:
        raise ContractViolation(f"could not place a valid {label} motif")

    base = rng.uniform(0.42, 0.50)
    img = np.full((size, size), base)

    vignette = rng.random() < spec.confounder_prob
    if vignette:
        corner = (float(rng.integers(2)) * (size - 1), float(rng.integers(2)) * (size - 1))
        dist2 = ((rr - corner[0]) ** 2 + (cc - corner[1]) ** 2) / (2.0 * size * size)
        img *= 1.0 - 0.18 * dist2

    img = img + spec.motif_delta * mask

    glare = rng.random() < spec.confounder_prob
    if glare:
        gc = rng.uniform(8.0, size - 8.0, size=2)
        sigma = rng.uniform(4.0, 6.0)
        d2 = (rr - gc[0]) ** 2 + (cc - gc[1]) ** 2
        img = img + 0.22 * np.exp(-d2 / (2.0 * sigma * sigma))

    img = img + rng.normal(0.0, spec.noise_level, size=img.shape)
    img = np.clip(img, 0.0, 1.0)

    params.update({"base": base, "vignette": vignette, "glare": glare})
    return img, region, params


def _bbox(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


def _image_rng(seed, split, class_code, index):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, _SPLIT_CODES[split], class_code, index])))


def generate_corpus(spec: SynthSpec):
    """Write images, masks and the manifest; returns the loaded Corpus."""
    spec.validate()
    root = Path(spec.out_dir)
    manifest_path = root / "manifest.jsonl"
    if manifest_path.exists():
        raise ContractViolation(f"refusing to overwrite existing corpus at {root}")
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)

    plan = [("train", spec.train_per_class), ("val", spec.val_per_class),
            ("test", spec.test_per_class)]
    records = []
    for split, per_class in plan:
        for ci, label in enumerate(CLASS_NAMES):
            for idx in range(per_class):
                rng = _image_rng(spec.seed, split, ci, idx)
                records.append(_write_one(root, rng, label, ci, split, idx, spec))
    for idx in range(spec.ood_count):
        rng = _image_rng(spec.seed, "ood", 99, idx)
        records.append(_write_one(root, rng, OOD_NAME, -1, "ood", idx, spec))

    with open(manifest_path, "w") as f:
        for rec in records:
            f.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    with open(root / "spec.json", "w") as f:
        json.dump({"spec": asdict(spec), "class_names": list(CLASS_NAMES)},
                  f, indent=2, sort_keys=True)
    return load_corpus(root)


def _write_one(root, rng, label, class_index, split, idx, spec):
    img, mask, params = _render(rng, label, spec)
    rec_id = f"{split}-{label}-{idx:04d}"
    img_rel = f"images/{rec_id}.png"
    mask_rel = f"masks/{rec_id}.png"
    gray = np.round(img * 255.0).astype(np.uint8)
    Image.fromarray(np.stack([gray] * 3, axis=-1), mode="RGB").save(root / img_rel)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(root / mask_rel)
    return CorpusRecord(id=rec_id, path=img_rel, mask_path=mask_rel, label=label,
                        class_index=class_index, split=split, bbox=_bbox(mask),
                        params=params)


def load_image(path):
    """PNG -> float64 (H, W, 3) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


class Corpus:
    """Loaded manifest with lazy image access and per-split caching."""

    def __init__(self, root, records, class_names):
        self.root = Path(root)
        self.records = records
        self.class_names = tuple(class_names)
        self._by_id = {r.id: r for r in records}
        self._image_cache = {}

    def __len__(self):
        return len(self.records)

    def record(self, rec_id):
        if rec_id not in self._by_id:
            raise ManifestError(f"unknown corpus id {rec_id!r}")
        return self._by_id[rec_id]

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def ids(self, split):
        return [r.id for r in self.split(split)]

    def images(self, split):
        """(n, H, W, 3) float64 stack for a split, cached after first load."""
        if split not in self._image_cache:
            recs = self.split(split)
            if not recs:
                raise ManifestError(f"split {split!r} is empty")
            self._image_cache[split] = np.stack(
                [load_image(self.root / r.path) for r in recs])
        return self._image_cache[split]

    def labels(self, split):
        return np.array([r.class_index for r in self.split(split)], dtype=np.int64)

    def masks(self, split):
        recs = self.split(split)
        out = []
        for r in recs:
            with Image.open(self.root / r.mask_path) as im:
                out.append(np.asarray(im.convert("L")) > 127)
        return np.stack(out)

    def image_by_id(self, rec_id):
        return load_image(self.root / self.record(rec_id).path)


def load_corpus(root):
    root = Path(root)
    manifest_path = root / "manifest.jsonl"
    spec_path = root / "spec.json"
    if not manifest_path.exists():
        raise ManifestError(f"no manifest at {manifest_path}")
    records = []
    with open(manifest_path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"manifest line {lineno}: {e}") from None
            try:
                records.append(CorpusRecord(
                    id=d["id"], path=d["path"], mask_path=d["mask_path"],
                    label=d["label"], class_index=int(d["class_index"]),
                    split=d["split"], bbox=tuple(d["bbox"]), params=d["params"]))
            except (KeyError, TypeError) as e:
                raise ManifestError(f"manifest line {lineno} missing field: {e}") from None

    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate ids in manifest")
    for r in records:
        if r.split not in _SPLIT_CODES:
            raise ManifestError(f"{r.id}: unknown split {r.split!r}")
        for rel in (r.path, r.mask_path):
            if not (root / rel).exists():
                raise ManifestError(f"{r.id}: missing file {rel}")
        if r.split != "ood" and r.class_index < 0:
            raise ManifestError(f"{r.id}: in-distribution record lacks a class index")

    if spec_path.exists():
        with open(spec_path) as f:
            class_names = json.load(f)["class_names"]
    else:
        class_names = sorted({r.label for r in records if r.class_index >= 0})
    return Corpus(root, records, class_names)
