"""Evaluation statistics: ranking, agreement, screening rates, the
diagnostic odds ratio, and entropy-based rejection.

Formulas follow the standard epidemiological definitions. Where a
statistic is undefined for the given data (a single observed class,
degenerate marginals, a zero denominator) the functions raise
UndefinedMetricError or flag the affected entry rather than returning a
silently wrong number.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, UndefinedMetricError

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


def _ranks_with_ties(values):
    """Average ranks (1-based); tied values share the mean of their ranks."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, positive):
    """Area under the ROC curve via the rank statistic.

    Equals the probability that a random positive outscores a random
    negative, ties counted half, and is exactly equal to the pairwise
    count because average ranks are dyadic rationals.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    if scores.shape != positive.shape or scores.ndim != 1:
        raise ContractViolation("auroc expects matching 1-d scores and labels")
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auroc needs both positive and negative examples")
    ranks = _ranks_with_ties(scores)
    pos_rank_sum = ranks[positive].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auroc(score_matrix, labels):
    """Unweighted mean of one-vs-rest AUROCs over the classes present
    in the score matrix."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or len(labels) != scores.shape[0]:
        raise ContractViolation("macro_auroc expects (n, k) scores and n labels")
    per_class = [auroc(scores[:, c], labels == c) for c in range(scores.shape[1])]
    return float(np.mean(per_class)), per_class


def confusion_matrix(true_labels, pred_labels, k):
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ContractViolation("label arrays differ in length")
    if np.any((t < 0) | (t >= k)) or np.any((p < 0) | (p >= k)):
        raise ContractViolation("labels out of range")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def cohen_kappa(true_labels, pred_labels, k):
    """Chance-corrected agreement between two labelings.

    kappa = (p_o - p_e) / (1 - p_e) with p_e the product-of-marginals
    chance rate. Undefined when p_e = 1 (both raters constant).
    """
    cm = confusion_matrix(true_labels, pred_labels, k)
    n = cm.sum()
    if n == 0:
        raise UndefinedMetricError("kappa of an empty sample")
    po = float(np.trace(cm)) / n
    pe = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (n * n)
    if pe >= 1.0:
        raise UndefinedMetricError("kappa undefined: degenerate marginals (p_e = 1)")
    return (po - pe) / (1.0 - pe)


@dataclass(frozen=True)
class ClassRates:
    class_index: int
    sensitivity: float | None
    specificity: float | None
    ppv: float | None

    @property
    def defined(self):
        return None not in (self.sensitivity, self.specificity, self.ppv)


def per_class_rates(true_labels, pred_labels, k):
    """Sensitivity, specificity and PPV per class, one-vs-rest.

    A zero denominator yields None for that entry; macro averages in
    ``macro_rates`` skip undefined entries and report how many were
    skipped.
    """
    cm = confusion_matrix(true_labels, pred_labels, k)
    out = []
    total = cm.sum()
    for c in range(k):
        tp = int(cm[c, c])
        fn = int(cm[c, :].sum()) - tp
        fp = int(cm[:, c].sum()) - tp
        tn = int(total) - tp - fn - fp
        sens = tp / (tp + fn) if tp + fn > 0 else None
        spec = tn / (tn + fp) if tn + fp > 0 else None
        ppv = tp / (tp + fp) if tp + fp > 0 else None
        out.append(ClassRates(c, sens, spec, ppv))
    return out


def macro_rates(rates):
    def mean_of(vals):
        vals = [v for v in vals if v is not None]
        return (float(np.mean(vals)) if vals else None, len(vals))

    sens, n_sens = mean_of([r.sensitivity for r in rates])
    spec, n_spec = mean_of([r.specificity for r in rates])
    ppv, n_ppv = mean_of([r.ppv for r in rates])
    return {"sensitivity": sens, "specificity": spec, "ppv": ppv,
            "defined_counts": {"sensitivity": n_sens, "specificity": n_spec,
                               "ppv": n_ppv, "classes": len(rates)}}


def fleiss_kappa(counts):
    """Agreement among a fixed number of raters per item.

    ``counts`` is (items, categories) with constant row sums (raters per
    item). Undefined when all mass lands in one category.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1:
        raise ContractViolation("fleiss_kappa expects an (items, categories) table")
    raters = c.sum(axis=1)
    n = raters[0]
    if n < 2 or not np.all(raters == n):
        raise ContractViolation("every item needs the same rater count >= 2")
    p_cat = c.sum(axis=0) / (c.shape[0] * n)
    p_item = ((c * c).sum(axis=1) - n) / (n * (n - 1))
    p_bar = float(p_item.mean())
    p_e = float((p_cat * p_cat).sum())
    if p_e >= 1.0:
        raise UndefinedMetricError("fleiss kappa undefined: all ratings identical")
    return (p_bar - p_e) / (1.0 - p_e)


# -- uncertainty-aware rejection ----------------------------------------------

def normalized_entropy(p):
    """Shannon entropy of each row, normalized by ln(k) into [0, 1]."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    if np.any(arr < 0) or not np.allclose(arr.sum(axis=1), 1.0, atol=1e-8):
        raise ContractViolation("rows must be probability vectors")
    k = arr.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(arr > 0.0, arr * np.log(arr), 0.0)
    h = -terms.sum(axis=1) / math.log(k)
    return h if np.asarray(p).ndim > 1 else float(h[0])


def reject_or_accept(p, threshold=0.7):
    """Abstain when normalized entropy is at or above the threshold;
    otherwise return the argmax class."""
    h = normalized_entropy(p)
    if np.ndim(p) == 1:
        return ("reject", None) if h >= threshold else ("accept", int(np.argmax(p)))
    arr = np.asarray(p)
    return [("reject", None) if hi >= threshold else ("accept", int(np.argmax(row)))
            for hi, row in zip(h, arr)]


# -- diagnostic odds ratio ------------------------------------------------------

@dataclass(frozen=True)
class DorReport:
    prototype: str
    target_class: int
    cells: tuple            # (activated&class, activated&not, silent&class, silent&not)
    corrected: bool         # Haldane-Anscombe +0.5 applied
    dor: float
    ci_low: float
    ci_high: float
    significant: bool       # 95% CI lower bound above 1

    def to_dict(self):
        return {
            "prototype": self.prototype,
            "target_class": self.target_class,
            "cells": list(self.cells),
            "corrected": self.corrected,
            "dor": self.dor,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "significant": self.significant,
        }


def diagnostic_odds_ratio(n_act_class, n_act_other, n_sil_class, n_sil_other,
                          prototype="", target_class=-1):
    """Odds of activation in-class against odds of activation
    out-of-class, with a 95% CI on the log scale.

        DOR = (a / c) / (b / d) = a d / (b c)
        ln DOR +- 1.96 * sqrt(1/a + 1/b + 1/c + 1/d)

    where a = activated & in-class, b = activated & other class,
    c = silent & in-class, d = silent & other. Any zero cell triggers
    the Haldane-Anscombe correction (+0.5 to all four cells), flagged in
    the report. ``significant`` means the CI lower bound clears 1.
    """
    cells = (n_act_class, n_act_other, n_sil_class, n_sil_other)
    if any(c < 0 for c in cells):
        raise ContractViolation("contingency cells must be nonnegative")
    if sum(cells) == 0:
        raise UndefinedMetricError("empty contingency table")
    corrected = any(c == 0 for c in cells)
    a, b, c, d = [x + 0.5 for x in cells] if corrected else [float(x) for x in cells]
    dor = (a * d) / (b * c)
    se = math.sqrt(1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d)
    log_dor = math.log(dor)
    ci_low = math.exp(log_dor - Z_95 * se)
    ci_high = math.exp(log_dor + Z_95 * se)
    return DorReport(prototype=prototype, target_class=target_class, cells=cells,
                     corrected=corrected, dor=dor, ci_low=ci_low, ci_high=ci_high,
                     significant=ci_low > 1.0)


ACTIVATION_THRESHOLD = 0.5


def activation_table(max_sims, labels, proto_index, class_index,
                     threshold=ACTIVATION_THRESHOLD):
    """2x2 counts for one prototype against one class.

    ``max_sims`` is (n_images, n_prototypes) of max cosine similarity;
    a prototype is activated on an image when its entry exceeds the
    threshold (strictly).
    """
    sims = np.asarray(max_sims, dtype=np.float64)
    labels = np.asarray(labels)
    if sims.ndim != 2 or len(labels) != sims.shape[0]:
        raise ContractViolation("max_sims (n, p) and labels (n,) expected")
    act = sims[:, proto_index] > threshold
    in_class = labels == class_index
    return (int(np.sum(act & in_class)), int(np.sum(act & ~in_class)),
            int(np.sum(~act & in_class)), int(np.sum(~act & ~in_class)))


def dor_reports(max_sims, labels, num_classes, per_class,
                threshold=ACTIVATION_THRESHOLD, zero_nonsignificant=False):
    """DOR of every (prototype, class) pair from per-image activations.

    With ``zero_nonsignificant`` the returned per-prototype own-class
    DOR values are zeroed when not significant, a display convention
    for summary figures; the full reports always keep the raw values.
    """
    reports = {}
    for flat in range(num_classes * per_class):
        for c in range(num_classes):
            cells = activation_table(max_sims, labels, flat, c, threshold)
            reports[(f"P{flat}", c)] = diagnostic_odds_ratio(
                *cells, prototype=f"P{flat}", target_class=c)
    summary = {}
    for flat in range(num_classes * per_class):
        owner = flat // per_class
        rep = reports[(f"P{flat}", owner)]
        value = rep.dor
        if zero_nonsignificant and not rep.significant:
            value = 0.0
        summary[f"P{flat}"] = value
    return reports, summary
