"""Human-in-the-loop edits to a decision: discarding displayed
prototypes from one case, and bank-wide weight adjustment from
diagnostic-odds-ratio evidence.

Local discarding is pure arithmetic on an explanation record: flipping
a displayed prototype off subtracts exactly its contribution from its
class score, and the probabilities are re-normalized with a softmax.
Keeping every displayed prototype therefore reproduces the original
scores bit for bit. The scores of prototypes that were never displayed
stay in the totals by default ("retain_tail"); ``mode="displayed_only"``
rebuilds each class score from the displayed entries alone.

Global adjustment rescales each prototype's weight by how specific its
activations are to its own class:

    w_new = (log DOR own class) / (sum over other classes of log DOR) * w

computed only for prototypes whose own-class DOR is statistically
significant; log-DOR factors are floored at a small positive epsilon so
a nuisance class with DOR near or below 1 cannot zero or flip the
denominator. Weights are projected back to nonnegative and the result
is a new immutable bank version.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, StaleSessionError
from .model import stable_softmax
from .prototypes import PrototypeBank

LOG_DOR_FLOOR = 1e-3


def _entry_fields(explanation):
    """(tau, [(class_index, contribution)], bank_version) from either an
    Explanation object or its serialized dict."""
    if isinstance(explanation, dict):
        tau = np.asarray(explanation["tau"], dtype=np.float64)
        entries = [(int(e["class_index"]), float(e["contribution"]))
                   for e in explanation["top"]]
        version = explanation["bank_version"]
    else:
        tau = np.asarray(explanation.tau, dtype=np.float64)
        entries = [(c.class_index, c.contribution) for c in explanation.top]
        version = explanation.bank_version
    return tau, entries, version


def local_discard(explanation, mask, bank_version=None, mode="retain_tail"):
    """Recompute scores with displayed prototypes kept (1) or discarded
    (0). Returns (tau_hat, p_hat).

    ``mask`` must have exactly one entry per displayed prototype.
    ``bank_version``, when given, must match the explanation's; a
    mismatch means the weights changed since the case was explained.
    """
    tau, entries, version = _entry_fields(explanation)
    if bank_version is not None and version != bank_version:
        raise StaleSessionError(
            f"explanation was computed against bank {version}, "
            f"server now holds {bank_version}")
    mask = list(mask)
    if len(mask) != len(entries):
        raise ContractViolation(
            f"mask has {len(mask)} entries, explanation displays {len(entries)}")
    if any(b not in (0, 1, True, False) for b in mask):
        raise ContractViolation("mask entries must be 0 or 1")
    if mode not in ("retain_tail", "displayed_only"):
        raise ContractViolation(f"unknown discard mode {mode!r}")

    if mode == "retain_tail":
        tau_hat = tau.copy()
        for keep, (ci, contribution) in zip(mask, entries):
            if not keep:
                tau_hat[ci] -= contribution
    else:
        tau_hat = np.zeros_like(tau)
        for keep, (ci, contribution) in zip(mask, entries):
            if keep:
                tau_hat[ci] += contribution
    return tau_hat, stable_softmax(tau_hat)


def global_adjust(bank: PrototypeBank, reports, log_floor=LOG_DOR_FLOOR):
    """Rescale weights by own-class versus other-class log-DOR.

    ``reports`` maps (prototype_id, class_index) to a DorReport and must
    cover every pair. Prototypes without a significant own-class DOR
    keep their weight unchanged. Returns a new bank.
    """
    k, m = bank.num_classes, bank.per_class
    new_w = bank.w.values.copy()
    for ci in range(k):
        for j in range(m):
            pid = bank.proto_id(ci, j)
            for c in range(k):
                if (pid, c) not in reports:
                    raise ContractViolation(f"missing DOR report for ({pid}, {c})")
            own = reports[(pid, ci)]
            if not own.significant:
                continue
            num = max(np.log(own.dor), log_floor)
            den = 0.0
            for c in range(k):
                if c == ci:
                    continue
                den += max(np.log(reports[(pid, c)].dor), log_floor)
            new_w[ci, j] = (num / den) * bank.w.values[ci, j]
    np.maximum(new_w, 0.0, out=new_w)
    return bank.with_weights(new_w)


@dataclass
class AdjustmentDelta:
    prototype: str
    target_class: int
    before: float
    after: float
    significant: bool

    def to_dict(self):
        return {"prototype": self.prototype, "target_class": self.target_class,
                "before": self.before, "after": self.after,
                "significant": self.significant}


def adjustment_summary(bank_before, bank_after, reports):
    """Per-prototype weight deltas, for the adjust command's report."""
    out = []
    k, m = bank_before.num_classes, bank_before.per_class
    for ci in range(k):
        for j in range(m):
            pid = bank_before.proto_id(ci, j)
            out.append(AdjustmentDelta(
                prototype=pid, target_class=ci,
                before=float(bank_before.w.values[ci, j]),
                after=float(bank_after.w.values[ci, j]),
                significant=reports[(pid, ci)].significant))
    return out
