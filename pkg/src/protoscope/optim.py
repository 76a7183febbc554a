"""AdamW with decoupled weight decay and per-group hyperparameters.

Each group carries its own learning rate, betas, weight decay and step
counter, so freezing a group (by not stepping it) leaves its moment
estimates and bias correction untouched.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractViolation, NumericFault


@dataclass
class ParamGroup:
    name: str
    params: dict  # name -> Tensor
    lr: float
    betas: tuple = (0.9, 0.99)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ContractViolation(f"group '{self.name}': negative learning rate")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ContractViolation(f"group '{self.name}': betas must be in [0, 1)")
        for pname, t in self.params.items():
            if not isinstance(t, Tensor):
                raise ContractViolation(f"group '{self.name}': {pname} is not a Tensor")
            self.m.setdefault(pname, np.zeros_like(t.values))
            self.v.setdefault(pname, np.zeros_like(t.values))


class AdamW:
    def __init__(self, groups):
        names = [g.name for g in groups]
        if len(set(names)) != len(names):
            raise ContractViolation("duplicate optimizer group names")
        self.groups = {g.name: g for g in groups}

    def zero_grad(self):
        for g in self.groups.values():
            for t in g.params.values():
                t.grad = None

    def step(self, active=None):
        """Apply one update to every group (or to ``active`` names only).

        Parameters with no accumulated gradient are treated as having a
        zero gradient: their moments decay and weight decay still
        applies, which keeps a group's trajectory identical whether a
        zero gradient was stored explicitly or not.
        """
        for name, g in self.groups.items():
            if active is not None and name not in active:
                continue
            g.step_count += 1
            b1, b2 = g.betas
            c1 = 1.0 - b1 ** g.step_count
            c2 = 1.0 - b2 ** g.step_count
            for pname, t in g.params.items():
                grad = t.grad if t.grad is not None else 0.0
                if t.grad is not None and not np.all(np.isfinite(t.grad)):
                    raise NumericFault("adamw", f"gradient of {name}.{pname}")
                g.m[pname] = b1 * g.m[pname] + (1.0 - b1) * grad
                g.v[pname] = b2 * g.v[pname] + (1.0 - b2) * (grad * grad)
                update = (g.m[pname] / c1) / (np.sqrt(g.v[pname] / c2) + g.eps)
                if g.weight_decay:
                    t.values -= g.lr * g.weight_decay * t.values
                t.values -= g.lr * update

    def state(self):
        """Flat array/state dict suitable for checkpointing."""
        tensors = {}
        scalars = {}
        for name, g in self.groups.items():
            scalars[name] = {
                "lr": g.lr, "betas": list(g.betas), "eps": g.eps,
                "weight_decay": g.weight_decay, "step_count": g.step_count,
            }
            for pname in g.params:
                tensors[f"optim.{name}.{pname}.m"] = g.m[pname]
                tensors[f"optim.{name}.{pname}.v"] = g.v[pname]
        return scalars, tensors

    def load_state(self, scalars, tensors):
        for name, g in self.groups.items():
            if name not in scalars:
                raise ContractViolation(f"optimizer state missing group '{name}'")
            s = scalars[name]
            g.lr = float(s["lr"])
            g.betas = tuple(s["betas"])
            g.eps = float(s["eps"])
            g.weight_decay = float(s["weight_decay"])
            g.step_count = int(s["step_count"])
            for pname in g.params:
                mkey = f"optim.{name}.{pname}.m"
                vkey = f"optim.{name}.{pname}.v"
                if mkey not in tensors or vkey not in tensors:
                    raise ContractViolation(f"optimizer state missing {mkey}")
                if tensors[mkey].shape != g.params[pname].values.shape:
                    raise ContractViolation(f"optimizer state shape mismatch for {mkey}")
                g.m[pname] = tensors[mkey].astype(np.float64).copy()
                g.v[pname] = tensors[vkey].astype(np.float64).copy()
