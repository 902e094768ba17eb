"""Adam optimizer over named parameter collections."""

from __future__ import annotations

from typing import Dict, Mapping, Optional

import numpy as np

from bcaf.backend import kernels
from bcaf.errors import ConfigError
from bcaf.tensor import Tensor


def init_adam_state(params: Mapping[str, Tensor]) -> Dict[str, dict]:
    """Zero first/second moments and timestep for every parameter."""
    return {
        name: {
            "m": np.zeros(t.data.shape, dtype=np.float32).reshape(-1),
            "v": np.zeros(t.data.shape, dtype=np.float32).reshape(-1),
            "t": 0,
        }
        for name, t in params.items()
    }


def adam_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: Dict[str, dict],
    lr: float,
    l2: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    decoupled: bool = False,
) -> None:
    """One Adam update, in place.

    ``grads`` defaults to each parameter's accumulated ``.grad``. L2 is
    coupled by default (added to the gradient); ``decoupled=True`` applies
    it as a direct weight decay instead. Parameters with no gradient this
    step are skipped.
    """
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            continue
        st = state.get(name)
        if st is None:
            raise ConfigError(f"adam_step: no optimizer state for parameter {name!r}")
        st["t"] += 1
        flat_p = p.data.reshape(-1)
        flat_g = np.ascontiguousarray(np.asarray(g, dtype=np.float32).reshape(-1))
        kernels.adam_step_kernel(
            flat_p,
            flat_g,
            st["m"],
            st["v"],
            st["t"],
            float(lr),
            float(beta1),
            float(beta2),
            float(eps),
            float(l2),
            bool(decoupled),
        )


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()
