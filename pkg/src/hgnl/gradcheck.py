"""Finite-difference verification of the hand-written adjoints.

The check projects the aggregated vector onto a fixed random direction to
get a scalar loss, computes analytic gradients through
:func:`aggregate_backward`, and compares every parameter block plus the
input against central differences.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aggregators import AggregatorConfig, aggregate, aggregate_backward, init_params


def numeric_gradient(fn, x, eps: float = 1e-6):
    """Central-difference gradient of scalar ``fn`` w.r.t. array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric) -> float:
    """max |a - n| / max(1, |a|, |n|) over all entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


@dataclass
class GradCheckReport:
    config: AggregatorConfig
    n: int
    seed: int
    eps: float
    tolerance: float
    errors: dict
    max_error: float
    worst_block: str
    passed: bool

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n": self.n,
            "seed": self.seed,
            "eps": self.eps,
            "tolerance": self.tolerance,
            "errors": self.errors,
            "max_error": self.max_error,
            "worst_block": self.worst_block,
            "passed": self.passed,
        }


def check_aggregator(
    config: AggregatorConfig,
    n: int,
    seed: int = 0,
    eps: float = 1e-6,
    tolerance: float = 1e-5,
    corrupt_block: Optional[str] = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``corrupt_block`` deliberately perturbs one analytic gradient block so
    tests can confirm the check actually fails when an adjoint is wrong.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    f = rng.uniform(-1.0, 1.0, (config.m, n))
    direction = rng.uniform(-1.0, 1.0, config.m)
    if config.has_params:
        # a zero scale would hide the whole attention path from the check
        params.scale = float(rng.uniform(0.5, 1.5))

    fv, state = aggregate(f, params)
    grad_f, grads = aggregate_backward(state, direction)

    analytic = {"input": grad_f}
    for name, arr in grads.named_arrays():
        analytic[name] = arr
    if config.has_params:
        analytic["scale"] = np.array([grads.scale])
    if corrupt_block is not None:
        if corrupt_block not in analytic:
            raise KeyError(f"no gradient block named {corrupt_block!r}")
        analytic[corrupt_block] = analytic[corrupt_block] * 1.05 + 0.01

    def loss_with(p, x):
        out, _ = aggregate(x, p)
        return float(direction @ out)

    errors = {}
    errors["input"] = relative_error(
        analytic["input"], numeric_gradient(lambda x: loss_with(params, x), f.copy(), eps)
    )
    if config.has_params:
        for name, _ in params.named_arrays():
            probe = params.copy()

            def block_loss(arr, _name=name, _probe=probe):
                setattr(_probe, _name, arr)
                return loss_with(_probe, f)

            numeric = numeric_gradient(block_loss, getattr(params, name).copy(), eps)
            errors[name] = relative_error(analytic[name], numeric)
        probe = params.copy()

        def scale_loss(arr, _probe=probe):
            _probe.scale = float(arr[0])
            return loss_with(_probe, f)

        numeric = numeric_gradient(scale_loss, np.array([params.scale]), eps)
        errors["scale"] = relative_error(analytic["scale"], numeric)

    worst = max(errors, key=errors.get)
    max_err = errors[worst]
    return GradCheckReport(
        config=config, n=n, seed=seed, eps=eps, tolerance=tolerance,
        errors=errors, max_error=max_err, worst_block=worst,
        passed=max_err <= tolerance,
    )
