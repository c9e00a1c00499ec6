"""Timing comparison between the compiled and NumPy kernel backends."""

import time

import numpy as np

from . import backend
from .aggregators import AggregatorConfig, StageCounters, aggregate, aggregate_backward, init_params
from . import ops


def _time_call(fn, repeats: int) -> float:
    """Best-of-``repeats`` wall time per call, in microseconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        best = min(best, dt)
    return best * 1e6


def run_benchmark(m=1024, m1=128, g1=16, g2=8, n=25, repeats=5):
    """Time the hot kernels and a full forward/backward on every backend.

    Returns a list of row dicts: case, backend, microseconds, and the
    speedup of each backend relative to the python fallback.
    """
    rng = np.random.default_rng(0)
    config = AggregatorConfig.hgnl(m, m1, g1, g2)
    params = init_params(config, 0)
    f = rng.uniform(-1.0, 1.0, (m, n))
    q = rng.uniform(-1.0, 1.0, (m1, n))
    attn = rng.uniform(0.0, 1.0, (g2, n, n))
    wq = params.query_w
    bq = np.zeros(m1)

    cases = {
        f"grouped_conv1x1 m={m} m1={m1} g1={g1} n={n}":
            lambda: ops.grouped_conv1x1(wq, bq, f, g1),
        f"gmm_qk m1={m1} g2={g2} n={n}": lambda: ops.gmm_qk(q, q, g2),
        f"gmm_va m={m} g2={g2} n={n}": lambda: ops.gmm_va(f, attn),
        f"hgnl forward m={m} n={n}": lambda: aggregate(f, params),
    }

    def fwd_bwd():
        fv, state = aggregate(f, params)
        aggregate_backward(state, fv)

    cases[f"hgnl forward+backward m={m} n={n}"] = fwd_bwd

    previous = backend.active_backend()
    rows = []
    try:
        for case, fn in cases.items():
            per_backend = {}
            for name in backend.available_backends():
                backend.select(name)
                fn()  # warm up
                per_backend[name] = _time_call(fn, repeats)
            for name, usec in per_backend.items():
                rows.append({
                    "case": case,
                    "backend": name,
                    "usec": usec,
                    "speedup_vs_python": per_backend["python"] / usec,
                })
    finally:
        backend.select(previous)
    return rows


def render_rows(rows) -> str:
    case_w = max(len(r["case"]) for r in rows)
    lines = [f"{'case'.ljust(case_w)}  {'backend':>8}  {'usec':>12}  {'speedup':>8}"]
    for r in rows:
        lines.append(
            f"{r['case'].ljust(case_w)}  {r['backend']:>8}  "
            f"{r['usec']:>12.1f}  {r['speedup_vs_python']:>8.2f}"
        )
    return "\n".join(lines)
