"""Analytic parameter and MAdds accounting for the aggregators.

Counts are exact integers under the same conventions the instrumented
kernels use: a 1x1 convolution with ``g`` groups costs
``2 * c_in * c_out * n / g`` MAdds (bias additions included); a matrix
product costs ``2k - 1`` MAdds per output entry with no bias term. The
residual combination, frame mean, and activations are not modeled
(reported as zero-cost stages).

Sharing weights across groups shrinks parameter counts by the layer's
group count but leaves MAdds unchanged.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aggregators import AggregatorConfig, StageCounters, aggregate, init_params
from .errors import ConfigError

PARAM_STAGES = ("query_conv", "key_conv", "value_conv", "others")
MADDS_STAGES = ("query_conv", "key_conv", "value_conv",
                "attention_product", "activation", "output_product")


@dataclass
class CostReport:
    """Exact per-stage parameter counts and (optionally) MAdds for one config."""

    config: AggregatorConfig
    params: dict
    n: Optional[int] = None
    madds: Optional[dict] = None
    measured: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {"config": self.config.to_dict(), "params": self.params}
        if self.n is not None:
            out["n"] = self.n
        if self.madds is not None:
            out["madds"] = self.madds
        if self.measured is not None:
            out["measured"] = self.measured
        return out


def _with_total(entries: dict) -> dict:
    entries = dict(entries)
    entries["total"] = sum(entries.values())
    return entries


def param_count(config: AggregatorConfig) -> CostReport:
    """Exact learned-scalar count per layer (the residual scale is not counted)."""
    m, m1 = config.m, config.m1
    if config.kind == "nl":
        qk = m * m1 + m1
        v = m * m + m
    elif config.kind == "hgnl":
        g1, g2 = config.g1, config.g2
        qk = g1 * ((m // g1) * (m1 // g1) + m1 // g1)
        v = g2 * ((m // g2) ** 2 + m // g2)
        if config.shared:
            qk //= g1
            v //= g2
    else:
        qk = v = 0
    counts = _with_total({
        "query_conv": qk, "key_conv": qk, "value_conv": v, "others": 0,
    })
    return CostReport(config=config, params=counts)


def madds(config: AggregatorConfig, n: int) -> CostReport:
    """Exact MAdds per forward stage for ``n`` frames."""
    if n < 1:
        raise ConfigError(f"frame count must be >= 1, got {n}")
    m, m1 = config.m, config.m1
    if config.kind == "nl":
        stages = {
            "query_conv": 2 * m * m1 * n,
            "key_conv": 2 * m * m1 * n,
            "value_conv": 2 * m * m * n,
            "attention_product": n * n * (2 * m1 - 1),
            "activation": 0,
            "output_product": m * n * (2 * n - 1),
        }
    elif config.kind == "hgnl":
        g1, g2 = config.g1, config.g2
        stages = {
            "query_conv": 2 * m * m1 * n // g1,
            "key_conv": 2 * m * m1 * n // g1,
            "value_conv": 2 * m * m * n // g2,
            "attention_product": 2 * m1 * n * n - g2 * n * n,
            "activation": 0,
            "output_product": m * n * (2 * n - 1),
        }
    else:
        stages = {name: 0 for name in MADDS_STAGES}
    report = param_count(config)
    report.n = n
    report.madds = _with_total(stages)
    return report


def measured_madds(config: AggregatorConfig, n: int, seed: int = 0) -> dict:
    """Per-stage MAdds tallied by instrumented kernels on a real forward pass."""
    params = init_params(config, seed)
    rng = np.random.default_rng(seed)
    f = rng.uniform(-1.0, 1.0, (config.m, n))
    counters = StageCounters()
    aggregate(f, params, counters)
    return _with_total(counters.madds_by_stage())


def attach_measurement(report: CostReport, seed: int = 0) -> CostReport:
    if report.n is None:
        raise ConfigError("report has no frame count; build it with madds()")
    report.measured = measured_madds(report.config, report.n, seed)
    return report


def compare(configs, n: int) -> dict:
    """Pairwise parameter and MAdds ratios across configurations."""
    if not configs:
        raise ConfigError("need at least one configuration to compare")
    reports = [madds(cfg, n) for cfg in configs]
    entries = [
        {
            "label": r.config.label(),
            "params_total": r.params["total"],
            "madds_total": r.madds["total"],
        }
        for r in reports
    ]
    ratios = []
    for i, a in enumerate(entries):
        for b in entries[i + 1:]:
            ratios.append({
                "numerator": a["label"],
                "denominator": b["label"],
                "param_ratio": _ratio(a["params_total"], b["params_total"]),
                "madds_ratio": _ratio(a["madds_total"], b["madds_total"]),
            })
    return {"n": n, "configs": entries, "ratios": ratios}


def _ratio(a, b):
    return float("inf") if b == 0 else a / b


def madds_formulas(config: AggregatorConfig) -> dict:
    """Closed-form MAdds per stage as strings in (m, m1, g1, g2, n)."""
    if config.kind == "nl":
        return {
            "query_conv": "2*m*m1*n",
            "key_conv": "2*m*m1*n",
            "value_conv": "2*m*m*n",
            "attention_product": "n*n*(2*m1 - 1)",
            "activation": "0",
            "output_product": "m*n*(2*n - 1)",
        }
    if config.kind == "hgnl":
        return {
            "query_conv": "2*m*m1*n/g1",
            "key_conv": "2*m*m1*n/g1",
            "value_conv": "2*m*m*n/g2",
            "attention_product": "2*m1*n*n - g2*n*n",
            "activation": "0",
            "output_product": "m*n*(2*n - 1)",
        }
    return {name: "0" for name in MADDS_STAGES}


def standard_table_configs(m: int = 1024):
    """The four configurations used by the reference cost tables."""
    return [
        AggregatorConfig.nl(m, m // 2),
        AggregatorConfig.nl(m, m // 8),
        AggregatorConfig.hgnl(m, m // 8, 16, 8),
        AggregatorConfig.hgnl(m, m // 8, 16, 8, shared=True),
    ]


# ---------------------------------------------------------------------------
# plain-text rendering

_PARAM_ROWS = (
    ("query_conv", "query conv"),
    ("key_conv", "key conv"),
    ("value_conv", "value conv"),
    ("others", "others"),
    ("total", "total"),
)
_MADDS_ROWS = (
    ("query_conv", "query conv"),
    ("key_conv", "key conv"),
    ("value_conv", "value conv"),
    ("attention_product", "attention product"),
    ("activation", "activation"),
    ("output_product", "output product"),
    ("total", "total"),
)


def _render_grid(title, row_labels, col_labels, cells):
    label_w = max(len(r) for r in row_labels + [title])
    col_ws = [
        max(len(col_labels[j]), max(len(row[j]) for row in cells))
        for j in range(len(col_labels))
    ]
    lines = [
        "  ".join([title.ljust(label_w)]
                  + [col_labels[j].rjust(col_ws[j]) for j in range(len(col_labels))])
    ]
    for label, row in zip(row_labels, cells):
        lines.append(
            "  ".join([label.ljust(label_w)]
                      + [row[j].rjust(col_ws[j]) for j in range(len(col_labels))])
        )
    return "\n".join(lines)


def render_params_table(reports) -> str:
    cols = [r.config.label() for r in reports]
    cells = [
        [str(r.params[key]) for r in reports]
        for key, _ in _PARAM_ROWS
    ]
    return _render_grid("parameters", [label for _, label in _PARAM_ROWS], cols, cells)


def render_madds_table(reports) -> str:
    cols = [r.config.label() for r in reports]
    cells = []
    for key, _ in _MADDS_ROWS:
        row = []
        for r in reports:
            if r.madds is None:
                row.append("-")
            elif key == "activation":
                row.append("-")
            else:
                row.append(str(r.madds[key]))
        cells.append(row)
    n = next((r.n for r in reports if r.n is not None), None)
    title = f"madds (n={n})" if n is not None else "madds"
    return _render_grid(title, [label for _, label in _MADDS_ROWS], cols, cells)
