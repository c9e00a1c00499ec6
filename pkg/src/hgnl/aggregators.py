"""Frame-feature aggregators.

All aggregators map a feature matrix (one column per frame, ``m`` rows) to a
single video-level vector of length ``m`` and accept any frame count at call
time. Four kinds:

* ``nl``    -- self-attention with a softmax-normalized n x n attention map,
* ``hgnl``  -- hierarchical group-wise variant: query/key come from
  convolutions grouped ``g1`` ways, value from a convolution grouped ``g2``
  ways, and the attention is a ReLU (unnormalized) stack of ``g2`` maps
  produced by grouped matrix multiplication,
* ``avg`` / ``max`` -- parameter-free row-wise reductions.

Forward passes return the aggregate plus the saved state their hand-written
backward needs.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import container, ops
from .errors import ConfigError, DimensionError, StateError
from .ops import OpCounter

KINDS = ("nl", "hgnl", "avg", "max")


@dataclass(frozen=True)
class AggregatorConfig:
    """Hyperparameters of one aggregator instance.

    ``m`` is the per-frame feature length, ``m1`` the query/key embedding
    width, ``g1`` the query/key convolution group count, ``g2`` the value
    convolution and attention group count. ``g1`` must be an integer
    multiple of ``g2``. ``shared`` stores one weight block per layer and
    reuses it across that layer's groups.
    """

    kind: str
    m: int
    m1: int = 0
    g1: int = 1
    g2: int = 1
    shared: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown aggregator kind {self.kind!r}")
        if self.m < 1:
            raise ConfigError(f"m must be positive, got {self.m}")
        if self.kind in ("avg", "max"):
            if self.m1 != 0 or self.g1 != 1 or self.g2 != 1 or self.shared:
                raise ConfigError(
                    f"{self.kind} aggregator takes no m1/g1/g2/shared settings"
                )
            return
        if self.m1 < 1:
            raise ConfigError(f"m1 must be positive, got {self.m1}")
        if self.kind == "nl":
            if self.g1 != 1 or self.g2 != 1 or self.shared:
                raise ConfigError("nl requires g1 = g2 = 1 and shared weights off")
            return
        if self.g1 < 1 or self.g2 < 1:
            raise ConfigError("group counts must be positive")
        for dim, name in ((self.m, "m"), (self.m1, "m1")):
            for g, gname in ((self.g1, "g1"), (self.g2, "g2")):
                if dim % g != 0:
                    raise ConfigError(f"{name}={dim} not divisible by {gname}={g}")
        if self.g1 % self.g2 != 0:
            raise ConfigError(
                f"g1={self.g1} must be an integer multiple of g2={self.g2}"
            )

    @classmethod
    def nl(cls, m, m1):
        return cls(kind="nl", m=m, m1=m1)

    @classmethod
    def hgnl(cls, m, m1, g1, g2, shared=False):
        return cls(kind="hgnl", m=m, m1=m1, g1=g1, g2=g2, shared=shared)

    @classmethod
    def average(cls, m):
        return cls(kind="avg", m=m)

    @classmethod
    def maximum(cls, m):
        return cls(kind="max", m=m)

    @property
    def group_ratio(self) -> int:
        return self.g1 // self.g2

    @property
    def has_params(self) -> bool:
        return self.kind in ("nl", "hgnl")

    def label(self) -> str:
        if self.kind == "nl":
            return f"nl(m={self.m}, m1={self.m1})"
        if self.kind == "hgnl":
            tag = ", shared" if self.shared else ""
            return f"hgnl(m={self.m}, m1={self.m1}, g1={self.g1}, g2={self.g2}{tag})"
        return f"{self.kind}(m={self.m})"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "m": self.m,
            "m1": self.m1,
            "g1": self.g1,
            "g2": self.g2,
            "shared": self.shared,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AggregatorConfig":
        try:
            return cls(
                kind=d["kind"],
                m=int(d["m"]),
                m1=int(d.get("m1", 0)),
                g1=int(d.get("g1", 1)),
                g2=int(d.get("g2", 1)),
                shared=bool(d.get("shared", False)),
            )
        except KeyError as exc:
            raise ConfigError(f"aggregator config missing field {exc}") from exc


@dataclass
class AggregatorParams:
    """Learned weights of an aggregator.

    Convolution weights are stored as one (c_out/g, c_in/g) block per group;
    in shared mode a single block (and a correspondingly short bias) serves
    every group. ``scale`` is the scalar weighting the attention output in
    the residual combination; it is excluded from :meth:`scalar_count`,
    matching the cost model's bookkeeping.
    """

    config: AggregatorConfig
    query_w: Optional[np.ndarray] = None
    query_b: Optional[np.ndarray] = None
    key_w: Optional[np.ndarray] = None
    key_b: Optional[np.ndarray] = None
    value_w: Optional[np.ndarray] = None
    value_b: Optional[np.ndarray] = None
    scale: float = 0.0

    _ARRAY_FIELDS = ("query_w", "query_b", "key_w", "key_b", "value_w", "value_b")

    def named_arrays(self):
        return [
            (name, getattr(self, name))
            for name in self._ARRAY_FIELDS
            if getattr(self, name) is not None
        ]

    def scalar_count(self) -> int:
        return sum(arr.size for _, arr in self.named_arrays())

    def copy(self) -> "AggregatorParams":
        return AggregatorParams(
            config=self.config,
            scale=self.scale,
            **{name: arr.copy() for name, arr in self.named_arrays()},
        )

    @classmethod
    def zeros_like(cls, other: "AggregatorParams") -> "AggregatorParams":
        return cls(
            config=other.config,
            scale=0.0,
            **{name: np.zeros_like(arr) for name, arr in other.named_arrays()},
        )


def expected_block_shapes(config: AggregatorConfig) -> dict:
    """Array shapes a params object must have for ``config``."""
    if not config.has_params:
        return {}
    m, m1, g1, g2 = config.m, config.m1, config.g1, config.g2
    qk_blocks = 1 if config.shared else g1
    v_blocks = 1 if config.shared else g2
    return {
        "query_w": (qk_blocks, m1 // g1, m // g1),
        "query_b": (m1 // g1,) if config.shared else (m1,),
        "key_w": (qk_blocks, m1 // g1, m // g1),
        "key_b": (m1 // g1,) if config.shared else (m1,),
        "value_w": (v_blocks, m // g2, m // g2),
        "value_b": (m // g2,) if config.shared else (m,),
    }


def init_params(config: AggregatorConfig, seed: int) -> AggregatorParams:
    """Seeded initialization: weights uniform in +-sqrt(1/fan_in) per block,
    biases zero, scale zero (so the module starts as plain averaging)."""
    if not config.has_params:
        return AggregatorParams(config=config)
    shapes = expected_block_shapes(config)
    rng = np.random.default_rng(seed)
    fan_qk = config.m // config.g1
    fan_v = config.m // config.g2
    bound_qk = np.sqrt(1.0 / fan_qk)
    bound_v = np.sqrt(1.0 / fan_v)
    return AggregatorParams(
        config=config,
        query_w=rng.uniform(-bound_qk, bound_qk, shapes["query_w"]),
        query_b=np.zeros(shapes["query_b"]),
        key_w=rng.uniform(-bound_qk, bound_qk, shapes["key_w"]),
        key_b=np.zeros(shapes["key_b"]),
        value_w=rng.uniform(-bound_v, bound_v, shapes["value_w"]),
        value_b=np.zeros(shapes["value_b"]),
        scale=0.0,
    )


@dataclass
class StageCounters:
    """One operation counter per instrumented forward stage."""

    query_conv: OpCounter = field(default_factory=OpCounter)
    key_conv: OpCounter = field(default_factory=OpCounter)
    value_conv: OpCounter = field(default_factory=OpCounter)
    attention_product: OpCounter = field(default_factory=OpCounter)
    output_product: OpCounter = field(default_factory=OpCounter)

    def total(self) -> OpCounter:
        out = OpCounter()
        for c in (self.query_conv, self.key_conv, self.value_conv,
                  self.attention_product, self.output_product):
            out.tally(c.multiplies, c.additions)
        return out

    def madds_by_stage(self) -> dict:
        return {
            "query_conv": self.query_conv.madds,
            "key_conv": self.key_conv.madds,
            "value_conv": self.value_conv.madds,
            "attention_product": self.attention_product.madds,
            "activation": 0,
            "output_product": self.output_product.madds,
        }


@dataclass
class ForwardState:
    """Saved tensors from a forward pass, consumed by aggregate_backward."""

    config: AggregatorConfig
    params: AggregatorParams
    f: np.ndarray
    q: Optional[np.ndarray] = None
    k: Optional[np.ndarray] = None
    pre_attn: Optional[np.ndarray] = None
    attn: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    core_out: Optional[np.ndarray] = None
    argmax_cols: Optional[np.ndarray] = None


def _full_bias(stored, groups, shared):
    return np.tile(stored, groups) if shared else stored


def _check_input(f, config):
    f = ops.as_tensor(f, "f")
    if f.ndim != 2:
        raise DimensionError(f"input must be m x n, got shape {f.shape}")
    if f.shape[0] != config.m:
        raise DimensionError(
            f"input has {f.shape[0]} feature rows, config expects m={config.m}"
        )
    return f


def _attention_inputs(f, params, counters):
    cfg = params.config
    c = counters or StageCounters()
    q = ops.grouped_conv1x1(
        params.query_w, _full_bias(params.query_b, cfg.g1, cfg.shared),
        f, cfg.g1, shared=cfg.shared, counter=c.query_conv,
    )
    k = ops.grouped_conv1x1(
        params.key_w, _full_bias(params.key_b, cfg.g1, cfg.shared),
        f, cfg.g1, shared=cfg.shared, counter=c.key_conv,
    )
    v = ops.grouped_conv1x1(
        params.value_w, _full_bias(params.value_b, cfg.g2, cfg.shared),
        f, cfg.g2, shared=cfg.shared, counter=c.value_conv,
    )
    return q, k, v, c


def nl_forward(f, params: AggregatorParams, counters: Optional[StageCounters] = None):
    """Softmax self-attention aggregation; returns (vector, saved state)."""
    cfg = params.config
    if cfg.kind != "nl":
        raise ConfigError(f"nl_forward needs an nl config, got {cfg.kind!r}")
    f = _check_input(f, cfg)
    q, k, v, c = _attention_inputs(f, params, counters)
    pre = ops.gmm_qk(q, k, 1, counter=c.attention_product)
    attn = ops.softmax_cols(pre[0])[np.newaxis]
    core = ops.gmm_va(v, attn, counter=c.output_product)
    weighted = ops.residual_scale(core, f, params.scale)
    fv = ops.mean_over_frames(weighted)
    state = ForwardState(config=cfg, params=params, f=f, q=q, k=k,
                         pre_attn=pre, attn=attn, v=v, core_out=core)
    return fv, state


def hgnl_forward(f, params: AggregatorParams, counters: Optional[StageCounters] = None):
    """Hierarchical group-wise aggregation: g1-grouped query/key convolutions,
    g2 ReLU attention maps, g2-grouped value path; returns (vector, state)."""
    cfg = params.config
    if cfg.kind != "hgnl":
        raise ConfigError(f"hgnl_forward needs an hgnl config, got {cfg.kind!r}")
    f = _check_input(f, cfg)
    q, k, v, c = _attention_inputs(f, params, counters)
    pre = ops.gmm_qk(q, k, cfg.g2, counter=c.attention_product)
    attn = ops.relu(pre)
    core = ops.gmm_va(v, attn, counter=c.output_product)
    weighted = ops.residual_scale(core, f, params.scale)
    fv = ops.mean_over_frames(weighted)
    state = ForwardState(config=cfg, params=params, f=f, q=q, k=k,
                         pre_attn=pre, attn=attn, v=v, core_out=core)
    return fv, state


def avg_aggregate(f):
    """Row-wise mean across frames."""
    f = ops.as_tensor(f, "f")
    if f.ndim != 2:
        raise DimensionError(f"input must be m x n, got shape {f.shape}")
    return ops.mean_over_frames(f)


def max_aggregate(f):
    """Row-wise maximum across frames."""
    f = ops.as_tensor(f, "f")
    if f.ndim != 2:
        raise DimensionError(f"input must be m x n, got shape {f.shape}")
    if f.shape[1] < 1:
        raise DimensionError("cannot take a maximum over an empty frame axis")
    return f.max(axis=1)


def aggregate(f, params: AggregatorParams, counters: Optional[StageCounters] = None):
    """Kind dispatch; always returns (vector, state) so training code is uniform."""
    cfg = params.config
    if cfg.kind == "nl":
        return nl_forward(f, params, counters)
    if cfg.kind == "hgnl":
        return hgnl_forward(f, params, counters)
    f = _check_input(f, cfg)
    if cfg.kind == "avg":
        return ops.mean_over_frames(f), ForwardState(config=cfg, params=params, f=f)
    fv = f.max(axis=1)
    state = ForwardState(config=cfg, params=params, f=f,
                         argmax_cols=f.argmax(axis=1))
    return fv, state


def aggregate_backward(state: ForwardState, upstream):
    """Gradients of a scalar loss w.r.t. the input and every parameter.

    ``upstream`` is the loss gradient w.r.t. the aggregated vector. Returns
    ``(grad_f, grad_params)`` where ``grad_params`` mirrors the params
    structure (zero-size for avg/max).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    cfg = state.config
    if upstream.shape != (cfg.m,):
        raise StateError(
            f"upstream gradient shape {upstream.shape} does not match ({cfg.m},)"
        )
    f = state.f
    n = f.shape[1]
    grads = AggregatorParams.zeros_like(state.params)

    if cfg.kind == "avg":
        return ops.mean_over_frames_backward(upstream, n), grads
    if cfg.kind == "max":
        grad_f = np.zeros_like(f)
        grad_f[np.arange(cfg.m), state.argmax_cols] = upstream
        return grad_f, grads

    if state.core_out is None or state.attn is None:
        raise StateError("forward state is missing attention tensors")
    params = state.params
    g_weighted = ops.mean_over_frames_backward(upstream, n)
    g_core, g_f, g_scale = ops.residual_scale_backward(
        g_weighted, state.core_out, params.scale
    )
    grads.scale = g_scale

    g_v, g_attn = ops.gmm_va_backward(g_core, state.v, state.attn)
    if cfg.kind == "nl":
        g_pre = ops.softmax_cols_backward(g_attn[0], state.attn[0])[np.newaxis]
    else:
        g_pre = ops.relu_backward(g_attn, state.pre_attn)
    g_q, g_k = ops.gmm_qk_backward(g_pre, state.q, state.k)

    for name, g_out, groups in (
        ("query", g_q, cfg.g1), ("key", g_k, cfg.g1), ("value", g_v, cfg.g2),
    ):
        w = getattr(params, name + "_w")
        gw, gb_full, gf_part = ops.grouped_conv1x1_backward(
            g_out, w, f, groups, shared=cfg.shared
        )
        if cfg.shared:
            gb = gb_full.reshape(groups, -1).sum(axis=0)
        else:
            gb = gb_full
        setattr(grads, name + "_w", gw)
        setattr(grads, name + "_b", gb)
        g_f = g_f + gf_part
    return g_f, grads


# ---------------------------------------------------------------------------
# parameter serialization

_PARAMS_FORMAT = "aggregator-params"


def save_params(params: AggregatorParams, path):
    """Write params to the JSON-header + float64 payload container."""
    arrays = list(params.named_arrays())
    arrays.append(("scale", np.array([params.scale])))
    container.write(path, {"format": _PARAMS_FORMAT,
                           "config": params.config.to_dict()}, arrays)


def load_params(path) -> AggregatorParams:
    header, arrays = container.read(path, expected_format=_PARAMS_FORMAT)
    config = AggregatorConfig.from_dict(header["config"])
    expected = expected_block_shapes(config)
    params = AggregatorParams(config=config)
    for name, shape in expected.items():
        if name not in arrays:
            raise container.corrupt(path, f"missing array {name!r}")
        arr = arrays[name]
        if arr.shape != shape:
            raise container.corrupt(
                path, f"array {name!r} has shape {arr.shape}, expected {shape}"
            )
        setattr(params, name, arr)
    if "scale" not in arrays:
        raise container.corrupt(path, "missing array 'scale'")
    params.scale = float(arrays["scale"][0])
    return params
