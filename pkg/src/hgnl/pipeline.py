"""Toy end-to-end harness around the aggregators.

A synthetic stand-in for backbone features: each sample is an m x n_total
matrix of Gaussian noise with a class-specific unit pattern planted in a
random subset of frames. Training samples ``segments`` frames per video
per epoch (one uniform draw from each of ``segments`` equal spans),
evaluation takes the deterministic center frame of each span. The trained
model is a linear classifier on the aggregated vector, optimized with
mini-batch SGD under a step learning-rate decay.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import container
from .aggregators import (
    AggregatorConfig,
    AggregatorParams,
    aggregate,
    aggregate_backward,
    expected_block_shapes,
    init_params,
)
from .errors import ConfigError, DimensionError, SamplingError, TrainingError


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class DatasetSpec:
    """Generation recipe; regeneration from an equal spec is bit-identical.

    ``pattern_seed`` fixes the class patterns independently of the sample
    noise so that a train file and a validation file can describe the same
    classification task; it defaults to ``seed``.
    """

    classes: int
    m: int
    n_total: int
    signal_frames: int
    noise: float
    samples_per_class: int
    seed: int
    pattern_seed: Optional[int] = None

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.m < 1 or self.n_total < 1:
            raise ConfigError("m and n_total must be positive")
        if not 0 <= self.signal_frames <= self.n_total:
            raise ConfigError(
                f"signal_frames={self.signal_frames} outside [0, {self.n_total}]"
            )
        if self.noise < 0:
            raise ConfigError(f"noise scale must be >= 0, got {self.noise}")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be positive")

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "m": self.m,
            "n_total": self.n_total,
            "signal_frames": self.signal_frames,
            "noise": self.noise,
            "samples_per_class": self.samples_per_class,
            "seed": self.seed,
            "pattern_seed": self.pattern_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        try:
            pattern_seed = d.get("pattern_seed")
            return cls(
                classes=int(d["classes"]),
                m=int(d["m"]),
                n_total=int(d["n_total"]),
                signal_frames=int(d["signal_frames"]),
                noise=float(d["noise"]),
                samples_per_class=int(d["samples_per_class"]),
                seed=int(d["seed"]),
                pattern_seed=None if pattern_seed is None else int(pattern_seed),
            )
        except KeyError as exc:
            raise ConfigError(f"dataset spec missing field {exc}") from exc


@dataclass
class SyntheticDataset:
    spec: DatasetSpec
    features: np.ndarray  # (samples, m, n_total)
    labels: np.ndarray  # (samples,) int
    patterns: np.ndarray  # (classes, m) unit rows
    signal_index: np.ndarray  # (samples, signal_frames) planted frame columns

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]


def generate_dataset(spec: DatasetSpec) -> SyntheticDataset:
    """Deterministically generate the labeled feature sequences for ``spec``."""
    pattern_seed = spec.seed if spec.pattern_seed is None else spec.pattern_seed
    pattern_rng = np.random.default_rng(pattern_seed)
    # unit per-coordinate scale (norm sqrt(m)); with noise well below 1 a
    # single planted frame is enough to identify the class
    patterns = pattern_rng.standard_normal((spec.classes, spec.m))
    patterns *= np.sqrt(spec.m) / np.linalg.norm(patterns, axis=1, keepdims=True)
    rng = np.random.default_rng(spec.seed)

    total = spec.classes * spec.samples_per_class
    features = np.empty((total, spec.m, spec.n_total))
    labels = np.empty(total, dtype=np.int64)
    signal_index = np.empty((total, spec.signal_frames), dtype=np.int64)
    i = 0
    for c in range(spec.classes):
        for _ in range(spec.samples_per_class):
            x = spec.noise * rng.standard_normal((spec.m, spec.n_total))
            planted = np.sort(
                rng.choice(spec.n_total, size=spec.signal_frames, replace=False)
            )
            x[:, planted] += patterns[c][:, None]
            features[i] = x
            labels[i] = c
            signal_index[i] = planted
            i += 1
    return SyntheticDataset(spec=spec, features=features, labels=labels,
                            patterns=patterns, signal_index=signal_index)


_DATASET_FORMAT = "synthetic-dataset"


def save_dataset(ds: SyntheticDataset, path) -> None:
    header = {
        "format": _DATASET_FORMAT,
        "spec": ds.spec.to_dict(),
        "labels": ds.labels.tolist(),
    }
    arrays = [
        ("features", ds.features),
        ("patterns", ds.patterns),
        ("signal_index", ds.signal_index.astype(np.float64)),
    ]
    container.write(path, header, arrays)


def load_dataset(path) -> SyntheticDataset:
    header, arrays = container.read(path, expected_format=_DATASET_FORMAT)
    try:
        spec = DatasetSpec.from_dict(header["spec"])
        labels = np.asarray(header["labels"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise container.corrupt(path, f"bad dataset header ({exc})") from exc
    for name in ("features", "patterns", "signal_index"):
        if name not in arrays:
            raise container.corrupt(path, f"missing array {name!r}")
    features = arrays["features"]
    expected = (spec.classes * spec.samples_per_class, spec.m, spec.n_total)
    if features.shape != expected:
        raise container.corrupt(
            path, f"features shape {features.shape} does not match spec {expected}"
        )
    return SyntheticDataset(
        spec=spec,
        features=features,
        labels=labels,
        patterns=arrays["patterns"],
        signal_index=arrays["signal_index"].astype(np.int64),
    )


# ---------------------------------------------------------------------------
# frame sampling


def segment_bounds(n_total: int, k: int):
    """Split [0, n_total) into k contiguous spans, remainder on the leading ones."""
    if k < 1:
        raise SamplingError(f"segment count must be >= 1, got {k}")
    if k > n_total:
        raise SamplingError(f"cannot cut {n_total} frames into {k} segments")
    base, rem = divmod(n_total, k)
    bounds = []
    lo = 0
    for i in range(k):
        hi = lo + base + (1 if i < rem else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def segment_sample(n_total: int, k: int, rng) -> np.ndarray:
    """One uniform frame index per segment; strictly increasing."""
    return np.array(
        [int(rng.integers(lo, hi)) for lo, hi in segment_bounds(n_total, k)],
        dtype=np.int64,
    )


def segment_centers(n_total: int, k: int) -> np.ndarray:
    """Deterministic center frame of each segment (evaluation protocol)."""
    return np.array(
        [(lo + hi) // 2 for lo, hi in segment_bounds(n_total, k)], dtype=np.int64
    )


# ---------------------------------------------------------------------------
# classifier head


@dataclass
class ClassifierHead:
    weights: np.ndarray  # (classes, m)
    bias: np.ndarray  # (classes,)

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.weights.copy(), self.bias.copy())


def init_head(classes: int, m: int, seed: int) -> ClassifierHead:
    rng = np.random.default_rng(seed)
    bound = np.sqrt(1.0 / m)
    return ClassifierHead(
        weights=rng.uniform(-bound, bound, (classes, m)),
        bias=np.zeros(classes),
    )


def classify(fv, head: ClassifierHead):
    """Logits and stabilized softmax probabilities for one aggregated vector."""
    fv = np.asarray(fv, dtype=np.float64)
    if fv.ndim != 1 or fv.shape[0] != head.weights.shape[1]:
        raise DimensionError(
            f"feature vector shape {fv.shape} does not match head "
            f"({head.weights.shape})"
        )
    logits = head.weights @ fv + head.bias
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return logits, e / e.sum()


def cross_entropy(logits, label: int):
    """Loss and gradient w.r.t. logits, computed in log-sum-exp form."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    z = e.sum()
    loss = float(np.log(z) - shifted[label])
    grad = e / z
    grad[label] -= 1.0
    return loss, grad


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    segments: int
    epochs: int
    lr: float
    decay_epochs: tuple = ()
    decay_factor: float = 10.0
    batch_size: int = 8
    seed: int = 0
    resample_each_epoch: bool = True

    def __post_init__(self):
        if self.segments < 1:
            raise ConfigError("segments must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.decay_factor <= 0:
            raise ConfigError("decay factor must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        decays = tuple(self.decay_epochs)
        if any(d2 <= d1 for d1, d2 in zip(decays, decays[1:])):
            raise ConfigError("decay epochs must be strictly increasing")
        if any(not 0 < d < self.epochs for d in decays):
            raise ConfigError("decay epochs must lie strictly inside (0, epochs)")
        object.__setattr__(self, "decay_epochs", decays)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for d in self.decay_epochs:
            if epoch >= d:
                lr /= self.decay_factor
        return lr

    def to_dict(self) -> dict:
        return {
            "segments": self.segments,
            "epochs": self.epochs,
            "lr": self.lr,
            "decay_epochs": list(self.decay_epochs),
            "decay_factor": self.decay_factor,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "resample_each_epoch": self.resample_each_epoch,
        }


@dataclass
class TrainResult:
    params: AggregatorParams
    head: ClassifierHead
    history: list = field(default_factory=list)


def train(
    train_ds: SyntheticDataset,
    agg_config: AggregatorConfig,
    cfg: TrainConfig,
    val_ds: Optional[SyntheticDataset] = None,
) -> TrainResult:
    """Mini-batch SGD over aggregator parameters and the classifier head.

    Every epoch re-draws each sample's segment frames (unless
    ``resample_each_epoch`` is off, in which case the epoch-0 draws repeat),
    shuffles the visit order, and averages gradients within each batch.
    Fully deterministic given the config seed.
    """
    spec = train_ds.spec
    if agg_config.m != spec.m:
        raise ConfigError(
            f"aggregator m={agg_config.m} does not match dataset m={spec.m}"
        )
    if cfg.segments > spec.n_total:
        raise SamplingError(
            f"segments={cfg.segments} exceeds n_total={spec.n_total}"
        )
    params = init_params(agg_config, cfg.seed)
    head = init_head(spec.classes, spec.m, cfg.seed + 1)
    total = train_ds.num_samples
    history = []

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        rng = np.random.default_rng(
            [cfg.seed, epoch if cfg.resample_each_epoch else 0]
        )
        order = rng.permutation(total)
        draws = {
            int(i): segment_sample(spec.n_total, cfg.segments, rng) for i in order
        }
        loss_sum = 0.0
        correct = 0
        for start in range(0, total, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc_grads = AggregatorParams.zeros_like(params)
            acc_head_w = np.zeros_like(head.weights)
            acc_head_b = np.zeros_like(head.bias)
            for i in batch:
                frames = np.ascontiguousarray(train_ds.features[i][:, draws[int(i)]])
                fv, state = aggregate(frames, params)
                logits = head.weights @ fv + head.bias
                loss, g_logits = cross_entropy(logits, int(train_ds.labels[i]))
                loss_sum += loss
                correct += int(np.argmax(logits) == train_ds.labels[i])
                acc_head_w += np.outer(g_logits, fv)
                acc_head_b += g_logits
                _, pgrads = aggregate_backward(state, head.weights.T @ g_logits)
                for name, arr in pgrads.named_arrays():
                    getattr(acc_grads, name)[...] += arr
                acc_grads.scale += pgrads.scale
            step = lr / len(batch)
            head.weights -= step * acc_head_w
            head.bias -= step * acc_head_b
            for name, arr in acc_grads.named_arrays():
                getattr(params, name)[...] -= step * arr
            params.scale -= step * acc_grads.scale
        epoch_loss = loss_sum / total
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        record = {
            "epoch": epoch,
            "lr": lr,
            "loss": epoch_loss,
            "train_acc": correct / total,
            "val_acc": None,
        }
        if val_ds is not None:
            record["val_acc"] = evaluate(params, head, val_ds, cfg.segments).top1
        history.append(record)
    return TrainResult(params=params, head=head, history=history)


@dataclass
class EvalResult:
    top1: float
    top5: float
    samples: int

    def to_dict(self) -> dict:
        return {"top1": self.top1, "top5": self.top5, "samples": self.samples}


def evaluate(
    params: AggregatorParams,
    head: ClassifierHead,
    ds: SyntheticDataset,
    n_eval: int,
) -> EvalResult:
    """Accuracy with ``n_eval`` deterministically-centered frames per sample.

    The aggregator runs at whatever frame count is requested; nothing is
    rebuilt when ``n_eval`` differs from the training segment count.
    """
    spec = ds.spec
    idx = segment_centers(spec.n_total, n_eval)
    k = min(5, spec.classes)
    top1 = 0
    topk = 0
    for i in range(ds.num_samples):
        frames = np.ascontiguousarray(ds.features[i][:, idx])
        fv, _ = aggregate(frames, params)
        logits = head.weights @ fv + head.bias
        label = int(ds.labels[i])
        top1 += int(np.argmax(logits) == label)
        topk += int(label in np.argsort(logits)[-k:])
    return EvalResult(
        top1=top1 / ds.num_samples,
        top5=topk / ds.num_samples,
        samples=ds.num_samples,
    )


# ---------------------------------------------------------------------------
# checkpoint and metrics files

_CHECKPOINT_FORMAT = "checkpoint"


def save_checkpoint(path, params: AggregatorParams, head: ClassifierHead) -> None:
    arrays = list(params.named_arrays())
    arrays.append(("scale", np.array([params.scale])))
    arrays.append(("head_weights", head.weights))
    arrays.append(("head_bias", head.bias))
    header = {
        "format": _CHECKPOINT_FORMAT,
        "config": params.config.to_dict(),
        "classes": head.classes,
    }
    container.write(path, header, arrays)


def load_checkpoint(path):
    header, arrays = container.read(path, expected_format=_CHECKPOINT_FORMAT)
    try:
        config = AggregatorConfig.from_dict(header["config"])
    except KeyError as exc:
        raise container.corrupt(path, f"bad checkpoint header ({exc})") from exc
    params = AggregatorParams(config=config)
    for name, shape in expected_block_shapes(config).items():
        if name not in arrays:
            raise container.corrupt(path, f"missing array {name!r}")
        if arrays[name].shape != shape:
            raise container.corrupt(
                path,
                f"array {name!r} has shape {arrays[name].shape}, expected {shape}",
            )
        setattr(params, name, arrays[name])
    for name in ("scale", "head_weights", "head_bias"):
        if name not in arrays:
            raise container.corrupt(path, f"missing array {name!r}")
    params.scale = float(arrays["scale"][0])
    head = ClassifierHead(weights=arrays["head_weights"], bias=arrays["head_bias"])
    return params, head


def write_metrics(history, path) -> None:
    """One JSON record per epoch."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
