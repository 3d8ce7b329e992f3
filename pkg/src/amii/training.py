"""MSE training with Adam under a triangular cyclical learning rate.

The loop is single-threaded and fully deterministic: batch order comes from
one seeded generator, gradients accumulate in a fixed order, and the best-
validation parameter snapshot is what gets persisted. Checkpoints are a
small self-describing binary format (magic ``AMII``) holding the model
config, every parameter tensor, and the feature statistics bit-exactly.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .diffcore import ParamSet, Tape
from .errors import (ConsistencyError, DataError, FormatError, NumericError,
                     ParameterError)
from .features import FeatureStats, TrainingSample
from .model import AmiiConfig, Batch, forward, init_params, param_shapes

CHECKPOINT_MAGIC = b"AMII"
CHECKPOINT_VERSION = 1
_STATS_RECORDS = (
    ("_stats.speech.mean", "speech_mean"),
    ("_stats.speech.std", "speech_std"),
    ("_stats.face.mean", "face_mean"),
    ("_stats.face.std", "face_std"),
)


@dataclass
class ClrSchedule:
    """Triangular cycle between base_lr and max_lr with period 2*step_size."""

    base_lr: float = 1e-7
    max_lr: float = 1e-3
    step_size: int = 10

    def __post_init__(self):
        if self.base_lr >= self.max_lr:
            raise ParameterError(
                f"base_lr {self.base_lr} must be below max_lr {self.max_lr}")
        if self.step_size < 1:
            raise ParameterError(f"step_size must be >= 1, got {self.step_size}")


def clr_lr(iteration: int, sched: ClrSchedule) -> float:
    """Learning rate at a 0-based iteration: rises linearly from base to max
    over step_size iterations, falls back, repeats."""
    if iteration < 0:
        raise ParameterError(f"iteration must be >= 0, got {iteration}")
    cycle = math.floor(1 + iteration / (2 * sched.step_size))
    x = abs(iteration / sched.step_size - 2 * cycle + 1)
    frac = max(0.0, 1.0 - x)
    # Convex blend hits both endpoints exactly in floating point.
    return sched.base_lr * (1.0 - frac) + sched.max_lr * frac


class Adam:
    """Bias-corrected Adam; moments keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(params: ParamSet, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for p in params:
            p.grad *= factor
    return total


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainRunConfig:
    """Knobs for one training run (schedule defaults follow ClrSchedule)."""

    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    base_lr: float = 1e-7
    max_lr: float = 1e-3
    step_size_factor: int = 10   # step_size = factor * iterations per epoch
    grad_clip: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainResult:
    params: ParamSet                 # best-validation snapshot
    final_params: ParamSet
    train_losses: list[float]        # per-epoch means
    val_losses: list[float]
    best_epoch: int
    log_rows: list[tuple] = field(repr=False, default_factory=list)

    def write_log(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("epoch,iter,lr,train_loss,val_loss\n")
            for row in self.log_rows:
                fh.write(",".join("" if v is None else "%.17g" % v if isinstance(v, float)
                                  else str(v) for v in row) + "\n")


def _batch_loss(tape: Tape, batch: Batch, params: ParamSet,
                config: AmiiConfig):
    acts = forward(tape, batch, params, config)
    loss_a = tape.mse_loss(acts.y_a, batch.y_a)
    loss_u = tape.mse_loss(acts.y_u, batch.y_u)
    return tape.scale(tape.add(loss_a, loss_u), 0.5)


def evaluate_loss(params: ParamSet, samples: list[TrainingSample],
                  config: AmiiConfig, batch_size: int = 32) -> float:
    """Mean combined loss over samples; performs no updates."""
    if not samples:
        raise DataError("cannot evaluate on an empty sample list")
    total = 0.0
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        tape = Tape(grad=False)
        loss = _batch_loss(tape, Batch.from_samples(chunk), params, config)
        total += float(loss.data) * len(chunk)
    return total / len(samples)


def train(model_config: AmiiConfig, run: TrainRunConfig,
          train_samples: list[TrainingSample],
          val_samples: list[TrainingSample] | None = None) -> TrainResult:
    """Run the full loop; the best-validation snapshot wins (final epoch
    when no validation set is given)."""
    if not train_samples:
        raise DataError("training split is empty")

    params = init_params(model_config, seed=run.seed)
    adam = Adam()
    iters_per_epoch = math.ceil(len(train_samples) / run.batch_size)
    sched = ClrSchedule(base_lr=run.base_lr, max_lr=run.max_lr,
                        step_size=run.step_size_factor * iters_per_epoch)
    rng = np.random.default_rng(run.seed)

    log_rows: list[tuple] = []
    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = math.inf
    best_epoch = 0
    best_params = params.copy()
    iteration = 0

    for epoch in range(1, run.epochs + 1):
        order = rng.permutation(len(train_samples))
        epoch_total = 0.0
        for lo in range(0, len(order), run.batch_size):
            chunk = [train_samples[i] for i in order[lo:lo + run.batch_size]]
            lr = clr_lr(iteration, sched)
            params.zero_grads()
            tape = Tape()
            loss = _batch_loss(tape, Batch.from_samples(chunk), params, model_config)
            tape.backward(loss)
            if run.grad_clip is not None:
                clip_gradients(params, run.grad_clip)
            adam.step(params, lr)
            epoch_total += float(loss.data) * len(chunk)
            log_rows.append((epoch, iteration, lr, float(loss.data), None))
            iteration += 1
        train_losses.append(epoch_total / len(train_samples))

        if val_samples:
            val = evaluate_loss(params, val_samples, model_config, run.batch_size)
            val_losses.append(val)
            log_rows.append((epoch, iteration - 1, clr_lr(iteration - 1, sched),
                             train_losses[-1], val))
            if val < best_val:
                best_val = val
                best_epoch = epoch
                best_params = params.copy()
        else:
            best_epoch = epoch
            best_params = params.copy()

    return TrainResult(params=best_params, final_params=params,
                       train_losses=train_losses, val_losses=val_losses,
                       best_epoch=best_epoch, log_rows=log_rows)


# ---------------------------------------------------------------------------
# checkpoint persistence


def _config_block(config: AmiiConfig) -> bytes:
    lines = []
    for key, value in sorted(config.to_dict().items()):
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_block(blob: bytes) -> AmiiConfig:
    values: dict[str, object] = {}
    for line in blob.decode("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if raw in ("true", "false"):
            values[key] = raw == "true"
        else:
            try:
                values[key] = int(raw)
            except ValueError:
                values[key] = raw
    return AmiiConfig.from_dict(values)


def _write_record(buf: io.BufferedIOBase, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<I", data.ndim))
    for dim in data.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(data.astype("<f8").tobytes())


def save_checkpoint(path: str, params: ParamSet, config: AmiiConfig,
                    stats: FeatureStats) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        block = _config_block(config)
        fh.write(struct.pack("<I", len(block)))
        fh.write(block)
        records = [(name, p.data) for name, p in params.items()]
        records += [(name, np.asarray(getattr(stats, attr)))
                    for name, attr in _STATS_RECORDS]
        fh.write(struct.pack("<I", len(records)))
        for name, data in records:
            _write_record(fh, name, data)


def _read_exact(fh, n: int) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise FormatError(f"checkpoint truncated: wanted {n} bytes, got {len(blob)}")
    return blob


def load_checkpoint(path: str, expected_config: AmiiConfig | None = None,
                    ) -> tuple[ParamSet, AmiiConfig, FeatureStats]:
    """Read a checkpoint back; shapes are validated against the embedded
    config and, when given, against the caller's expected config."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<B", _read_exact(fh, 1))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        (block_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = _parse_config_block(_read_exact(fh, block_len))
        (n_records,) = struct.unpack("<I", _read_exact(fh, 4))

        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_records):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
            arrays[name] = data.reshape(dims).astype(np.float64)

    if expected_config is not None and config != expected_config:
        raise ConsistencyError(
            f"{path}: checkpoint config {config} does not match expected "
            f"{expected_config}")

    expected_shapes = param_shapes(config)
    stats_names = {name for name, _ in _STATS_RECORDS}
    model_arrays = {k: v for k, v in arrays.items() if k not in stats_names}
    if set(model_arrays) != set(expected_shapes):
        raise ConsistencyError(
            f"{path}: parameter names do not match the embedded config")
    params = ParamSet()
    for name in expected_shapes:
        if model_arrays[name].shape != expected_shapes[name]:
            raise ConsistencyError(
                f"{path}: parameter {name!r} has shape {model_arrays[name].shape}, "
                f"config implies {expected_shapes[name]}")
        params.add(name, model_arrays[name])

    try:
        stats = FeatureStats(**{attr: arrays[name] for name, attr in _STATS_RECORDS})
    except KeyError as exc:
        raise FormatError(f"{path}: missing feature statistics record {exc}") from None
    return params, config, stats
