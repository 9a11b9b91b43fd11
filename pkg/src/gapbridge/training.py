"""Adam optimization, the training loop, field prediction and checkpoints."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Network, NetworkSpec, backward, forward_batch, init_network
from .trajectory import Trajectory
from .windows import NormStats, SplitBundle, build_windows

_PREDICT_CHUNK = 16384


class TrainingError(RuntimeError):
    """Raised when the loss turns non-finite during optimization."""


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the standard hyperparameters."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, network: Network, **hyper) -> "AdamState":
        shapes = [np.zeros_like(a) for _, a in network.parameters()]
        return cls(first_moment=shapes,
                   second_moment=[np.zeros_like(a) for _, a in network.parameters()],
                   **hyper)


def adam_step(network: Network, gradients: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, in place; returns (network, state)."""
    params = network.parameters()
    if len(gradients) != len(params):
        raise ValueError(f"got {len(gradients)} gradients for {len(params)} parameters")
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for (name, param), grad, m, v in zip(params, gradients,
                                         state.first_moment, state.second_moment):
        if param.shape != grad.shape:
            raise ValueError(f"{name}: gradient shape {grad.shape} != {param.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return network, state


@dataclass
class TrainHistory:
    """End-of-epoch losses and wall-clock time per epoch."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def save(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for e, (tr, vl, sec) in enumerate(zip(self.train_loss, self.val_loss,
                                                  self.seconds)):
                writer.writerow([e, "%.17g" % tr, "%.17g" % vl, "%.6f" % sec])
        return path

    @classmethod
    def load(cls, path) -> "TrainHistory":
        rows = list(csv.reader(Path(path).open()))[1:]
        return cls(train_loss=[float(r[1]) for r in rows],
                   val_loss=[float(r[2]) for r in rows],
                   seconds=[float(r[3]) for r in rows])


def _chunked_loss(network: Network, features: np.ndarray, targets: np.ndarray) -> float:
    if features.shape[0] == 0:
        return float("nan")
    total = 0.0
    for start in range(0, features.shape[0], _PREDICT_CHUNK):
        pred = forward_batch(network, features[start:start + _PREDICT_CHUNK])
        diff = pred - targets[start:start + _PREDICT_CHUNK]
        total += float(np.sum(diff * diff))
    return total / (features.shape[0] * targets.shape[1])


def train(network: Network, bundle: SplitBundle, epochs: int = 50,
          batch_size: int = 64, state: AdamState | None = None,
          shuffle_seed: int = 0, log=None) -> tuple[Network, TrainHistory]:
    """Mini-batch Adam over the training split.

    Batches are drawn from a fresh seeded shuffle each epoch; the trailing
    incomplete batch is kept.  Losses recorded per epoch are full-split
    evaluations after that epoch's updates.  No early stopping.
    """
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0 and batch_size >= 1")
    history = TrainHistory()
    if epochs == 0:
        return network, history
    features = bundle.train.features()
    targets = bundle.train.targets()
    val_features = bundle.validation.features()
    val_targets = bundle.validation.targets()
    n = features.shape[0]
    if n == 0:
        raise ValueError("training split is empty")
    if state is None:
        state = AdamState.for_network(network)
    rng = np.random.default_rng(shuffle_seed)
    for epoch in range(epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        for batch_index, start in enumerate(range(0, n, batch_size)):
            rows = order[start:start + batch_size]
            grads, loss = backward(network, features[rows], targets[rows])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, "
                                    f"batch {batch_index}")
            adam_step(network, grads, state)
        history.train_loss.append(_chunked_loss(network, features, targets))
        history.val_loss.append(_chunked_loss(network, val_features, val_targets))
        history.seconds.append(time.perf_counter() - started)
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs}: train {history.train_loss[-1]:.6e} "
                f"val {history.val_loss[-1]:.6e} ({history.seconds[-1]:.2f}s)")
    return network, history


# ---------------------------------------------------------------------------
# Field prediction
# ---------------------------------------------------------------------------

@dataclass
class PredictedTrajectory(Trajectory):
    """Trajectory of network outputs; points/frames never predicted hold NaN."""

    eligible_points: np.ndarray | None = None
    predicted_frames: np.ndarray | None = None

    @property
    def start_frame(self) -> int:
        return int(self.predicted_frames.min())

    def point_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.point_count, dtype=bool)
        mask[self.eligible_points] = True
        return mask


def predict_field(network: Network, current: Trajectory,
                  aux: Trajectory | None = None,
                  frames=None, norm: NormStats | None = None,
                  k: int = 3, train_frame_count: int | None = None,
                  eligible_mask: np.ndarray | None = None) -> PredictedTrajectory:
    """Evaluate the network at every eligible grid point of the given frames.

    The feature pipeline (stencil gathering, coordinate scaling, then the
    fitted normalization) must match training, so pass the same k,
    train_frame_count and NormStats that produced the training bundle.
    Points closer than (k-1)/2 to a spatial boundary and frames earlier than
    k-1 are never predicted and are flagged with NaN in the result.
    """
    if frames is None:
        frames = np.arange(k - 1, current.frame_count)
    frames = np.asarray(list(frames), dtype=np.int64)
    if frames.size == 0:
        raise ValueError("no frames requested")
    if frames.min() < k - 1 or frames.max() >= current.frame_count:
        raise ValueError(f"requested frames outside the causal range "
                         f"[{k - 1}, {current.frame_count - 1}]")

    windows = build_windows(current, current, aux=aux, k=k,
                            train_frame_count=train_frame_count,
                            eligible_mask=eligible_mask)
    wanted = np.zeros(current.frame_count, dtype=bool)
    wanted[frames] = True
    subset = windows.subset(wanted[windows.frames])
    if norm is not None:
        subset = subset.with_norm(norm)

    m = network.spec.output_count
    values = np.full((current.frame_count, current.grid.point_count, m), np.nan)
    total = len(subset)
    for start in range(0, total, _PREDICT_CHUNK):
        rows = np.arange(start, min(start + _PREDICT_CHUNK, total))
        pred = forward_batch(network, subset.features(rows))
        values[subset.frames[rows], subset.points[rows], :] = pred
    return PredictedTrajectory(grid=current.grid, dt=current.dt, values=values,
                               component_names=tuple(f"predicted_{i}" for i in range(m)),
                               system=current.system,
                               eligible_points=windows.eligible_points,
                               predicted_frames=np.unique(frames))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "gapbridge-checkpoint-1"


def save_checkpoint(path, network: Network, meta: dict | None = None) -> Path:
    """Manifest + float64 payload of parameters in canonical order."""
    path = Path(path)
    spec = network.spec
    lines = [
        f"format={_CHECKPOINT_FORMAT}",
        f"feature_count={spec.feature_count}",
        f"sequence_length={spec.sequence_length}",
        "stage1=" + ",".join(str(w) for w in spec.stage1),
        "stage2=" + ",".join(str(w) for w in spec.stage2),
        "stage3=" + ",".join(str(w) for w in spec.stage3),
        "stage3_activations=" + ",".join(spec.stage3_activations),
        f"parameter_count={network.parameter_count()}",
    ]
    for key, value in (meta or {}).items():
        lines.append(f"{key}={value}")
    path.write_text("\n".join(lines) + "\n")
    payload = np.concatenate([a.ravel() for _, a in network.parameters()])
    Path(str(path) + ".bin").write_bytes(payload.astype("<f8").tobytes())
    return path


def load_checkpoint(path) -> tuple[Network, dict]:
    """Rebuild the network from a checkpoint; extra manifest keys come back as meta."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    entries = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    if entries.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {entries.get('format')!r}")

    def widths(key):
        text = entries[key]
        return tuple(int(w) for w in text.split(",")) if text else ()

    spec = NetworkSpec(feature_count=int(entries["feature_count"]),
                       sequence_length=int(entries["sequence_length"]),
                       stage1=widths("stage1"), stage2=widths("stage2"),
                       stage3=widths("stage3"),
                       stage3_activations=tuple(entries["stage3_activations"].split(",")))
    network = init_network(spec, seed=0)
    payload_path = Path(str(path) + ".bin")
    if not payload_path.exists():
        raise FileNotFoundError(f"checkpoint payload not found: {payload_path}")
    flat = np.frombuffer(payload_path.read_bytes(), dtype="<f8")
    expected = network.parameter_count()
    if flat.size != expected:
        raise ValueError(f"{payload_path}: payload holds {flat.size} values, "
                         f"spec implies {expected}")
    arrays = []
    offset = 0
    for _, param in network.parameters():
        arrays.append(flat[offset:offset + param.size].reshape(param.shape).copy())
        offset += param.size
    network.set_parameters(arrays)
    spec_keys = {"format", "feature_count", "sequence_length", "stage1", "stage2",
                 "stage3", "stage3_activations", "parameter_count"}
    meta = {k: v for k, v in entries.items() if k not in spec_keys}
    return network, meta
