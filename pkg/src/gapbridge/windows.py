"""Causal space-time window extraction, splitting and normalization.

A window sample pairs k consecutive time slices of model/auxiliary features
around a grid point with the observed field value at that point on the last
slice.  Feature layout per slice, in order: model components at the k^n
spatial stencil offsets (offsets row-major, components fastest), auxiliary
components at the same offsets, then the min-max scaled coordinates of the
center (x[, y], t of the target frame).

Splitting follows a fixed spatial partition: each eligible grid point is
assigned once to train/validation/local-test and keeps that role in every
frame of the training range; every eligible point of every later frame
belongs to the future-test set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .trajectory import Grid, Trajectory, interior_point_indices

TRAIN, VALIDATION, LOCAL_TEST = 0, 1, 2
INELIGIBLE = -1
_SPLIT_NAMES = {TRAIN: "train", VALIDATION: "validation", LOCAL_TEST: "local_test"}


@dataclass
class WindowSample:
    """One causal hypercube sample: (point, frame) center, k feature slices, target."""

    center: tuple[int, int]          # (flat grid point index, frame index)
    slices: np.ndarray               # (k, feature_count)
    target: np.ndarray               # (m,)


@dataclass
class NormStats:
    """Per-feature affine normalization fitted on the training split."""

    shift: np.ndarray
    scale: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.shift) / self.scale

    def invert(self, features: np.ndarray) -> np.ndarray:
        return features * self.scale + self.shift

    def save(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature_index", "shift", "scale"])
            for i, (s, c) in enumerate(zip(self.shift, self.scale)):
                writer.writerow([i, "%.17g" % s, "%.17g" % c])
        return path

    @classmethod
    def load(cls, path) -> "NormStats":
        rows = list(csv.reader(Path(path).open()))
        data = np.array([[float(r[1]), float(r[2])] for r in rows[1:]])
        return cls(shift=data[:, 0], scale=data[:, 1])


class WindowSet:
    """Sequence of window samples over shared trajectories.

    Feature matrices are materialized lazily per set, so large splits only
    cost memory when actually consumed.  `subset` shares the underlying
    trajectories.  An attached NormStats (via `with_norm`) is applied on
    every materialization.
    """

    def __init__(self, current: Trajectory, actual: Trajectory,
                 aux: Trajectory | None, k: int,
                 points: np.ndarray, frames: np.ndarray,
                 eligible_points: np.ndarray,
                 coordinate_extents: list[tuple[float, float]],
                 norm: NormStats | None = None):
        self.current = current
        self.actual = actual
        self.aux = aux
        self.k = k
        self.points = points                  # per-sample flat point index
        self.frames = frames                  # per-sample target frame index
        self.eligible_points = eligible_points
        self.coordinate_extents = coordinate_extents
        self.norm = norm
        self._stencil = _stencil_offsets(current.grid, k)
        self._coords = current.grid.coordinates()

    # -- sizing -------------------------------------------------------------

    def __len__(self) -> int:
        return self.points.size

    @property
    def feature_count(self) -> int:
        per_point = self.current.m + (self.aux.m if self.aux is not None else 0)
        return len(self._stencil) * per_point + self.current.grid.ndim + 1

    @property
    def target_count(self) -> int:
        return self.actual.m

    # -- materialization ------------------------------------------------------

    def features(self, indices: np.ndarray | None = None) -> np.ndarray:
        """Feature tensor (n, k, feature_count) for the given sample rows."""
        points = self.points if indices is None else self.points[indices]
        frames = self.frames if indices is None else self.frames[indices]
        feats = _gather_features(self.current, self.aux, self.k, self._stencil,
                                 self._coords, self.coordinate_extents,
                                 points, frames)
        if self.norm is not None:
            feats = self.norm.apply(feats)
        return feats

    def targets(self, indices: np.ndarray | None = None) -> np.ndarray:
        points = self.points if indices is None else self.points[indices]
        frames = self.frames if indices is None else self.frames[indices]
        return self.actual.values[frames, points, :]

    def __getitem__(self, i: int) -> WindowSample:
        idx = np.array([i if i >= 0 else len(self) + i])
        return WindowSample(center=(int(self.points[idx[0]]), int(self.frames[idx[0]])),
                            slices=self.features(idx)[0],
                            target=self.targets(idx)[0])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    # -- derivation -----------------------------------------------------------

    def subset(self, mask_or_indices: np.ndarray) -> "WindowSet":
        sel = np.asarray(mask_or_indices)
        if sel.dtype == bool:
            sel = np.flatnonzero(sel)
        return WindowSet(self.current, self.actual, self.aux, self.k,
                         self.points[sel], self.frames[sel],
                         self.eligible_points, self.coordinate_extents,
                         norm=self.norm)

    def with_norm(self, norm: NormStats) -> "WindowSet":
        return WindowSet(self.current, self.actual, self.aux, self.k,
                         self.points, self.frames,
                         self.eligible_points, self.coordinate_extents,
                         norm=norm)


def _stencil_offsets(grid: Grid, k: int) -> list[int]:
    """Flat-index offsets of the k^n cube around a point, row-major."""
    half = (k - 1) // 2
    axes = [np.arange(-half, half + 1)] * grid.ndim
    mesh = np.meshgrid(*axes, indexing="ij")
    offsets = np.stack([m.ravel() for m in mesh], axis=1)
    strides = np.array([int(np.prod(grid.shape[a + 1:])) for a in range(grid.ndim)])
    return [int(o @ strides) for o in offsets]


def _gather_features(current, aux, k, stencil, coords, extents, points, frames):
    n = points.size
    parts = []
    stencil_arr = np.asarray(stencil)
    frame_idx = frames[:, None] - (k - 1) + np.arange(k)[None, :]
    point_idx = points[:, None] + stencil_arr[None, :]
    for traj in (current,) if aux is None else (current, aux):
        # (n, k, stencil, m): slice s of sample i is frame frames[i]-k+1+s.
        gathered = traj.values[frame_idx[:, :, None], point_idx[:, None, :], :]
        parts.append(gathered.reshape(n, k, -1))
    ndim = coords.shape[1]
    scaled = np.empty((n, ndim + 1))
    for a in range(ndim):
        lo, hi = extents[a]
        scaled[:, a] = (coords[points, a] - lo) / (hi - lo)
    t_lo, t_hi = extents[-1]
    scaled[:, ndim] = (frames * current.dt - t_lo) / (t_hi - t_lo)
    return np.concatenate(parts + [np.repeat(scaled[:, None, :], k, axis=1)], axis=2)


def build_windows(current: Trajectory, actual: Trajectory,
                  aux: Trajectory | None = None, k: int = 3,
                  train_frame_count: int | None = None,
                  eligible_mask: np.ndarray | None = None) -> WindowSet:
    """Enumerate every causal window over the shared grid of the trajectories.

    A sample exists for each interior point (margin (k-1)/2 from every spatial
    boundary, optionally further masked) and each frame >= k-1; its k slices
    cover frames t-k+1 .. t and its target is the actual-model value at the
    center point on frame t.  Center coordinates are min-max scaled by the
    grid extents and by the training time range [0, (train_frame_count-1)*dt]
    (full trajectory range when not given).
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"stencil width k must be odd and >= 1, got {k}")
    if current.grid != actual.grid or (aux is not None and aux.grid != current.grid):
        raise ValueError("trajectories must share one grid")
    if current.dt != actual.dt or (aux is not None and aux.dt != current.dt):
        raise ValueError("trajectories must share dt")
    if current.frame_count != actual.frame_count:
        raise ValueError(f"frame counts differ: {current.frame_count} vs {actual.frame_count}")
    if any(k > s for s in current.grid.shape):
        raise ValueError(f"k={k} exceeds an axis of grid shape {current.grid.shape}")

    margin = (k - 1) // 2
    eligible = interior_point_indices(current.grid, margin, eligible_mask)
    frames = np.arange(k - 1, current.frame_count)
    point_col = np.repeat(eligible, frames.size)
    frame_col = np.tile(frames, eligible.size)

    extents = current.grid.extents()
    last_train = (train_frame_count - 1) if train_frame_count else (current.frame_count - 1)
    if last_train < 1:
        raise ValueError("training range must span at least two frames")
    extents = extents + [(0.0, last_train * current.dt)]
    return WindowSet(current, actual, aux, k, point_col, frame_col,
                     eligible, extents)


@dataclass
class SplitBundle:
    """Window sets per role plus the spatial assignment that produced them."""

    train: WindowSet
    validation: WindowSet
    local_test: WindowSet
    future_test: WindowSet
    split_map: np.ndarray            # per flat grid point: role or INELIGIBLE
    seed: int
    train_frame_count: int
    fractions: tuple[float, float, float]

    def splits(self):
        return {"train": self.train, "validation": self.validation,
                "local_test": self.local_test, "future_test": self.future_test}

    def point_indices(self, role: int) -> np.ndarray:
        return np.flatnonzero(self.split_map == role)

    def save_split_map(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["point_index", "assignment"])
            for p, a in enumerate(self.split_map):
                name = _SPLIT_NAMES.get(int(a), "ineligible")
                writer.writerow([p, name])
        meta = Path(str(path) + ".meta")
        meta.write_text(
            f"seed={self.seed}\n"
            f"train_frame_count={self.train_frame_count}\n"
            "fractions=" + ",".join(repr(f) for f in self.fractions) + "\n")
        return path


def split_dataset(windows: WindowSet, train_frame_count: int,
                  fractions: tuple[float, float, float] = (0.6, 0.1, 0.3),
                  seed: int = 0) -> SplitBundle:
    """Partition samples by grid point (fixed across frames) and by frame range.

    Eligible points P are shuffled by `seed` and assigned floor(f_train*P) to
    train, round(f_val*P) to validation, the remainder to local test; every
    sample of frames k-1 .. K-1 lands in its point's set, and every sample of
    frames >= K in the future-test set.
    """
    if abs(sum(fractions) - 1.0) > 1e-12:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative, got {fractions}")
    k = windows.k
    if train_frame_count < k:
        raise ValueError(f"training range of {train_frame_count} frames has no "
                         f"eligible frame for k={k}")
    if train_frame_count > windows.current.frame_count:
        raise ValueError("training range exceeds trajectory length")

    eligible = windows.eligible_points
    p_total = eligible.size
    n_train = int(np.floor(fractions[0] * p_total))
    n_val = int(round(fractions[1] * p_total))
    if n_train + n_val > p_total:
        n_val = p_total - n_train

    rng = np.random.default_rng(seed)
    order = rng.permutation(p_total)
    split_map = np.full(windows.current.grid.point_count, INELIGIBLE, dtype=np.int64)
    split_map[eligible[order[:n_train]]] = TRAIN
    split_map[eligible[order[n_train:n_train + n_val]]] = VALIDATION
    split_map[eligible[order[n_train + n_val:]]] = LOCAL_TEST

    in_training_range = windows.frames < train_frame_count
    role_of_sample = split_map[windows.points]
    sets = {}
    for role in (TRAIN, VALIDATION, LOCAL_TEST):
        sets[role] = windows.subset((role_of_sample == role) & in_training_range)
    future = windows.subset(~in_training_range)
    return SplitBundle(train=sets[TRAIN], validation=sets[VALIDATION],
                       local_test=sets[LOCAL_TEST], future_test=future,
                       split_map=split_map, seed=seed,
                       train_frame_count=train_frame_count,
                       fractions=tuple(fractions))


def normalize(bundle: SplitBundle) -> tuple[SplitBundle, NormStats]:
    """Fit zero-mean/unit-variance feature stats on the training split.

    Constant features keep scale 1.  Targets stay in physical units.  The
    returned bundle applies the stats on every feature materialization.
    """
    if len(bundle.train) == 0:
        raise ValueError("cannot normalize with an empty training split")
    feats = bundle.train.features().reshape(-1, bundle.train.feature_count)
    shift = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale[scale == 0.0] = 1.0
    stats = NormStats(shift=shift, scale=scale)
    normalized = replace(
        bundle,
        train=bundle.train.with_norm(stats),
        validation=bundle.validation.with_norm(stats),
        local_test=bundle.local_test.with_norm(stats),
        future_test=bundle.future_test.with_norm(stats))
    return normalized, stats
