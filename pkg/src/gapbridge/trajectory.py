"""Gridded space-time field containers and their on-disk formats.

A trajectory is an ordered stack of frames, each frame holding m field
components at every point of a fixed regular grid.  Frames are spaced
uniformly in time (t = frame_index * dt).  On disk a trajectory is a
plain-text manifest plus a sibling binary payload of little-endian
float64 values in (frame, point, component) order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ManifestError(ValueError):
    """Raised when a trajectory manifest or payload is malformed."""


# Manifest keys accepted by load_trajectory.  Anything else is rejected.
_MANIFEST_KEYS = ("system", "n", "m", "shape", "spacing", "origin", "dt",
                  "frame_count", "components")


@dataclass(frozen=True)
class Grid:
    """Regular spatial grid: point counts, physical spacing and origin per axis."""

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.shape) not in (1, 2):
            raise ValueError(f"grid must be 1D or 2D, got {len(self.shape)} axes")
        if len(self.spacing) != len(self.shape) or len(self.origin) != len(self.shape):
            raise ValueError("shape, spacing and origin must have equal axis counts")
        if any(s < 3 for s in self.shape):
            raise ValueError(f"every axis needs at least 3 points, got shape {self.shape}")
        if any(h <= 0 for h in self.spacing):
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def point_count(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> np.ndarray:
        """Physical coordinates of all points, row-major, shape (point_count, ndim)."""
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.shape[a])
                for a in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def extents(self) -> list[tuple[float, float]]:
        """[(min, max)] physical extent per axis."""
        return [(self.origin[a], self.origin[a] + self.spacing[a] * (self.shape[a] - 1))
                for a in range(self.ndim)]

    def flat_index(self, multi_index: tuple[int, ...]) -> int:
        return int(np.ravel_multi_index(multi_index, self.shape))


@dataclass
class Trajectory:
    """Time series of field frames on a fixed grid.

    values has shape (frame_count, point_count, m); points are row-major
    over the grid axes.
    """

    grid: Grid
    dt: float
    values: np.ndarray
    component_names: tuple[str, ...] | None = None
    system: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"values must be (frames, points, components), got shape {self.values.shape}")
        if self.values.shape[1] != self.grid.point_count:
            raise ValueError(f"frame size {self.values.shape[1]} does not match "
                             f"grid point count {self.grid.point_count}")
        if self.component_names is None:
            self.component_names = tuple(f"c{i}" for i in range(self.values.shape[2]))
        else:
            self.component_names = tuple(self.component_names)
        if len(self.component_names) != self.values.shape[2]:
            raise ValueError("component_names length must equal component count")
        if self.values.shape[0] < 1:
            raise ValueError("a trajectory needs at least one frame")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def frame_count(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[2]

    def frame(self, index: int) -> np.ndarray:
        return self.values[index]

    def times(self) -> np.ndarray:
        return np.arange(self.frame_count) * self.dt

    def validate_finite(self):
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ManifestError(f"non-finite value at frame {bad[0]}, point {bad[1]}, "
                                f"component {bad[2]}")


def save_trajectory(traj: Trajectory, path) -> Path:
    """Write manifest at `path` and payload at `path` + '.bin'."""
    path = Path(path)
    lines = [
        f"system={traj.system}",
        f"n={traj.grid.ndim}",
        f"m={traj.m}",
        "shape=" + ",".join(str(s) for s in traj.grid.shape),
        "spacing=" + ",".join(repr(h) for h in traj.grid.spacing),
        "origin=" + ",".join(repr(o) for o in traj.grid.origin),
        f"dt={traj.dt!r}",
        f"frame_count={traj.frame_count}",
        "components=" + ",".join(traj.component_names),
    ]
    path.write_text("\n".join(lines) + "\n")
    payload = np.ascontiguousarray(traj.values, dtype="<f8")
    Path(str(path) + ".bin").write_bytes(payload.tobytes())
    return path


def load_trajectory(path) -> Trajectory:
    """Read a manifest + payload pair, verifying sizes and finiteness."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trajectory manifest not found: {path}")
    entries = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ManifestError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _MANIFEST_KEYS:
            raise ManifestError(f"{path}:{lineno}: unknown manifest key {key!r}")
        if key in entries:
            raise ManifestError(f"{path}:{lineno}: duplicate manifest key {key!r}")
        entries[key] = value.strip()

    missing = [k for k in _MANIFEST_KEYS if k not in entries]
    if missing:
        raise ManifestError(f"{path}: missing manifest keys {missing}")

    try:
        ndim = int(entries["n"])
        m = int(entries["m"])
        shape = tuple(int(s) for s in entries["shape"].split(","))
        spacing = tuple(float(s) for s in entries["spacing"].split(","))
        origin = tuple(float(s) for s in entries["origin"].split(","))
        dt = float(entries["dt"])
        frame_count = int(entries["frame_count"])
    except ValueError as exc:
        raise ManifestError(f"{path}: malformed manifest value ({exc})") from exc
    components = tuple(entries["components"].split(","))

    if len(shape) != ndim:
        raise ManifestError(f"{path}: shape has {len(shape)} axes but n={ndim}")
    if len(components) != m:
        raise ManifestError(f"{path}: {len(components)} component names but m={m}")

    grid = Grid(shape=shape, spacing=spacing, origin=origin)
    payload_path = Path(str(path) + ".bin")
    if not payload_path.exists():
        raise FileNotFoundError(f"trajectory payload not found: {payload_path}")
    raw = payload_path.read_bytes()
    expected = frame_count * grid.point_count * m
    actual = len(raw) // 8
    if len(raw) != expected * 8:
        raise ManifestError(f"{payload_path}: payload holds {actual} float64 values "
                            f"({len(raw)} bytes), manifest implies {expected}")
    values = np.frombuffer(raw, dtype="<f8").reshape(frame_count, grid.point_count, m)
    traj = Trajectory(grid=grid, dt=dt, values=values.copy(),
                      component_names=components, system=entries["system"])
    traj.validate_finite()
    return traj


def export_csv(traj: Trajectory, path) -> Path:
    """Plot-friendly CSV: frame, x, y, c0, c1, ...  (y = 0 for 1D grids)."""
    path = Path(path)
    coords = traj.grid.coordinates()
    header = "frame,x,y," + ",".join(traj.component_names)
    with path.open("w") as fh:
        fh.write(header + "\n")
        for t in range(traj.frame_count):
            frame = traj.values[t]
            for p in range(traj.grid.point_count):
                x = coords[p, 0]
                y = coords[p, 1] if traj.grid.ndim == 2 else 0.0
                comps = ",".join("%.17g" % v for v in frame[p])
                fh.write("%d,%.17g,%.17g,%s\n" % (t, x, y, comps))
    return path


def import_csv(path, grid: Grid, dt: float, component_names=None, system="") -> Trajectory:
    """Rebuild a trajectory from export_csv output; rows must be in canonical order."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["frame", "x", "y"]:
            raise ManifestError(f"{path}: unexpected CSV header {header[:3]}")
        names = tuple(header[3:])
        rows = [line.strip().split(",") for line in fh if line.strip()]
    m = len(names)
    n_points = grid.point_count
    if len(rows) % n_points != 0:
        raise ManifestError(f"{path}: {len(rows)} rows is not a multiple of "
                            f"{n_points} grid points")
    frame_count = len(rows) // n_points
    values = np.empty((frame_count, n_points, m))
    for i, row in enumerate(rows):
        values[i // n_points, i % n_points] = [float(v) for v in row[3:]]
    traj = Trajectory(grid=grid, dt=dt, values=values,
                      component_names=component_names or names, system=system)
    traj.validate_finite()
    return traj


def interior_point_indices(grid: Grid, margin: int = 1,
                           eligible_mask: np.ndarray | None = None) -> np.ndarray:
    """Flat indices of points at least `margin` cells from every spatial boundary.

    An optional boolean mask (flat, per point) further restricts eligibility,
    e.g. for externally supplied grids with holes.
    """
    keep = np.ones(grid.shape, dtype=bool)
    for axis in range(grid.ndim):
        idx = np.arange(grid.shape[axis])
        ok = (idx >= margin) & (idx < grid.shape[axis] - margin)
        keep &= ok.reshape([-1 if a == axis else 1 for a in range(grid.ndim)])
    flat = keep.ravel()
    if eligible_mask is not None:
        mask = np.asarray(eligible_mask, dtype=bool).ravel()
        if mask.size != grid.point_count:
            raise ValueError(f"eligibility mask has {mask.size} entries, "
                             f"grid has {grid.point_count} points")
        flat = flat & mask
    return np.flatnonzero(flat)


def restrict_to_interior(traj: Trajectory, margin: int = 1,
                         frames: slice | None = None) -> Trajectory:
    """Trajectory over the interior sub-grid (and optionally a frame slice)."""
    sub_shape = tuple(s - 2 * margin for s in traj.grid.shape)
    sub_grid = Grid(shape=sub_shape, spacing=traj.grid.spacing,
                    origin=tuple(o + margin * h for o, h in
                                 zip(traj.grid.origin, traj.grid.spacing)))
    idx = interior_point_indices(traj.grid, margin)
    values = traj.values[frames if frames is not None else slice(None)][:, idx, :]
    return Trajectory(grid=sub_grid, dt=traj.dt, values=values,
                      component_names=traj.component_names, system=traj.system)
