"""Comparison machinery: pointwise error statistics, proper orthogonal
decomposition with energy truncation, spectral periodicity differences and
the prediction-horizon breakdown.

All operations are pure functions over value arrays or trajectories.
2-component value sets are (n, 2) arrays of aligned vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajectory import Trajectory

_DEGENERATE_NORM = 1e-12
_PEAK_THRESHOLD = 1e-9


def _as_value_set(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"value set must be (n,) or (n, m), got shape {arr.shape}")
    return arr


def mse_sets(set_a, set_b) -> float:
    """Mean squared difference between aligned value sets.

    Scalars compare directly; 2-component vectors are first reduced to the
    average of their two components per point.
    """
    a, b = _as_value_set(set_a), _as_value_set(set_b)
    if a.shape != b.shape:
        raise ValueError(f"misaligned sets: {a.shape} vs {b.shape}")
    if a.shape[1] == 2:
        a = a.mean(axis=1)
        b = b.mean(axis=1)
    return float(np.mean((a - b) ** 2))


def mmsd(set_a, set_b) -> float:
    """Mean squared difference of vector magnitudes over aligned 2D sets."""
    a, b = _as_value_set(set_a), _as_value_set(set_b)
    if a.shape != b.shape:
        raise ValueError(f"misaligned sets: {a.shape} vs {b.shape}")
    if a.shape[1] != 2:
        raise ValueError(f"magnitude difference needs 2-component vectors, got {a.shape[1]}")
    return float(np.mean((np.linalg.norm(a, axis=1) - np.linalg.norm(b, axis=1)) ** 2))


def mcs(set_a, set_b) -> float:
    """Mean cosine similarity over aligned 2D sets, skipping near-zero vectors."""
    a, b = _as_value_set(set_a), _as_value_set(set_b)
    if a.shape != b.shape:
        raise ValueError(f"misaligned sets: {a.shape} vs {b.shape}")
    if a.shape[1] != 2:
        raise ValueError(f"cosine similarity needs 2-component vectors, got {a.shape[1]}")
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    keep = (norm_a >= _DEGENERATE_NORM) & (norm_b >= _DEGENERATE_NORM)
    if not keep.any():
        raise ValueError("all point pairs are degenerate (near-zero vectors)")
    cos = np.sum(a[keep] * b[keep], axis=1) / (norm_a[keep] * norm_b[keep])
    return float(np.mean(cos))


# ---------------------------------------------------------------------------
# Proper orthogonal decomposition
# ---------------------------------------------------------------------------

@dataclass
class PODBasis:
    """Energy-truncated orthonormal modes of a snapshot set.

    modes: (state_dim, retained) columns, orthonormal.  For 2-component
    fields the state vector stacks component 0 at every point, then
    component 1.  eigenvalues holds the full non-increasing spectrum;
    coefficients (retained, frames) reproduce each snapshot as
    modes @ coefficients[:, t].
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    coefficients: np.ndarray
    energy_fraction: float
    requested_fraction: float
    grid_signature: tuple = ()

    @property
    def retained(self) -> int:
        return self.modes.shape[1]


def _snapshot_matrix(traj: Trajectory) -> np.ndarray:
    # (state_dim, frames); components stacked blockwise.
    vals = traj.values
    return np.concatenate([vals[:, :, c].T for c in range(vals.shape[2])], axis=0)


def pod_decompose(traj: Trajectory, energy_fraction: float = 0.99) -> PODBasis:
    """POD by the method of snapshots, keeping the smallest mode count whose
    cumulative eigenvalue share reaches the requested energy fraction.

    Eigenvalues match the covariance operator (1/N) X X^T; modes come from
    the N x N frame Gram matrix, which is cheaper whenever grid points
    outnumber frames.
    """
    if traj.frame_count < 2:
        raise ValueError("POD needs at least 2 frames")
    if not 0 < energy_fraction <= 1:
        raise ValueError(f"energy fraction must be in (0, 1], got {energy_fraction}")
    x = _snapshot_matrix(traj)
    n_frames = x.shape[1]
    gram = x.T @ x / n_frames
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    total = float(np.clip(eigvals, 0.0, None).sum())
    if total <= 0.0:
        raise ValueError("degenerate (all-zero) trajectory has no POD basis")
    cumulative = np.cumsum(np.clip(eigvals, 0.0, None)) / total
    retained = int(np.searchsorted(cumulative, energy_fraction) + 1)
    retained = min(retained, n_frames)

    modes = x @ eigvecs[:, :retained]
    norms = np.linalg.norm(modes, axis=0)
    if np.any(norms <= 0.0):
        raise ValueError("retained mode with zero norm; lower the energy fraction")
    modes /= norms
    coefficients = modes.T @ x
    return PODBasis(modes=modes, eigenvalues=eigvals, coefficients=coefficients,
                    energy_fraction=float(cumulative[retained - 1]),
                    requested_fraction=energy_fraction,
                    grid_signature=(traj.grid.shape, traj.m))


def cs_pod(basis_a: PODBasis, basis_b: PODBasis) -> list[float]:
    """|inner product| of rank-matched modes, up to the smaller retained count."""
    if basis_a.modes.shape[0] != basis_b.modes.shape[0]:
        raise ValueError(f"bases live on different state spaces: "
                         f"{basis_a.modes.shape[0]} vs {basis_b.modes.shape[0]}")
    if (basis_a.grid_signature and basis_b.grid_signature
            and basis_a.grid_signature != basis_b.grid_signature):
        raise ValueError(f"bases come from different grids: "
                         f"{basis_a.grid_signature} vs {basis_b.grid_signature}")
    count = min(basis_a.retained, basis_b.retained)
    return [float(abs(basis_a.modes[:, i] @ basis_b.modes[:, i])) for i in range(count)]


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

@dataclass
class Spectrum:
    """One-sided magnitude spectrum of a real series; bin i is i/(N*dt) Hz."""

    frequencies: np.ndarray
    magnitudes: np.ndarray

    def dominant_frequency(self, skip_dc: bool = True,
                           threshold: float = _PEAK_THRESHOLD) -> float | None:
        """Frequency of the largest non-DC peak, or None below threshold."""
        start = 1 if skip_dc else 0
        if self.magnitudes.size <= start:
            return None
        idx = start + int(np.argmax(self.magnitudes[start:]))
        if self.magnitudes[idx] < threshold:
            return None
        return float(self.frequencies[idx])

    def save(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frequency", "magnitude"])
            for f, m in zip(self.frequencies, self.magnitudes):
                writer.writerow(["%.17g" % f, "%.17g" % m])
        return path


def dft_magnitude(series, dt: float) -> Spectrum:
    """One-sided magnitude spectrum of a real time series (floor(N/2)+1 bins)."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size < 2:
        raise ValueError("series must be 1D with at least 2 samples")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = series.size
    spectrum = np.abs(np.fft.rfft(series))
    freqs = np.arange(spectrum.size) / (n * dt)
    return Spectrum(frequencies=freqs, magnitudes=spectrum)


def _point_series(traj: Trajectory, point: int, frames: np.ndarray,
                  component) -> np.ndarray:
    values = traj.values[frames, point, :]
    if component == "magnitude":
        return np.linalg.norm(values, axis=1)
    return values[:, int(component)]


def freq_percent_diff(traj_a: Trajectory, traj_b: Trajectory, points,
                      frame_range: tuple[int, int], component=0) -> float:
    """Mean |f_a - f_b| / f_b of dominant non-DC peaks over the given points.

    traj_b is the reference (ground truth).  Points whose spectra carry no
    non-DC energy above threshold in either trajectory are skipped; if every
    point is skipped the comparison is undefined and raises.
    `component` picks one field component, or "magnitude" for vector norms.
    """
    start, stop = frame_range
    frames = np.arange(start, stop)
    if frames.size < 2:
        raise ValueError("frame range must span at least 2 frames")
    if traj_a.frame_count != traj_b.frame_count or traj_a.dt != traj_b.dt:
        raise ValueError("trajectories must be aligned in time")
    if stop > traj_a.frame_count:
        raise ValueError(f"frame range {frame_range} exceeds {traj_a.frame_count} frames")
    diffs = []
    for point in np.asarray(points, dtype=np.int64):
        spec_a = dft_magnitude(_point_series(traj_a, point, frames, component), traj_a.dt)
        spec_b = dft_magnitude(_point_series(traj_b, point, frames, component), traj_b.dt)
        fa = spec_a.dominant_frequency()
        fb = spec_b.dominant_frequency()
        if fa is None or fb is None:
            continue
        diffs.append(abs(fa - fb) / fb)
    if not diffs:
        raise ValueError("no point had a non-DC spectral peak above threshold")
    return float(np.mean(diffs))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    """One comparison outcome: a split or interval, a model pair, one metric."""

    section: str                 # e.g. "split", "horizon", "cs_pod", "fft"
    label: str                   # split name, interval span, or mode index
    pair: str                    # e.g. "nn_vs_act", "curr_vs_act"
    metric: str                  # "mse", "mmsd", "mcs", "cs_pod", "pct_freq_diff"
    value: float


@dataclass
class MetricReport:
    """Flat collection of metric rows with CSV / text export."""

    rows: list[MetricRow] = field(default_factory=list)

    def add(self, section, label, pair, metric, value):
        self.rows.append(MetricRow(section, label, pair, metric, float(value)))

    def lookup(self, section=None, label=None, pair=None, metric=None) -> list[MetricRow]:
        out = self.rows
        for attr, want in (("section", section), ("label", label),
                           ("pair", pair), ("metric", metric)):
            if want is not None:
                out = [r for r in out if getattr(r, attr) == want]
        return out

    def value(self, section, label, pair, metric) -> float:
        rows = self.lookup(section, label, pair, metric)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match ({section}, {label}, {pair}, {metric})")
        return rows[0].value

    def save_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["section", "label", "pair", "metric", "value"])
            for r in self.rows:
                writer.writerow([r.section, r.label, r.pair, r.metric, "%.17g" % r.value])
        return path

    def to_text(self) -> str:
        lines = ["metric summary", "-" * 64]
        for r in self.rows:
            lines.append(f"{r.section:<10} {r.label:<18} {r.pair:<14} "
                         f"{r.metric:<14} {r.value: .6e}")
        return "\n".join(lines)


def horizon_evaluation(predicted: Trajectory, current: Trajectory,
                       actual: Trajectory, points, start_frame: int,
                       interval: int = 250) -> MetricReport:
    """Per-interval error metrics over the future range.

    Partitions frames [start_frame, N) into consecutive intervals of the
    given length (trailing partial interval kept) and computes MSE (plus
    MMSD and MCS for 2-component fields) for predicted-vs-actual and
    current-vs-actual over the listed points.
    """
    n = actual.frame_count
    if start_frame >= n:
        raise ValueError(f"start frame {start_frame} leaves no future range (N={n})")
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    points = np.asarray(points, dtype=np.int64)
    report = MetricReport()
    for lo in range(start_frame, n, interval):
        hi = min(lo + interval, n)
        frames = np.arange(lo, hi)
        act = actual.values[frames][:, points, :].reshape(-1, actual.m)
        for pair, traj in (("nn_vs_act", predicted), ("curr_vs_act", current)):
            come = traj.values[frames][:, points, :].reshape(-1, traj.m)
            label = f"{lo}-{hi}"
            report.add("horizon", label, pair, "mse", mse_sets(come, act))
            if actual.m == 2:
                report.add("horizon", label, pair, "mmsd", mmsd(come, act))
                report.add("horizon", label, pair, "mcs", mcs(come, act))
    return report
