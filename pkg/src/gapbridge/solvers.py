"""Numerical generators for the ground-truth and mismatched-model trajectories.

Two solvers live here: an explicit finite-volume scheme for 1D diffusion and
an incompressible 2D cavity solver (staggered grid, explicit predictor,
pressure projection with red-black Gauss-Seidel iterations).  The cavity
problem supports a time-periodic body force and moving top/bottom lids; the
mismatched model variant simply disables the body force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trajectory import Grid, Trajectory


class StabilityError(ValueError):
    """Explicit-scheme stability bound violated by the requested configuration."""


class NumericError(RuntimeError):
    """Solver produced non-finite values or an inner solve failed to converge."""


# ---------------------------------------------------------------------------
# Body force and lid velocities for the cavity problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForcingSample:
    """Body-force components at one space-time point."""

    fx: float
    fy: float


def _forcing_x(x, y, t):
    osc = 120.0 * np.sin(np.exp(1.3 * t) + 80.0 * t)
    return ((12.0 - 24.0 * y) * x**4
            + (-24.0 + 48.0 * y) * x**3
            + (-48.0 * y + 72.0 * y**2 - 48.0 * y**3 + 12.0) * x**2
            + (-2.0 + 24.0 * y - 72.0 * y**2 + 48.0 * y**3) * x
            + (1.0 - 4.0 * y + 12.0 * y**2 - 8.0 * y**3) * osc)


def _forcing_y(x, y, t):
    osc = 120.0 * np.cos(np.exp(1.3 * t) + 80.0 * t)
    return ((8.0 - 48.0 * y + 48.0 * y**2) * x**3
            + (-12.0 + 72.0 * y - 72.0 * y**2) * x**2
            + (4.0 - 24.0 * y + 48.0 * y**2 - 48.0 * y**3 + 24.0 * y**4) * x
            + (-12.0 * y**2 + 24.0 * y**3 - 12.0 * y**4) * osc)


def eval_forcing(x: float, y: float, t: float) -> ForcingSample:
    """Evaluate the whirlpool body force with its periodic factor at (x, y, t)."""
    return ForcingSample(fx=float(_forcing_x(x, y, t)), fy=float(_forcing_y(x, y, t)))


def eval_lid_velocity(boundary: str, t: float) -> float:
    """Tangential speed of the top or bottom lid at time t >= 0."""
    if t < 0:
        raise ValueError(f"lid velocity undefined for t < 0, got {t}")
    if boundary == "top":
        return float(2.0 * math.sin((math.exp(1.2 * t) + 60.0) * t))
    if boundary == "bottom":
        return float(2.0 * math.sin((math.exp(1.2 * t) + 50.0) * t))
    raise ValueError(f"boundary must be 'top' or 'bottom', got {boundary!r}")


# ---------------------------------------------------------------------------
# System 1: 1D diffusion
# ---------------------------------------------------------------------------

@dataclass
class HeatConfig:
    """1D diffusion run: cell-centered grid with Dirichlet wall-face values.

    Lengths are millimetres, diffusivity mm^2/s, times seconds.  The initial
    condition is a named profile; "gaussian" takes amplitude, sigma_frac
    (relative to domain length) and center_frac, "array" takes explicit
    per-cell values.  scheme selects explicit marching (subject to the
    D*dt/dx^2 <= 0.5 bound) or unconditionally stable backward Euler.
    """

    diffusivity: float
    length: float = 0.25
    points: int = 50
    dt: float = 1.2e-5
    frame_count: int = 500
    ic_profile: str = "gaussian"
    ic_params: dict = field(default_factory=dict)
    bc_left: float = 0.0
    bc_right: float = 0.0
    scheme: str = "implicit"

    def __post_init__(self):
        if self.diffusivity < 0:
            raise ValueError(f"diffusivity must be >= 0, got {self.diffusivity}")
        if self.points < 3:
            raise ValueError(f"need at least 3 cells, got {self.points}")
        if self.length <= 0 or self.dt <= 0 or self.frame_count < 1:
            raise ValueError("length and dt must be positive, frame_count >= 1")
        if self.scheme not in ("explicit", "implicit"):
            raise ValueError(f"scheme must be 'explicit' or 'implicit', got {self.scheme!r}")

    @property
    def dx(self) -> float:
        return self.length / self.points

    def grid(self) -> Grid:
        # Cell centers: first at dx/2.
        return Grid(shape=(self.points,), spacing=(self.dx,), origin=(self.dx / 2.0,))

    def initial_condition(self) -> np.ndarray:
        x = self.grid().coordinates()[:, 0]
        if self.ic_profile == "gaussian":
            amp = float(self.ic_params.get("amplitude", 1.0))
            sigma = float(self.ic_params.get("sigma_frac", 0.1)) * self.length
            center = float(self.ic_params.get("center_frac", 0.5)) * self.length
            return amp * np.exp(-0.5 * ((x - center) / sigma) ** 2)
        if self.ic_profile == "zero":
            return np.zeros_like(x)
        if self.ic_profile == "array":
            values = np.asarray(self.ic_params["values"], dtype=np.float64)
            if values.shape != (self.points,):
                raise ValueError(f"array IC needs {self.points} values, got {values.shape}")
            return values.copy()
        raise ValueError(f"unknown initial-condition profile {self.ic_profile!r}")


def _thomas_factor(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray):
    """Forward-elimination factors for a constant tridiagonal system."""
    n = diag.size
    scaled_upper = np.empty(n - 1)
    denom = np.empty(n)
    denom[0] = diag[0]
    for i in range(1, n):
        scaled_upper[i - 1] = upper[i - 1] / denom[i - 1]
        denom[i] = diag[i] - lower[i - 1] * scaled_upper[i - 1]
    return scaled_upper, denom


def _thomas_solve(lower, scaled_upper, denom, rhs):
    n = rhs.size
    work = np.empty(n)
    work[0] = rhs[0] / denom[0]
    for i in range(1, n):
        work[i] = (rhs[i] - lower[i - 1] * work[i - 1]) / denom[i]
    x = np.empty(n)
    x[-1] = work[-1]
    for i in range(n - 2, -1, -1):
        x[i] = work[i] - scaled_upper[i] * x[i + 1]
    return x


def solve_heat_1d(config: HeatConfig) -> Trajectory:
    """March the diffusion scheme; frame 0 is the initial condition.

    Interior cells use the standard 3-point flux balance; the two wall cells
    exchange flux with the fixed Dirichlet face values across a half cell.
    The explicit scheme rejects configurations with D*dt/dx^2 > 0.5; backward
    Euler (scheme="implicit") is unconditionally stable.
    """
    r = config.diffusivity * config.dt / config.dx**2
    if config.scheme == "explicit" and r > 0.5:
        raise StabilityError(
            f"explicit diffusion unstable: D*dt/dx^2 = {r:.6g} > 0.5 "
            f"(D={config.diffusivity}, dt={config.dt}, dx={config.dx:.6g})")

    u = config.initial_condition()
    frames = np.empty((config.frame_count, config.points, 1))
    frames[0, :, 0] = u

    if config.scheme == "explicit":
        for k in range(1, config.frame_count):
            new = u.copy()
            new[1:-1] += r * (u[2:] - 2.0 * u[1:-1] + u[:-2])
            # Wall cells: interior flux plus Dirichlet face flux over half a cell.
            new[0] += r * (u[1] - 3.0 * u[0] + 2.0 * config.bc_left)
            new[-1] += r * (u[-2] - 3.0 * u[-1] + 2.0 * config.bc_right)
            u = new
            frames[k, :, 0] = u
    else:
        n = config.points
        lower = np.full(n - 1, -r)
        upper = np.full(n - 1, -r)
        diag = np.full(n, 1.0 + 2.0 * r)
        diag[0] = diag[-1] = 1.0 + 3.0 * r
        scaled_upper, denom = _thomas_factor(lower, diag, upper)
        for k in range(1, config.frame_count):
            rhs = u.copy()
            rhs[0] += 2.0 * r * config.bc_left
            rhs[-1] += 2.0 * r * config.bc_right
            u = _thomas_solve(lower, scaled_upper, denom, rhs)
            frames[k, :, 0] = u

    traj = Trajectory(grid=config.grid(), dt=config.dt, values=frames,
                      component_names=("temperature",), system="heat1d")
    traj.validate_finite()
    return traj


# ---------------------------------------------------------------------------
# System 2: lid cavity with periodic lids and optional body force
# ---------------------------------------------------------------------------

@dataclass
class CavityConfig:
    """Unit-square cavity run on a staggered grid with `points`^2 output cells."""

    reynolds: float = 100.0
    points: int = 30
    dt: float = 1e-3
    frame_count: int = 2000
    forcing_enabled: bool = True
    moving_lids_enabled: bool = True
    pressure_tolerance: float = 1e-5
    pressure_max_iters: int = 20000
    pressure_relaxation: float = 1.9

    def __post_init__(self):
        if self.reynolds <= 0:
            raise ValueError(f"Reynolds number must be positive, got {self.reynolds}")
        if self.dt <= 0 or self.pressure_tolerance <= 0:
            raise ValueError("dt and pressure_tolerance must be positive")
        if self.points < 3 or self.frame_count < 1:
            raise ValueError("need at least 3 cells per axis and 1 frame")
        if not 0 < self.pressure_relaxation < 2:
            raise ValueError("pressure_relaxation must lie in (0, 2)")

    @property
    def h(self) -> float:
        return 1.0 / self.points

    def grid(self) -> Grid:
        return Grid(shape=(self.points, self.points),
                    spacing=(self.h, self.h), origin=(self.h / 2.0, self.h / 2.0))


class LidCavitySolver:
    """Explicit predictor + pressure projection on a staggered (MAC) layout.

    u lives on vertical faces (nc+1, nc), v on horizontal faces (nc, nc+1),
    the pressure potential on cells.  Advection is first-order upwind,
    diffusion central.  After every projection the recorded cell divergence
    satisfies max|div| <= pressure_tolerance (divergence_history tracks it).
    """

    def __init__(self, config: CavityConfig):
        self.config = config
        nc = config.points
        self.nc = nc
        self.h = config.h
        self.u = np.zeros((nc + 1, nc))
        self.v = np.zeros((nc, nc + 1))
        self.phi = np.zeros((nc, nc))       # pressure potential dt*p
        self.step_index = 0
        self.divergence_history: list[float] = []
        self.pressure_iterations: list[int] = []
        # Checkerboard masks for red-black sweeps.
        ii, jj = np.indices((nc, nc))
        self._red = (ii + jj) % 2 == 0
        self._black = ~self._red

    # -- boundary helpers ---------------------------------------------------

    def _lid_speeds(self, t: float) -> tuple[float, float]:
        if not self.config.moving_lids_enabled:
            return 0.0, 0.0
        return eval_lid_velocity("top", t), eval_lid_velocity("bottom", t)

    def _padded_u(self, u: np.ndarray, t: float) -> np.ndarray:
        """u with ghost rows below/above enforcing tangential wall velocity."""
        top, bottom = self._lid_speeds(t)
        pad = np.empty((self.nc + 1, self.nc + 2))
        pad[:, 1:-1] = u
        pad[:, 0] = 2.0 * bottom - u[:, 0]
        pad[:, -1] = 2.0 * top - u[:, -1]
        return pad

    def _padded_v(self, v: np.ndarray) -> np.ndarray:
        """v with ghost columns enforcing zero tangential velocity at side walls."""
        pad = np.empty((self.nc + 2, self.nc + 1))
        pad[1:-1, :] = v
        pad[0, :] = -v[0, :]
        pad[-1, :] = -v[-1, :]
        return pad

    # -- predictor ----------------------------------------------------------

    def predictor(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Advection + diffusion + body force over one dt, before projection."""
        cfg = self.config
        nc, h = self.nc, self.h
        u, v = self.u, self.v
        pu = self._padded_u(u, t)
        pv = self._padded_v(v)

        # u-momentum on interior vertical faces i=1..nc-1.
        uc = u[1:-1, :]
        dudx_b = (u[1:-1, :] - u[:-2, :]) / h
        dudx_f = (u[2:, :] - u[1:-1, :]) / h
        dudy_b = (pu[1:-1, 1:-1] - pu[1:-1, :-2]) / h
        dudy_f = (pu[1:-1, 2:] - pu[1:-1, 1:-1]) / h
        v_at_u = 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])
        adv_u = (np.maximum(uc, 0.0) * dudx_b + np.minimum(uc, 0.0) * dudx_f
                 + np.maximum(v_at_u, 0.0) * dudy_b + np.minimum(v_at_u, 0.0) * dudy_f)
        lap_u = ((u[2:, :] - 2.0 * uc + u[:-2, :])
                 + (pu[1:-1, 2:] - 2.0 * uc + pu[1:-1, :-2])) / h**2

        # v-momentum on interior horizontal faces j=1..nc-1.
        vc = v[:, 1:-1]
        dvdy_b = (v[:, 1:-1] - v[:, :-2]) / h
        dvdy_f = (v[:, 2:] - v[:, 1:-1]) / h
        dvdx_b = (pv[1:-1, 1:-1] - pv[:-2, 1:-1]) / h
        dvdx_f = (pv[2:, 1:-1] - pv[1:-1, 1:-1]) / h
        u_at_v = 0.25 * (u[:-1, :-1] + u[:-1, 1:] + u[1:, :-1] + u[1:, 1:])
        adv_v = (np.maximum(u_at_v, 0.0) * dvdx_b + np.minimum(u_at_v, 0.0) * dvdx_f
                 + np.maximum(vc, 0.0) * dvdy_b + np.minimum(vc, 0.0) * dvdy_f)
        lap_v = ((pv[2:, 1:-1] - 2.0 * vc + pv[:-2, 1:-1])
                 + (v[:, 2:] - 2.0 * vc + v[:, :-2])) / h**2

        u_star = self.u.copy()
        v_star = self.v.copy()
        u_star[1:-1, :] += cfg.dt * (-adv_u + lap_u / cfg.reynolds)
        v_star[:, 1:-1] += cfg.dt * (-adv_v + lap_v / cfg.reynolds)

        if cfg.forcing_enabled:
            xu = np.arange(1, nc) * h
            yu = (np.arange(nc) + 0.5) * h
            u_star[1:-1, :] += cfg.dt * _forcing_x(xu[:, None], yu[None, :], t)
            xv = (np.arange(nc) + 0.5) * h
            yv = np.arange(1, nc) * h
            v_star[:, 1:-1] += cfg.dt * _forcing_y(xv[:, None], yv[None, :], t)

        # Walls are impermeable; boundary normal faces stay zero.
        u_star[0, :] = 0.0
        u_star[-1, :] = 0.0
        v_star[:, 0] = 0.0
        v_star[:, -1] = 0.0
        return u_star, v_star

    # -- pressure projection --------------------------------------------------

    def _divergence(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (u[1:, :] - u[:-1, :] + v[:, 1:] - v[:, :-1]) / self.h

    def _solve_potential(self, rhs: np.ndarray):
        """Red-black Gauss-Seidel (over-relaxed) for lap(phi) = rhs, Neumann walls.

        Iterates until max|rhs - lap(phi)| <= pressure_tolerance, which bounds
        the post-projection divergence by the same amount.
        """
        cfg = self.config
        nc, h = self.nc, self.h
        phi = self.phi                       # warm start from previous step
        omega = cfg.pressure_relaxation
        h2 = h * h
        pad = np.zeros((nc + 2, nc + 2))
        for iteration in range(cfg.pressure_max_iters):
            pad[1:-1, 1:-1] = phi
            pad[0, 1:-1] = phi[0, :]
            pad[-1, 1:-1] = phi[-1, :]
            pad[1:-1, 0] = phi[:, 0]
            pad[1:-1, -1] = phi[:, -1]
            nbr = (pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:])
            resid = (nbr - 4.0 * phi) / h2 - rhs
            if np.max(np.abs(resid)) <= cfg.pressure_tolerance:
                phi -= phi.mean()            # fix the Neumann gauge
                return iteration
            for color in (self._red, self._black):
                pad[1:-1, 1:-1] = phi
                pad[0, 1:-1] = phi[0, :]
                pad[-1, 1:-1] = phi[-1, :]
                pad[1:-1, 0] = phi[:, 0]
                pad[1:-1, -1] = phi[:, -1]
                nbr = (pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:])
                update = 0.25 * (nbr - h2 * rhs)
                phi[color] += omega * (update[color] - phi[color])
        pad[1:-1, 1:-1] = phi
        pad[0, 1:-1] = phi[0, :]
        pad[-1, 1:-1] = phi[-1, :]
        pad[1:-1, 0] = phi[:, 0]
        pad[1:-1, -1] = phi[:, -1]
        nbr = (pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:])
        final = float(np.max(np.abs((nbr - 4.0 * phi) / h2 - rhs)))
        raise NumericError(
            f"pressure solve did not reach tolerance {cfg.pressure_tolerance:g} "
            f"within {cfg.pressure_max_iters} iterations (residual {final:.3e}, "
            f"step {self.step_index})")

    def step(self):
        """Advance one dt: predictor, projection, divergence bookkeeping."""
        cfg = self.config
        t = self.step_index * cfg.dt
        u_star, v_star = self.predictor(t)
        div = self._divergence(u_star, v_star)
        iterations = self._solve_potential(div)
        phi = self.phi
        u_star[1:-1, :] -= (phi[1:, :] - phi[:-1, :]) / self.h
        v_star[:, 1:-1] -= (phi[:, 1:] - phi[:, :-1]) / self.h
        self.u, self.v = u_star, v_star
        self.step_index += 1
        post_div = float(np.max(np.abs(self._divergence(self.u, self.v))))
        self.divergence_history.append(post_div)
        self.pressure_iterations.append(iterations)
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise NumericError(f"non-finite velocity after step {self.step_index}")

    def cell_velocities(self) -> np.ndarray:
        """Velocities averaged to cell centers, shape (nc*nc, 2), row-major."""
        uc = 0.5 * (self.u[:-1, :] + self.u[1:, :])
        vc = 0.5 * (self.v[:, :-1] + self.v[:, 1:])
        return np.stack([uc.ravel(), vc.ravel()], axis=1)

    def run(self) -> Trajectory:
        """March frame_count-1 steps; frame 0 is the initial (rest) state."""
        cfg = self.config
        frames = np.empty((cfg.frame_count, cfg.points**2, 2))
        frames[0] = self.cell_velocities()
        for k in range(1, cfg.frame_count):
            self.step()
            frames[k] = self.cell_velocities()
        traj = Trajectory(grid=cfg.grid(), dt=cfg.dt, values=frames,
                          component_names=("velocity_x", "velocity_y"),
                          system="lidcavity2d")
        traj.validate_finite()
        return traj


def solve_lid_cavity_2d(config: CavityConfig) -> Trajectory:
    """Run the cavity problem from rest and return the cell-center velocity frames."""
    return LidCavitySolver(config).run()


def forcing_trajectory(config: CavityConfig) -> Trajectory:
    """Body-force components sampled at the output cells of a cavity run.

    Stored as an auxiliary trajectory so downstream consumers never
    re-evaluate the force expressions.
    """
    grid = config.grid()
    coords = grid.coordinates()
    x, y = coords[:, 0], coords[:, 1]
    frames = np.empty((config.frame_count, grid.point_count, 2))
    for k in range(config.frame_count):
        t = k * config.dt
        frames[k, :, 0] = _forcing_x(x, y, t)
        frames[k, :, 1] = _forcing_y(x, y, t)
    return Trajectory(grid=grid, dt=config.dt, values=frames,
                      component_names=("force_x", "force_y"), system="forcing")
