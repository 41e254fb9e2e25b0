"""Ricci flow of a conformal factor with spectrum recording.

On a surface the flow stays inside the conformal class of the base
metric, so the state is a single per-vertex log factor u with
g(t) = e^u g0.  The unnormalized flow is du/dt = -R; the normalized
flow du/dt = r - R holds the total area fixed, with r the
area-averaged scalar curvature.  Time stepping is classical RK4 with
curvature recomputed at every stage.
"""

from dataclasses import dataclass, field

import numpy as np

from .mesh import assemble_mass, integrate, scalar_curvature, total_area
from .spectral import (
    TRACKING_OVERLAP_FLOOR,
    EigenSolverError,
    SpectrumSnapshot,
    solve_spectrum,
    track,
)

MODES = ("unnormalized", "normalized")

# t_end comparisons tolerate accumulated additive roundoff.
_T_SLOP = 1e-12


class FlowBlowUpError(RuntimeError):
    """Time step produced a non-finite conformal factor."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


@dataclass
class ConformalState:
    """Flow state: mesh, per-vertex log conformal factor, time."""

    mesh: object
    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.shape != (self.mesh.n_vertices,):
            raise ValueError("u must be a per-vertex array")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("conformal factor must be finite")

    @property
    def area(self):
        return total_area(self.mesh, self.u)


@dataclass
class FlowConfig:
    """Run parameters for the flow driver.

    ``area_floor`` defaults to 1e-6 times the initial area when unset.
    ``stop_when_round`` (normalized runs) halts once the pointwise
    curvature spread R_max - R_min drops below the given value; zero
    disables the check.
    """

    mode: str = "unnormalized"
    dt_init: float = 1e-3
    t_end: float = 0.3
    cfl_safety: float = 0.1
    curvature_cap: float = 1e4
    area_floor: float = None
    spectrum_k: int = 6
    record_every: int = 10
    solver_tol: float = 1e-10
    stop_when_round: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.dt_init <= 0 or self.t_end <= 0:
            raise ValueError("dt_init and t_end must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.curvature_cap <= 0:
            raise ValueError("curvature_cap must be positive")
        if self.area_floor is not None and self.area_floor <= 0:
            raise ValueError("area_floor must be positive")
        if self.spectrum_k < 1:
            raise ValueError("spectrum_k must be at least 1")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        if self.solver_tol < 1e-14:
            raise ValueError("solver_tol below 1e-14 is unattainable")
        if self.stop_when_round < 0:
            raise ValueError("stop_when_round must be nonnegative")


@dataclass
class SpectrumTrajectory:
    """Recorded snapshots of one flow run plus termination metadata."""

    mesh: object
    mode: str
    snapshots: list = field(default_factory=list)
    stopping_reason: str = ""
    blowup_time_estimate: float = None

    def eigenvalue_series(self, index):
        """Tracked eigenvalue branch ``index`` across all snapshots."""
        return np.array([s.eigenpairs[index].lam for s in self.snapshots])

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])


def _flow_rhs(mesh, stiffness, u, mode):
    curvature = scalar_curvature(mesh, u, stiffness)
    if mode == "normalized":
        weights = mesh.base_vertex_area * np.exp(u)
        r_avg = float(curvature @ weights) / float(weights.sum())
        return r_avg - curvature
    return -curvature


def step(state, cfg, dt):
    """Advance one classical RK4 step of length dt.

    Curvature (and, in normalized mode, the average curvature) is
    recomputed at every stage.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    mesh = state.mesh
    stiffness = mesh.stiffness
    u = state.u

    k1 = _flow_rhs(mesh, stiffness, u, cfg.mode)
    k2 = _flow_rhs(mesh, stiffness, u + 0.5 * dt * k1, cfg.mode)
    k3 = _flow_rhs(mesh, stiffness, u + 0.5 * dt * k2, cfg.mode)
    k4 = _flow_rhs(mesh, stiffness, u + dt * k3, cfg.mode)
    u_new = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(u_new)):
        raise FlowBlowUpError(
            f"non-finite conformal factor after step at t={state.t:.6g}",
            last_state=state,
        )
    return ConformalState(mesh, u_new, state.t + dt)


def _record(state, cfg, prev_snapshot):
    mesh = state.mesh
    stiffness = mesh.stiffness
    mass = assemble_mass(mesh, state.u)
    raw = solve_spectrum(stiffness, mass, cfg.spectrum_k, cfg.solver_tol)
    if prev_snapshot is None:
        pairs, overlaps = raw, np.ones(len(raw))
    else:
        pairs, overlaps = track(prev_snapshot, raw, mass)
    warnings = [
        f"tracking loss at index {i}: overlap {overlaps[i]:.3f}"
        for i in range(len(pairs))
        if overlaps[i] < TRACKING_OVERLAP_FLOOR
    ]
    curvature = scalar_curvature(mesh, state.u, stiffness)
    area = state.area
    r_avg = integrate(mesh, state.u, curvature) / area
    return SpectrumSnapshot(
        t=state.t,
        u=state.u.copy(),
        eigenpairs=pairs,
        area=area,
        r_avg=r_avg,
        R_min=float(curvature.min()),
        R_max=float(curvature.max()),
        mesh=mesh,
        overlaps=overlaps,
        tracking_warnings=warnings,
    )


def run(initial, cfg):
    """Drive the flow from ``initial`` until a stopping condition.

    Records a spectrum snapshot at t=0, after every ``record_every``
    accepted steps, and at the final state.  The step size is
    min(dt_init, cfl_safety / max(|R|, 1)), additionally clipped to land
    on t_end.  Stopping reasons: ``t_end``, ``area_floor``,
    ``curvature_cap``, ``converged_round``, ``nonfinite_state``,
    ``solver_failure``.  For shrinking unnormalized runs on chi > 0
    topologies a blow-up time estimate t + A / (4 pi chi) is attached
    when the run ends early.

    Returns
    -------
    SpectrumTrajectory
        Partial trajectories are returned (not raised) on solver
        failure and blow-up so callers can flush what exists.
    """
    mesh = initial.mesh
    stiffness = mesh.stiffness
    traj = SpectrumTrajectory(mesh=mesh, mode=cfg.mode)

    area0 = initial.area
    floor = cfg.area_floor if cfg.area_floor is not None else 1e-6 * area0

    try:
        snapshot = _record(initial, cfg, None)
    except EigenSolverError:
        traj.stopping_reason = "solver_failure"
        return traj
    traj.snapshots.append(snapshot)

    state = initial
    steps = 0
    reason = None
    while True:
        curvature = scalar_curvature(mesh, state.u, stiffness)
        max_abs_r = float(np.max(np.abs(curvature)))
        area = state.area

        if area < floor:
            reason = "area_floor"
            break
        if max_abs_r > cfg.curvature_cap:
            reason = "curvature_cap"
            break
        if (cfg.stop_when_round > 0.0
                and float(curvature.max() - curvature.min()) < cfg.stop_when_round):
            reason = "converged_round"
            break
        if state.t >= cfg.t_end - _T_SLOP:
            reason = "t_end"
            break

        dt = min(cfg.dt_init, cfg.cfl_safety / max(max_abs_r, 1.0))
        dt = min(dt, cfg.t_end - state.t)
        try:
            state = step(state, cfg, dt)
        except FlowBlowUpError as exc:
            state = exc.last_state
            reason = "nonfinite_state"
            break
        steps += 1

        if steps % cfg.record_every == 0:
            try:
                snapshot = _record(state, cfg, snapshot)
            except EigenSolverError:
                reason = "solver_failure"
                break
            traj.snapshots.append(snapshot)

    if reason != "solver_failure" and state.t > traj.snapshots[-1].t + _T_SLOP:
        try:
            traj.snapshots.append(_record(state, cfg, traj.snapshots[-1]))
        except EigenSolverError:
            reason = "solver_failure"

    traj.stopping_reason = reason
    if (reason in ("area_floor", "curvature_cap", "nonfinite_state")
            and cfg.mode == "unnormalized"
            and mesh.euler_characteristic > 0):
        traj.blowup_time_estimate = (
            state.t + state.area / (4.0 * np.pi * mesh.euler_characteristic)
        )
    return traj


def _check_uniform_spacing(t_prev, t_mid, t_next):
    h1 = t_mid - t_prev
    h2 = t_next - t_mid
    if h1 <= 0 or h2 <= 0:
        raise ValueError("snapshot times must be strictly increasing")
    if abs(h1 - h2) > 1e-9 * max(h1, h2):
        raise ValueError(
            f"recording spacing is not uniform ({h1:.3e} vs {h2:.3e}); "
            "central differences need equal intervals"
        )
    return 0.5 * (h1 + h2)


def scalar_curvature_evolution_residual(traj, t_index):
    """Residual of the curvature evolution law dR/dt = Delta R + R^2.

    Central-differences R between the recorded neighbors of
    ``t_index`` and subtracts Delta_{g(t)} R + R^2 evaluated at the
    middle snapshot, with the geometer's Laplacian
    Delta_g R = -(L R) / (base_vertex_area * e^u).  Returns the
    per-vertex residual array; it vanishes to O(h^2) on exact flows.
    """
    if t_index < 1 or t_index > len(traj.snapshots) - 2:
        raise ValueError("t_index must be interior to the recorded range")
    s_prev = traj.snapshots[t_index - 1]
    s_mid = traj.snapshots[t_index]
    s_next = traj.snapshots[t_index + 1]
    h = _check_uniform_spacing(s_prev.t, s_mid.t, s_next.t)

    mesh = traj.mesh
    stiffness = mesh.stiffness
    r_prev = scalar_curvature(mesh, s_prev.u, stiffness)
    r_mid = scalar_curvature(mesh, s_mid.u, stiffness)
    r_next = scalar_curvature(mesh, s_next.u, stiffness)

    drdt = (r_next - r_prev) / (2.0 * h)
    laplace_r = -(stiffness @ r_mid) / (mesh.base_vertex_area * np.exp(s_mid.u))
    return drdt - (laplace_r + r_mid**2)
