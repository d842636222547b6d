"""Parareal iteration over M sub-intervals with implicit-Euler propagators.

Update equation for the boundary values U_n at the sub-interval boundaries:

    U_n^(k+1) = F(T_n, T_{n-1}, U_{n-1}^(k)) + C(T_n, T_{n-1}, U_{n-1}^(k+1))
                                             - C(T_n, T_{n-1}, U_{n-1}^(k))

with F the fine and C the coarse propagator.  Iteration k consists of a
sequential coarse/update sweep over intervals k..M-1 (for k = 1 this is the
seeding sweep that initializes all boundary values) followed by fine solves
on intervals k..M, which are independent and may run on a worker pool.
After k iterations the first k boundary values coincide with the sequential
fine solution, so earlier intervals are frozen and each iteration performs
exactly M-k coarse and M-k+1 fine interval solves; the cost counters record
precisely these.

Convergence is measured as the maximum relative jump between the fine
endpoint arriving at an interior boundary and the initial value in use just
after it.  The final boundary (nothing follows it) takes the fine value and
the coarse propagator is never applied to the last interval.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .timeint import Trajectory, implicit_euler_solve, propagate, step_count

__all__ = ["PararealConfig", "PararealResult", "PropagatorError",
           "defect", "parareal_solve"]

_DEFECT_FLOOR = 1e-30


class PropagatorError(RuntimeError):
    """Propagator failure inside the iteration; carries interval and iteration."""

    def __init__(self, message: str, interval: int, iteration: int):
        super().__init__(f"{message} (interval {interval}, iteration {iteration})")
        self.interval = interval
        self.iteration = iteration


@dataclass(frozen=True)
class PararealConfig:
    num_subintervals: int          # M
    dt_fine: float
    dt_coarse: float
    tolerance: float = 1e-6       # relative defect at interval boundaries
    max_iterations: int | None = None  # K_max; defaults to M (exact termination)

    def __post_init__(self):
        if self.num_subintervals < 1:
            raise ValueError(f"need at least one sub-interval, got {self.num_subintervals}")
        if self.dt_fine <= 0.0 or self.dt_coarse <= 0.0:
            raise ValueError("step sizes must be positive")
        if self.dt_coarse < self.dt_fine:
            raise ValueError(
                f"dt_coarse ({self.dt_coarse}) must be >= dt_fine ({self.dt_fine})"
            )
        if self.tolerance < 0.0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")
        k_max = self.k_max
        if not 1 <= k_max <= self.num_subintervals:
            raise ValueError(
                f"max_iterations must lie in [1, M={self.num_subintervals}], got {k_max}"
            )

    @property
    def k_max(self) -> int:
        return self.max_iterations if self.max_iterations is not None \
            else self.num_subintervals

    def with_dt_fine(self, dt: float) -> "PararealConfig":
        if dt == self.dt_fine:
            return self
        return replace(self, dt_fine=dt)


@dataclass(frozen=True)
class PararealResult:
    boundary_times: np.ndarray     # (M+1,)
    boundary_states: np.ndarray    # (M+1, dim)
    fine_trajectory: Trajectory    # concatenated sub-trajectories, final iteration
    iterations_used: int           # K
    defect_history: list[float]
    fine_solves_per_iter: list[int]    # M-k+1 solves in iteration k
    coarse_solves_per_iter: list[int]  # M-k solves in iteration k


def defect(boundary_states_prev, boundary_states_next) -> float:
    """Max over boundaries of the relative 2-norm jump between two iterates."""
    prev = np.atleast_2d(np.asarray(boundary_states_prev, dtype=float))
    nxt = np.atleast_2d(np.asarray(boundary_states_next, dtype=float))
    if prev.shape != nxt.shape:
        raise ValueError(f"boundary lists differ in shape: {prev.shape} vs {nxt.shape}")
    if prev.shape[0] == 0:
        return 0.0
    jumps = np.linalg.norm(nxt - prev, axis=1)
    scales = np.maximum(np.linalg.norm(nxt, axis=1), _DEFECT_FLOOR)
    return float(np.max(jumps / scales))


def _fine_interval(args):
    model, t_start, t_end, dt, x0, origin = args
    return implicit_euler_solve(model, t_start, t_end, dt, x0, time_origin=origin)


def _concatenate(sub_trajectories: list[Trajectory], dt: float) -> Trajectory:
    times = [sub_trajectories[0].times]
    states = [sub_trajectories[0].states]
    for traj in sub_trajectories[1:]:
        times.append(traj.times[1:])
        states.append(traj.states[1:])
    return Trajectory(times=np.concatenate(times),
                      states=np.vstack(states), dt=dt)


def parareal_solve(model, t0: float, t1: float, x0, cfg: PararealConfig,
                   pool=None) -> PararealResult:
    """Run the Parareal iteration for the model over [t0, t1].

    ``pool`` may be a concurrent.futures executor; the fine solves of each
    iteration are then dispatched through ``pool.map``.  Results are bitwise
    independent of the worker count because the per-interval results are
    recombined in interval order.
    """
    m = cfg.num_subintervals
    if t1 <= t0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    steps_fine = step_count(t0, t1, cfg.dt_fine)
    steps_coarse = step_count(t0, t1, cfg.dt_coarse)
    if steps_fine % m != 0 or steps_coarse % m != 0:
        raise ValueError(
            f"[{t0}, {t1}] with M={m} sub-intervals is incompatible with "
            f"dt_fine={cfg.dt_fine} ({steps_fine} steps) and "
            f"dt_coarse={cfg.dt_coarse} ({steps_coarse} steps)"
        )
    m_f = steps_fine // m
    x0 = np.asarray(x0, dtype=float)

    # Canonical boundaries on the fine grid, anchored at t0.
    bounds = t0 + (np.arange(m + 1) * m_f) * cfg.dt_fine

    def coarse_end(n: int, value: np.ndarray, iteration: int) -> np.ndarray:
        try:
            return propagate(model, bounds[n - 1], bounds[n], cfg.dt_coarse, value,
                             time_origin=t0)
        except Exception as exc:
            raise PropagatorError(f"coarse propagator failed: {exc}", n, iteration) from exc

    boundary = np.empty((m + 1, model.dim))
    boundary[0] = x0
    coarse_prev = np.empty((m, model.dim))  # coarse_prev[n-1] belongs to boundary n

    fine_end = np.empty((m + 1, model.dim))
    sub_traj: list[Trajectory | None] = [None] * (m + 1)

    defect_history: list[float] = []
    fine_counts: list[int] = []
    coarse_counts: list[int] = []
    k_used = cfg.k_max

    for k in range(1, cfg.k_max + 1):
        # --- coarse/update sweep: intervals k..M-1, strictly sequential ---
        if k == 1:
            for n in range(1, m):
                boundary[n] = coarse_end(n, boundary[n - 1], k)
                coarse_prev[n - 1] = boundary[n]
        else:
            boundary[k - 1] = fine_end[k - 1]  # now exact; frozen from here on
            for n in range(k, m):
                c_new = coarse_end(n, boundary[n - 1], k)
                boundary[n] = fine_end[n] + c_new - coarse_prev[n - 1]
                coarse_prev[n - 1] = c_new
            boundary[m] = fine_end[m]
        coarse_counts.append(m - k)

        # --- fine solves: intervals k..M, independent ---
        args = [(model, bounds[n - 1], bounds[n], cfg.dt_fine, boundary[n - 1], t0)
                for n in range(k, m + 1)]
        try:
            if pool is None:
                results = [_fine_interval(a) for a in args]
            else:
                results = list(pool.map(_fine_interval, args))
        except PropagatorError:
            raise
        except Exception as exc:
            raise PropagatorError(f"fine propagator failed: {exc}", k, k) from exc
        for n, traj in zip(range(k, m + 1), results):
            sub_traj[n] = traj
            fine_end[n] = traj.states[-1]
        fine_counts.append(m - k + 1)

        # --- defect: jumps at the interior boundaries still in play ---
        if k < m:
            d = defect(boundary[k:m], fine_end[k:m])
        else:
            d = 0.0
        defect_history.append(d)
        if d <= cfg.tolerance:
            k_used = k
            break
        k_used = k

    states = boundary.copy()
    states[k_used:] = fine_end[k_used:]

    return PararealResult(
        boundary_times=bounds,
        boundary_states=states,
        fine_trajectory=_concatenate([sub_traj[n] for n in range(1, m + 1)], cfg.dt_fine),
        iterations_used=k_used,
        defect_history=defect_history,
        fine_solves_per_iter=fine_counts,
        coarse_solves_per_iter=coarse_counts,
    )
