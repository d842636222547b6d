"""Sequential implicit-Euler propagation of affine linear ODE systems.

Solves M da/dt + K a = r(t) on a uniform grid.  Each step solves

    (M + dt K) a_{k+1} = M a_k + dt r(t_{k+1}),

so the operator is factorized once per (model, dt) and reused across all
steps; only the right-hand side changes.  This keeps the per-step cost
constant, which the cost models elsewhere in this package rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

__all__ = ["Trajectory", "SingularSystemError", "implicit_euler_solve", "propagate"]

# Relative slack when checking that an interval is an integer number of steps.
_GRID_RTOL = 1e-9


class SingularSystemError(RuntimeError):
    """Raised when (M + dt K) cannot be factorized. Carries the step index."""

    def __init__(self, message: str, step_index: int = 0):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform time grid; ``states[k]`` belongs to ``times[k]``."""

    times: np.ndarray   # shape (n+1,), strictly increasing, uniform spacing
    states: np.ndarray  # shape (n+1, dim)
    dt: float

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def terminal_state(self) -> np.ndarray:
        return self.states[-1]


def step_count(t0: float, t1: float, dt: float) -> int:
    """Number of steps covering [t0, t1], requiring an integer multiple of dt."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    span = t1 - t0
    raw = span / dt
    n = int(round(raw))
    if n < 1 or abs(raw - n) > _GRID_RTOL * max(1.0, abs(raw)):
        raise ValueError(
            f"interval [{t0}, {t1}] is not an integer number of steps of dt={dt} "
            f"(got {raw})"
        )
    return n


def _factorize(model, dt: float):
    operator = model.mass + dt * model.stiffness
    try:
        lu, piv = lu_factor(operator)
    except Exception as exc:  # LinAlgError on hard failure
        raise SingularSystemError(f"(M + dt K) factorization failed: {exc}") from exc
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or np.any(diag == 0.0):
        raise SingularSystemError(
            f"(M + dt K) is singular for dt={dt}", step_index=0
        )
    return lu, piv


def _grid(t0: float, dt: float, n: int, time_origin: float | None) -> np.ndarray:
    # Anchoring the grid at a caller-supplied origin keeps forcing evaluations
    # bitwise identical between a whole-interval solve and its sub-interval
    # decomposition (used by the parallel-in-time solver).
    if time_origin is None:
        return t0 + np.arange(n + 1) * dt
    k0 = int(round((t0 - time_origin) / dt))
    return time_origin + (k0 + np.arange(n + 1)) * dt


def implicit_euler_solve(model, t0: float, t1: float, dt: float, x0,
                         time_origin: float | None = None) -> Trajectory:
    """Integrate the model over [t0, t1] and return the full trajectory.

    Raises SingularSystemError if (M + dt K) is singular and ValueError if
    (t1 - t0) is not an integer number of steps.
    """
    if t1 <= t0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    n = step_count(t0, t1, dt)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({model.dim},)")

    lu_piv = _factorize(model, dt)
    times = _grid(t0, dt, n, time_origin)
    states = np.empty((n + 1, model.dim))
    states[0] = x0
    mass = model.mass
    forcing = model.forcing
    for k in range(n):
        rhs = mass @ states[k] + dt * forcing(times[k + 1])
        states[k + 1] = lu_solve(lu_piv, rhs)
    return Trajectory(times=times, states=states, dt=dt)


def propagate(model, t_start: float, t_end: float, dt: float, x0,
              time_origin: float | None = None) -> np.ndarray:
    """Terminal state of the implicit-Euler solve; x0 itself for an empty span."""
    x0 = np.asarray(x0, dtype=float)
    if t_end == t_start:
        return x0.copy()
    n = step_count(t_start, t_end, dt)
    lu_piv = _factorize(model, dt)
    times = _grid(t_start, dt, n, time_origin)
    mass = model.mass
    forcing = model.forcing
    x = x0
    for k in range(n):
        x = lu_solve(lu_piv, mass @ x + dt * forcing(times[k + 1]))
    return x
