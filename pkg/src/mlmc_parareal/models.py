"""Uncertain machine models as affine linear ODE systems M da/dt + K a = r(t).

Two concrete builders are provided: a lumped equivalent-circuit induction
machine (6 uncertain parameters) and a synthetic conductor-bar system with 32
uncertain bar conductivities.  Both reduce to the same LinearSystemModel form
consumed by the time integrators, together with a scalar quantity of interest
(electrical energy or mean joule loss) evaluated on a stored trajectory.

All types are frozen dataclasses and picklable, so models can be shared
read-only across worker processes.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .timeint import Trajectory, implicit_euler_solve

__all__ = [
    "ParameterVector", "UncertainInput", "LevelSpec", "QoIKind", "QoIDefinition",
    "LinearSystemModel", "DriveSettings", "SinusoidalDrive",
    "build_steinmetz", "build_synthetic_machine", "draw_parameters",
    "evaluate_qoi", "make_hierarchy", "EvalRecord", "MachineFamily",
    "LinearToyFamily", "steinmetz_family", "synthetic_family", "toy_family",
    "STEINMETZ_PARAM_NAMES", "SIGMA_NOMINAL", "NUM_BARS",
]

# Ordered as in the machine parameter table: stator resistance, squirrel cage
# resistance, iron loss resistance, stator leakage, cage leakage, main inductance.
STEINMETZ_PARAM_NAMES = ("R1", "R2", "R_fe", "L_s1", "L_s2", "L_h")

STEINMETZ_NOMINAL = (
    1.111140e-01,   # R1   [ohm]
    7.158602e-02,   # R2   [ohm]
    1.736354e+06,   # R_fe [ohm]
    1.649983e-03,   # L_s1 [H]
    1.063014e-03,   # L_s2 [H]
    6.407774e-02,   # L_h  [H]
)

NUM_BARS = 32
SIGMA_NOMINAL = 26.7e6  # [S/m] nominal bar conductivity

_PARAM_COUNTS = {"steinmetz": 6, "synthetic": NUM_BARS}

_COND_LIMIT = 1e12  # mass matrices beyond this condition estimate are rejected


@dataclass(frozen=True)
class ParameterVector:
    """One realization of a model's uncertain parameters."""

    model_id: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        expected = _PARAM_COUNTS.get(self.model_id)
        if expected is not None and len(vals) != expected:
            raise ValueError(
                f"model '{self.model_id}' takes {expected} parameters, got {len(vals)}"
            )
        if not np.all(vals > 0.0):
            bad = int(np.argmin(vals))
            raise ValueError(
                f"parameter {bad} of '{self.model_id}' must be strictly positive, "
                f"got {vals[bad]}"
            )


@dataclass(frozen=True)
class UncertainInput:
    """Independent per-component uniform variation around a nominal vector."""

    nominal: ParameterVector
    relative_halfwidth: float  # in [0, 1), e.g. 0.05 for +-5 %

    def __post_init__(self):
        if not 0.0 <= self.relative_halfwidth < 1.0:
            raise ValueError(
                f"relative_halfwidth must lie in [0, 1), got {self.relative_halfwidth}"
            )


@dataclass(frozen=True, order=True)
class LevelSpec:
    """One member of the time-discretization hierarchy."""

    level: int
    dt: float

    def __post_init__(self):
        if self.level < 0 or self.dt <= 0.0:
            raise ValueError(f"invalid level spec (level={self.level}, dt={self.dt})")


def make_hierarchy(dts) -> tuple[LevelSpec, ...]:
    """Levels 0..L from a strictly decreasing list of step sizes."""
    dts = [float(dt) for dt in dts]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError(f"step sizes must be strictly decreasing, got {dts}")
    return tuple(LevelSpec(level=i, dt=dt) for i, dt in enumerate(dts))


class QoIKind(enum.Enum):
    ELECTRICAL_ENERGY = "electrical_energy"
    MEAN_JOULE_LOSS = "mean_joule_loss"


@dataclass(frozen=True)
class SinusoidalDrive:
    """u(t) = amplitude * sin(2 pi frequency t); picklable callable."""

    amplitude: float
    frequency: float

    def __call__(self, t):
        return self.amplitude * np.sin(2.0 * np.pi * self.frequency * t)


@dataclass(frozen=True)
class DriveSettings:
    amplitude: float = 230.0 * np.sqrt(2.0)
    frequency: float = 50.0
    slip: float = 0.05

    def __post_init__(self):
        if self.amplitude < 0.0:
            raise ValueError(f"drive amplitude must be >= 0, got {self.amplitude}")
        if self.frequency <= 0.0:
            raise ValueError(f"drive frequency must be > 0, got {self.frequency}")
        if not 0.0 < self.slip <= 1.0:
            raise ValueError(f"slip must lie in (0, 1], got {self.slip}")

    def voltage(self) -> SinusoidalDrive:
        return SinusoidalDrive(self.amplitude, self.frequency)


@dataclass(frozen=True)
class QoIDefinition:
    """Scalar output of one simulation, evaluated over the horizon [0, T]."""

    kind: QoIKind
    horizon: float
    drive: SinusoidalDrive | None = None  # ELECTRICAL_ENERGY only
    current_index: int | None = None      # index of the drive-current state
    mass: np.ndarray | None = None        # MEAN_JOULE_LOSS only

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError(f"QoI horizon must be positive, got {self.horizon}")


@dataclass(frozen=True)
class _ScaledDriveForcing:
    """r(t) = u(t) * direction, for a scalar drive voltage u."""

    drive: SinusoidalDrive
    direction: np.ndarray

    def __call__(self, t):
        return self.drive(t) * self.direction


@dataclass(frozen=True)
class _ProfileForcing:
    """r(t) = sin(2 pi f t) * profile, a fixed smooth spatial profile."""

    frequency: float
    profile: np.ndarray

    def __call__(self, t):
        return np.sin(2.0 * np.pi * self.frequency * t) * self.profile


@dataclass(frozen=True)
class LinearSystemModel:
    """The triplet (M, K, r) with initial state and QoI definition."""

    mass: np.ndarray
    stiffness: np.ndarray
    forcing: Callable[[float], np.ndarray]
    initial_state: np.ndarray
    qoi: QoIDefinition

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        stiff = np.asarray(self.stiffness, dtype=float)
        x0 = np.asarray(self.initial_state, dtype=float)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "stiffness", stiff)
        object.__setattr__(self, "initial_state", x0)
        n = mass.shape[0]
        if mass.shape != (n, n) or stiff.shape != (n, n) or x0.shape != (n,):
            raise ValueError(
                f"inconsistent dimensions: mass {mass.shape}, stiffness "
                f"{stiff.shape}, initial state {x0.shape}"
            )
        r0 = np.asarray(self.forcing(0.0), dtype=float)
        if r0.shape != (n,):
            raise ValueError(f"forcing returns shape {r0.shape}, expected ({n},)")
        cond = np.linalg.cond(mass)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise ValueError(f"mass matrix is not safely invertible (cond={cond:.3e})")

    @property
    def dim(self) -> int:
        return self.mass.shape[0]


def build_steinmetz(params: ParameterVector, drive: DriveSettings,
                    horizon: float = 1.0) -> LinearSystemModel:
    """Equivalent-circuit induction machine as a 3-state linear ODE.

    The circuit is a series stator branch (R1, L_s1) feeding the parallel
    combination of the iron-loss resistor R_fe, the main inductance L_h and
    the rotor branch (L_s2, R2/slip).  Eliminating the magnetizing node
    voltage v_m = R_fe (i1 - lam_h/L_h - i2) gives dx/dt + K x = r(t) for
    x = (i1, i2, lam_h), i.e. M is the identity.  The QoI is the electrical
    energy drawn from the source over [0, horizon].
    """
    if params.model_id != "steinmetz":
        raise ValueError(f"expected steinmetz parameters, got '{params.model_id}'")
    r1, r2, r_fe, l_s1, l_s2, l_h = params.values
    s = drive.slip
    r2s = r2 / s

    stiffness = np.array([
        [(r1 + r_fe) / l_s1, -r_fe / l_s1,        -r_fe / (l_s1 * l_h)],
        [-r_fe / l_s2,       (r_fe + r2s) / l_s2,  r_fe / (l_s2 * l_h)],
        [-r_fe,               r_fe,                r_fe / l_h],
    ])
    voltage = drive.voltage()
    direction = np.array([1.0 / l_s1, 0.0, 0.0])
    qoi = QoIDefinition(kind=QoIKind.ELECTRICAL_ENERGY, horizon=horizon,
                        drive=voltage, current_index=0)
    return LinearSystemModel(
        mass=np.eye(3),
        stiffness=stiffness,
        forcing=_ScaledDriveForcing(voltage, direction),
        initial_state=np.zeros(3),
        qoi=qoi,
    )


def _bar_block(size: int, h: float) -> np.ndarray:
    # 1D finite-element style mass block: SPD, tridiagonal, scaled by the cell size.
    block = np.zeros((size, size))
    np.fill_diagonal(block, 2.0 / 3.0)
    idx = np.arange(size - 1)
    block[idx, idx + 1] = 1.0 / 6.0
    block[idx + 1, idx] = 1.0 / 6.0
    return h * block


def build_synthetic_machine(n_dof: int, bar_scales: ParameterVector,
                            horizon: float = 0.16,
                            frequency: float = 50.0) -> LinearSystemModel:
    """Semi-discrete conductor-bar system with 32 uncertain conductivities.

    The mass matrix is block diagonal with one block per bar, block j scaled
    by SIGMA_NOMINAL * bar_scales[j]; the stiffness is the SPD tridiagonal
    stencil diag(2/h^2), offdiag(-1/h^2) with h = 1/n_dof.  The forcing is a
    sinusoid in time with a fixed symmetric spatial profile.  The QoI is the
    mean joule loss over [0, horizon] with this mass matrix as the weight.
    """
    if n_dof < 2 * NUM_BARS or n_dof % NUM_BARS != 0:
        raise ValueError(
            f"n_dof must be >= {2 * NUM_BARS} and divisible by {NUM_BARS}, got {n_dof}"
        )
    if bar_scales.model_id != "synthetic":
        raise ValueError(f"expected synthetic parameters, got '{bar_scales.model_id}'")
    block_size = n_dof // NUM_BARS
    h = 1.0 / n_dof

    base = _bar_block(block_size, h)
    mass = np.zeros((n_dof, n_dof))
    for j, scale in enumerate(bar_scales.values):
        sl = slice(j * block_size, (j + 1) * block_size)
        mass[sl, sl] = SIGMA_NOMINAL * scale * base

    stiffness = np.zeros((n_dof, n_dof))
    np.fill_diagonal(stiffness, 2.0 / h**2)
    idx = np.arange(n_dof - 1)
    stiffness[idx, idx + 1] = -1.0 / h**2
    stiffness[idx + 1, idx] = -1.0 / h**2

    profile = np.sin(np.pi * np.arange(1, n_dof + 1) / (n_dof + 1))
    qoi = QoIDefinition(kind=QoIKind.MEAN_JOULE_LOSS, horizon=horizon, mass=mass)
    return LinearSystemModel(
        mass=mass,
        stiffness=stiffness,
        forcing=_ProfileForcing(frequency, profile),
        initial_state=np.zeros(n_dof),
        qoi=qoi,
    )


def draw_parameters(inp: UncertainInput, stream) -> ParameterVector:
    """Sample each component uniformly in nominal * [1-h, 1+h].

    ``stream`` is either a RandomStream (see the estimator module) or a bare
    numpy Generator.  The result is a pure function of the stream key, so
    repeated calls with equal keys are bitwise identical.
    """
    nominal = inp.nominal.values
    if inp.relative_halfwidth == 0.0:
        return ParameterVector(inp.nominal.model_id, nominal.copy())
    rng = stream.generator() if hasattr(stream, "generator") else stream
    lo = nominal * (1.0 - inp.relative_halfwidth)
    hi = nominal * (1.0 + inp.relative_halfwidth)
    return ParameterVector(inp.nominal.model_id, rng.uniform(lo, hi))


def evaluate_qoi(model: LinearSystemModel, trajectory: Trajectory) -> float:
    """Evaluate the model's QoI by rectangle-rule quadrature on the grid.

    Electrical energy:  sum_k u(t_{k+1}) i1(t_{k+1}) dt  over [0, T].
    Mean joule loss:    (1/T) sum_k d_k^T M d_k dt  with d_k the backward
    difference quotient (a_{k+1} - a_k)/dt.
    """
    qoi = model.qoi
    dt = trajectory.dt
    covered = trajectory.times[-1] - trajectory.times[0]
    if covered < qoi.horizon * (1.0 - 1e-9):
        raise ValueError(
            f"trajectory covers {covered} s but the QoI horizon is {qoi.horizon} s"
        )
    n_t = int(round(qoi.horizon / dt))
    if qoi.kind is QoIKind.ELECTRICAL_ENERGY:
        u = qoi.drive(trajectory.times[1:n_t + 1])
        i1 = trajectory.states[1:n_t + 1, qoi.current_index]
        return float(np.sum(u * i1) * dt)
    if qoi.kind is QoIKind.MEAN_JOULE_LOSS:
        diffs = np.diff(trajectory.states[:n_t + 1], axis=0) / dt
        quad = np.einsum("ki,ij,kj->k", diffs, qoi.mass, diffs)
        return float(np.sum(quad) * dt / qoi.horizon)
    raise ValueError(f"unknown QoI kind {qoi.kind}")


@dataclass(frozen=True)
class EvalRecord:
    """Outcome of one sample solve at one level."""

    q: float
    cost_s: float
    parareal_iterations: int | None = None


@dataclass(frozen=True)
class _SteinmetzBuilder:
    drive: DriveSettings
    horizon: float

    def __call__(self, params: ParameterVector) -> LinearSystemModel:
        return build_steinmetz(params, self.drive, horizon=self.horizon)


@dataclass(frozen=True)
class _SyntheticBuilder:
    n_dof: int
    horizon: float
    frequency: float

    def __call__(self, params: ParameterVector) -> LinearSystemModel:
        return build_synthetic_machine(self.n_dof, params, horizon=self.horizon,
                                       frequency=self.frequency)


@dataclass(frozen=True)
class MachineFamily:
    """A parametrized model plus its level hierarchy; one sample = one solve."""

    model_id: str
    uncertain: UncertainInput
    hierarchy: tuple[LevelSpec, ...]
    builder: Callable[[ParameterVector], LinearSystemModel]
    horizon: float

    def build(self, params: ParameterVector) -> LinearSystemModel:
        return self.builder(params)

    def evaluate(self, params: ParameterVector, level: LevelSpec,
                 parareal_cfg=None, pool=None) -> EvalRecord:
        """Solve over [0, horizon] at the level's dt and evaluate the QoI.

        With a Parareal configuration the solve runs parallel-in-time
        (optionally on a worker pool); otherwise a plain sequential
        implicit-Euler solve is used.
        """
        model = self.build(params)
        start = time.perf_counter()
        if parareal_cfg is not None:
            from .parareal import parareal_solve  # local import avoids a cycle
            result = parareal_solve(model, 0.0, self.horizon, model.initial_state,
                                    parareal_cfg.with_dt_fine(level.dt), pool=pool)
            traj = result.fine_trajectory
            k_used = result.iterations_used
        else:
            traj = implicit_euler_solve(model, 0.0, self.horizon, level.dt,
                                        model.initial_state)
            k_used = None
        q = evaluate_qoi(model, traj)
        return EvalRecord(q=q, cost_s=time.perf_counter() - start,
                          parareal_iterations=k_used)


@dataclass(frozen=True)
class LinearToyFamily:
    """Q_l(xi) = xi (1 + dt_l): linear in the input, first-order level bias.

    Cheap enough for statistical calibration tests with 1e5+ samples; the
    exact mean and variance are known in closed form.
    """

    uncertain: UncertainInput
    hierarchy: tuple[LevelSpec, ...]

    def evaluate(self, params: ParameterVector, level: LevelSpec,
                 parareal_cfg=None, pool=None) -> EvalRecord:
        q = float(params.values[0]) * (1.0 + level.dt)
        return EvalRecord(q=q, cost_s=1e-9)


def steinmetz_family(hierarchy, nominal=STEINMETZ_NOMINAL, halfwidth: float = 0.05,
                     drive: DriveSettings = DriveSettings(),
                     horizon: float = 1.0) -> MachineFamily:
    nominal_pv = ParameterVector("steinmetz", np.asarray(nominal, dtype=float))
    return MachineFamily(
        model_id="steinmetz",
        uncertain=UncertainInput(nominal_pv, halfwidth),
        hierarchy=tuple(hierarchy),
        builder=_SteinmetzBuilder(drive, horizon),
        horizon=horizon,
    )


def synthetic_family(hierarchy, n_dof: int = 64, halfwidth: float = 0.05,
                     horizon: float = 0.16, frequency: float = 50.0) -> MachineFamily:
    nominal_pv = ParameterVector("synthetic", np.ones(NUM_BARS))
    return MachineFamily(
        model_id="synthetic",
        uncertain=UncertainInput(nominal_pv, halfwidth),
        hierarchy=tuple(hierarchy),
        builder=_SyntheticBuilder(n_dof, horizon, frequency),
        horizon=horizon,
    )


def toy_family(hierarchy, nominal: float = 1.0, halfwidth: float = 0.05) -> LinearToyFamily:
    nominal_pv = ParameterVector("toy", np.array([nominal]))
    return LinearToyFamily(
        uncertain=UncertainInput(nominal_pv, halfwidth),
        hierarchy=tuple(hierarchy),
    )
