"""
One-step integrators and reference solutions.

Mono-implicit Runge-Kutta (MIRK) tableaus of orders 2-6, their explicit
inverse-injected evaluation, a fixed-point forward solve, classic explicit RK
stepping, a DOP853 reference sampler for data generation, trajectory files,
and empirical convergence-order estimation.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

from mirk_hnn.errors import (
    DivergenceError,
    InvalidArgumentError,
    NoConvergenceError,
    NumericalOverflowError,
    StiffnessError,
    UnreliableFitError,
)

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]
# (f, y_n, y_{n+1}, h) -> next state; forward maps ignore y_{n+1}
OneStepMap = Callable[[VectorField, np.ndarray, np.ndarray, float], np.ndarray]

DEFAULT_SOLVER_TOL = 1e-12
DEFAULT_FIXED_POINT_TOL = 1e-13
ENERGY_DRIFT_GATE = 1e-9
NOISE_FLOOR = 1e-12


def _frozen(values, ndim: int, label: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise InvalidArgumentError(f"{label} must be {ndim}-dimensional, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class MirkTableau:
    """
    A mono-implicit Runge-Kutta method.

    The stages are k_i = f(y_n + v_i (y_{n+1} - y_n) + h sum_j d_ij k_j) and the
    update is y_{n+1} = y_n + h sum_i b_i k_i. The equivalent Butcher matrix is
    A = D + v b^T.

    Parameters
    ----------
    name : str
        Identifier, e.g. ``mirk4``
    b : array_like
        Weights, length s
    v : array_like
        Injection coefficients, length s
    D : array_like
        Strictly lower triangular s x s stage couplings
    p : int
        Nominal order
    """

    name: str
    b: np.ndarray
    v: np.ndarray
    D: np.ndarray
    p: int

    def __post_init__(self):
        b = _frozen(self.b, 1, "b")
        v = _frozen(self.v, 1, "v")
        D = _frozen(self.D, 2, "D")
        s = b.shape[0]
        if v.shape != (s,) or D.shape != (s, s):
            raise InvalidArgumentError(
                f"{self.name}: inconsistent shapes b{b.shape}, v{v.shape}, D{D.shape}"
            )
        if np.any(np.triu(D) != 0.0):
            raise InvalidArgumentError(f"{self.name}: D must be strictly lower triangular")
        if abs(b.sum() - 1.0) > 1e-14:
            raise InvalidArgumentError(f"{self.name}: weights sum to {b.sum()!r}, expected 1")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "D", D)

    @property
    def s(self) -> int:
        return self.b.shape[0]

    @property
    def A(self) -> np.ndarray:
        """Butcher matrix D + v b^T."""
        return self.D + np.outer(self.v, self.b)

    @property
    def c(self) -> np.ndarray:
        """Stage abscissae, the row sums of A."""
        return self.v + self.D.sum(axis=1)


@dataclass(frozen=True, eq=False)
class ExplicitTableau:
    """
    An explicit Runge-Kutta method in Butcher form.

    Parameters
    ----------
    name : str
        Identifier, e.g. ``rk4``
    A : array_like
        Strictly lower triangular s x s matrix
    b : array_like
        Weights, length s
    c : array_like
        Abscissae, length s
    p : int
        Nominal order
    """

    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    p: int

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        b = _frozen(self.b, 1, "b")
        c = _frozen(self.c, 1, "c")
        s = b.shape[0]
        if A.shape != (s, s) or c.shape != (s,):
            raise InvalidArgumentError(f"{self.name}: inconsistent shapes A{A.shape}, b{b.shape}, c{c.shape}")
        if np.any(np.triu(A) != 0.0):
            raise InvalidArgumentError(f"{self.name}: A must be strictly lower triangular")
        if abs(b.sum() - 1.0) > 1e-14:
            raise InvalidArgumentError(f"{self.name}: weights sum to {b.sum()!r}, expected 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def s(self) -> int:
        return self.b.shape[0]

    def as_mirk(self) -> MirkTableau:
        """The same method written as a MIRK with v = 0 and D = A."""
        return MirkTableau(name=self.name, b=self.b, v=np.zeros(self.s), D=self.A, p=self.p)


_SQRT21 = np.sqrt(21.0)


def builtin_tableaus() -> List[MirkTableau]:
    """
    The MIRK methods of orders 2 through 6.

    MIRK2 is the implicit midpoint rule and MIRK4 the symmetric three-stage
    Lobatto-type method; for p >= 3 each method uses the minimal s = p - 1 stages.

    Returns
    -------
    List[MirkTableau]
        MIRK2, MIRK3, MIRK4, MIRK5, MIRK6 in order
    """
    mirk2 = MirkTableau("mirk2", b=[1.0], v=[0.5], D=[[0.0]], p=2)

    mirk3 = MirkTableau(
        "mirk3",
        b=[1 / 4, 3 / 4],
        v=[0.0, 4 / 9],
        D=[[0.0, 0.0],
           [2 / 9, 0.0]],
        p=3,
    )

    mirk4 = MirkTableau(
        "mirk4",
        b=[1 / 6, 1 / 6, 2 / 3],
        v=[0.0, 1.0, 0.5],
        D=[[0.0, 0.0, 0.0],
           [0.0, 0.0, 0.0],
           [1 / 8, -1 / 8, 0.0]],
        p=4,
    )

    mirk5 = MirkTableau(
        "mirk5",
        b=[5 / 54, 1 / 14, 32 / 81, 250 / 567],
        v=[0.0, 1.0, 27 / 32, 837 / 1250],
        D=[[0.0, 0.0, 0.0, 0.0],
           [0.0, 0.0, 0.0, 0.0],
           [3 / 64, -9 / 64, 0.0, 0.0],
           [21 / 1000, 63 / 5000, -252 / 625, 0.0]],
        p=5,
    )

    mirk6 = MirkTableau(
        "mirk6",
        b=[1 / 20, 1 / 20, 49 / 180, 49 / 180, 16 / 45],
        v=[0.0, 1.0, 0.5 - 9 * _SQRT21 / 98, 0.5 + 9 * _SQRT21 / 98, 0.5],
        D=[[0.0, 0.0, 0.0, 0.0, 0.0],
           [0.0, 0.0, 0.0, 0.0, 0.0],
           [1 / 14 + _SQRT21 / 98, -1 / 14 + _SQRT21 / 98, 0.0, 0.0, 0.0],
           [1 / 14 - _SQRT21 / 98, -1 / 14 - _SQRT21 / 98, 0.0, 0.0, 0.0],
           [-5 / 128, 5 / 128, 7 * _SQRT21 / 128, -7 * _SQRT21 / 128, 0.0]],
        p=6,
    )

    return [mirk2, mirk3, mirk4, mirk5, mirk6]


def builtin_explicit_tableaus() -> List[ExplicitTableau]:
    """Forward Euler and the classic fourth-order Runge-Kutta method."""
    euler = ExplicitTableau("euler", A=[[0.0]], b=[1.0], c=[0.0], p=1)
    rk4 = ExplicitTableau(
        "rk4",
        A=[[0.0, 0.0, 0.0, 0.0],
           [0.5, 0.0, 0.0, 0.0],
           [0.0, 0.5, 0.0, 0.0],
           [0.0, 0.0, 1.0, 0.0]],
        b=[1 / 6, 1 / 3, 1 / 3, 1 / 6],
        c=[0.0, 0.5, 0.5, 1.0],
        p=4,
    )
    return [euler, rk4]


def _tableau_key(name: str) -> str:
    return name.strip().lower()


def get_explicit_tableau(name: str) -> ExplicitTableau:
    """Look up an explicit tableau by name."""
    key = _tableau_key(name)
    for tableau in builtin_explicit_tableaus():
        if tableau.name == key:
            return tableau
    raise InvalidArgumentError(f"Unknown explicit tableau '{name}'")


def tableau_names() -> List[str]:
    """Every name accepted by :func:`get_tableau`."""
    return [t.name for t in builtin_tableaus()] + [t.name for t in builtin_explicit_tableaus()]


def get_tableau(name: str) -> MirkTableau:
    """
    Look up a tableau usable by the inverse-injection pipeline.

    Explicit methods are returned in their MIRK form (v = 0, D = A).

    Parameters
    ----------
    name : str
        ``mirk2`` ... ``mirk6``, ``rk4`` or ``euler``

    Returns
    -------
    MirkTableau
        The method

    Raises
    ------
    InvalidArgumentError
        If the name is unknown
    """
    key = _tableau_key(name)
    for tableau in builtin_tableaus():
        if tableau.name == key:
            return tableau
    for tableau in builtin_explicit_tableaus():
        if tableau.name == key:
            return tableau.as_mirk()
    raise InvalidArgumentError(f"Unknown tableau '{name}', expected one of {tableau_names()}")


def _check_step_args(y_n, y_np1, h: float) -> Tuple[np.ndarray, np.ndarray]:
    if not h > 0:
        raise InvalidArgumentError(f"step size must be positive, got {h}")
    y_n = np.asarray(y_n, dtype=np.float64)
    y_np1 = np.asarray(y_np1, dtype=np.float64)
    if y_n.shape != y_np1.shape:
        raise InvalidArgumentError(f"state shapes differ: {y_n.shape} vs {y_np1.shape}")
    return y_n, y_np1


def mirk_injected_step(tab: MirkTableau, f: VectorField, y_n, y_np1, h: float) -> np.ndarray:
    """
    Evaluate a MIRK step with both endpoints known.

    Substituting the known y_{n+1} into the stage formulas makes every stage
    explicit, so the step costs exactly ``tab.s`` evaluations of ``f`` and no
    nonlinear solve.

    Parameters
    ----------
    tab : MirkTableau
        The method
    f : VectorField
        Right-hand side
    y_n : array_like
        Known state at t_n
    y_np1 : array_like
        Known state at t_{n+1}
    h : float
        Step size

    Returns
    -------
    np.ndarray
        The injected prediction of y_{n+1}

    Raises
    ------
    NumericalOverflowError
        If a stage or the result is not finite
    """
    y_n, y_np1 = _check_step_args(y_n, y_np1, h)
    delta = y_np1 - y_n
    stages: List[np.ndarray] = []
    for i in range(tab.s):
        x = y_n + tab.v[i] * delta
        for j in range(i):
            if tab.D[i, j] != 0.0:
                x = x + h * tab.D[i, j] * stages[j]
        k = np.asarray(f(x), dtype=np.float64)
        if not np.all(np.isfinite(k)):
            raise NumericalOverflowError(f"{tab.name}: non-finite value in stage {i}", stage=i)
        stages.append(k)

    increment = tab.b[0] * stages[0]
    for i in range(1, tab.s):
        increment = increment + tab.b[i] * stages[i]
    y_next = y_n + h * increment
    if not np.all(np.isfinite(y_next)):
        raise NumericalOverflowError(f"{tab.name}: non-finite step result", stage=tab.s - 1)
    return y_next


def mirk_forward_step(
    tab: MirkTableau,
    f: VectorField,
    y_n,
    h: float,
    tol: float = DEFAULT_FIXED_POINT_TOL,
    max_iter: int = 100,
) -> np.ndarray:
    """
    Solve one implicit MIRK step by fixed-point iteration.

    Starting from an explicit Euler predictor, the injected step is applied to
    its own output until successive iterates agree to ``tol`` in max-norm.

    Parameters
    ----------
    tab : MirkTableau
        The method
    f : VectorField
        Right-hand side
    y_n : array_like
        State at t_n
    h : float
        Step size, small enough for the iteration to contract
    tol : float
        Max-norm tolerance on successive iterates
    max_iter : int
        Iteration cap

    Returns
    -------
    np.ndarray
        y_{n+1}

    Raises
    ------
    NoConvergenceError
        If the cap is reached
    """
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    y_n = np.asarray(y_n, dtype=np.float64)
    y_next = y_n + h * np.asarray(f(y_n), dtype=np.float64)
    residual = np.inf
    for _ in range(max_iter):
        candidate = mirk_injected_step(tab, f, y_n, y_next, h)
        residual = float(np.max(np.abs(candidate - y_next)))
        y_next = candidate
        if residual < tol:
            return y_next
    raise NoConvergenceError(
        f"{tab.name}: fixed-point iteration did not converge in {max_iter} iterations (h={h})",
        residual=residual,
        iterations=max_iter,
    )


def explicit_step(tab: ExplicitTableau, f: VectorField, y_n, h: float) -> np.ndarray:
    """
    One step of an explicit Runge-Kutta method.

    Raises
    ------
    NumericalOverflowError
        If a stage or the result is not finite
    """
    if not h > 0:
        raise InvalidArgumentError(f"step size must be positive, got {h}")
    y_n = np.asarray(y_n, dtype=np.float64)
    stages: List[np.ndarray] = []
    for i in range(tab.s):
        x = y_n
        for j in range(i):
            if tab.A[i, j] != 0.0:
                x = x + h * tab.A[i, j] * stages[j]
        k = np.asarray(f(x), dtype=np.float64)
        if not np.all(np.isfinite(k)):
            raise NumericalOverflowError(f"{tab.name}: non-finite value in stage {i}", stage=i)
        stages.append(k)
    increment = sum(tab.b[i] * stages[i] for i in range(tab.s))
    y_next = y_n + h * increment
    if not np.all(np.isfinite(y_next)):
        raise NumericalOverflowError(f"{tab.name}: non-finite step result", stage=tab.s - 1)
    return y_next


# =============================================================================
# TRAJECTORIES
# =============================================================================

@dataclass(eq=False)
class Trajectory:
    """
    States sampled on a uniform grid t_n = t0 + n h.

    Parameters
    ----------
    t0 : float
        Initial time
    h : float
        Sample spacing
    states : np.ndarray
        Array of shape (N + 1, dim)
    system_name : str
        Name of the generating system
    solver_tol : Optional[float]
        Tolerance the samples were produced with, if known
    """

    t0: float
    h: float
    states: np.ndarray
    system_name: str
    solver_tol: Optional[float] = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if not self.h > 0:
            raise InvalidArgumentError(f"sample spacing must be positive, got {self.h}")
        if self.states.ndim != 2:
            raise InvalidArgumentError(f"states must be a 2-D array, got shape {self.states.shape}")
        self.t0 = float(self.t0)
        self.h = float(self.h)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.states.shape[0])


def trajectory_to_dict(trajectory: Trajectory) -> Dict[str, Any]:
    """
    Sidecar metadata of a trajectory file.

    Parameters
    ----------
    trajectory : Trajectory
        The trajectory

    Returns
    -------
    Dict[str, Any]
        ``{system, y0, h, N, solver_tol, t0}``
    """
    return {
        "system": trajectory.system_name,
        "y0": [float(x) for x in trajectory.states[0]],
        "h": trajectory.h,
        "N": trajectory.n_steps,
        "solver_tol": trajectory.solver_tol,
        "t0": trajectory.t0,
    }


def save_trajectory(trajectory: Trajectory, csv_path: Union[str, Path]) -> Tuple[Path, Path]:
    """
    Write a trajectory as CSV plus a JSON metadata sidecar.

    The CSV has the header ``t,y1,...,yn`` and one row per sample with
    17-significant-digit floats; the sidecar sits next to it with a ``.json``
    suffix.

    Returns
    -------
    Tuple[Path, Path]
        Paths of the CSV and JSON files
    """
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(["t"] + [f"y{i + 1}" for i in range(trajectory.dim)])
    table = np.column_stack([trajectory.times, trajectory.states])
    np.savetxt(csv_path, table, fmt="%.17g", delimiter=",", header=header, comments="")

    json_path = csv_path.with_suffix(".json")
    json_path.write_text(json.dumps(trajectory_to_dict(trajectory), indent=2) + "\n")
    return csv_path, json_path


def load_trajectory(csv_path: Union[str, Path]) -> Trajectory:
    """
    Read a trajectory written by :func:`save_trajectory`.

    Raises
    ------
    FileNotFoundError
        If the CSV or its sidecar is missing
    InvalidArgumentError
        If the file contents disagree with the sidecar
    """
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[0] != meta["N"] + 1:
        raise InvalidArgumentError(
            f"{csv_path}: expected {meta['N'] + 1} rows, found {table.shape[0]}"
        )
    trajectory = Trajectory(
        t0=meta.get("t0", 0.0),
        h=meta["h"],
        states=table[:, 1:],
        system_name=meta["system"],
        solver_tol=meta.get("solver_tol"),
    )
    if not np.allclose(table[:, 0], trajectory.times, rtol=0.0, atol=1e-9 * max(1.0, abs(trajectory.times[-1]))):
        raise InvalidArgumentError(f"{csv_path}: time column is not the uniform grid with h={meta['h']}")
    return trajectory


# =============================================================================
# REFERENCE SOLUTIONS
# =============================================================================

def integrate_field(
    f: VectorField,
    y0,
    h: float,
    n_steps: int,
    t0: float = 0.0,
    tol: float = DEFAULT_SOLVER_TOL,
    blowup_norm: Optional[float] = None,
) -> np.ndarray:
    """
    Sample the flow of an autonomous field on a uniform grid with DOP853.

    Each interval [t_n, t_{n+1}] is integrated separately so that adaptive steps
    land exactly on the sample times; no dense-output interpolation is involved.

    Parameters
    ----------
    f : VectorField
        Right-hand side
    y0 : array_like
        Initial state
    h : float
        Sample spacing
    n_steps : int
        Number of intervals
    t0 : float
        Initial time
    tol : float
        Relative and absolute tolerance of the embedded pair
    blowup_norm : Optional[float]
        If given, stop with a DivergenceError once the state norm exceeds it

    Returns
    -------
    np.ndarray
        Array of shape (n_steps + 1, dim)

    Raises
    ------
    StiffnessError
        If the solver's step size underflows
    DivergenceError
        If ``blowup_norm`` is exceeded
    """
    y0 = np.asarray(y0, dtype=np.float64)
    states = np.empty((n_steps + 1, y0.shape[0]))
    states[0] = y0

    def rhs(t, y):
        return f(y)

    for n in range(n_steps):
        t_start = t0 + n * h
        t_stop = t0 + (n + 1) * h
        solution = solve_ivp(rhs, (t_start, t_stop), states[n], method="DOP853", rtol=tol, atol=tol)
        if not solution.success:
            t_reached = float(solution.t[-1]) if solution.t.size else t_start
            raise StiffnessError(f"solver failed at t={t_reached:.6g}: {solution.message}", t_reached=t_reached)
        y_next = solution.y[:, -1]
        if not np.all(np.isfinite(y_next)):
            raise NumericalOverflowError(f"non-finite state at sample {n + 1}")
        if blowup_norm is not None:
            norm = float(np.linalg.norm(y_next))
            if norm > blowup_norm:
                raise DivergenceError(
                    f"state norm {norm:.3g} exceeded {blowup_norm:.3g} at sample {n + 1}",
                    step=n + 1,
                    norm=norm,
                )
        states[n + 1] = y_next
    return states


def energy_drift(system, trajectory: Trajectory) -> float:
    """Max |H(y_n) - H(y_0)| along a trajectory."""
    energies = np.array([system.hamiltonian(y) for y in trajectory.states], dtype=np.float64)
    return float(np.max(np.abs(energies - energies[0])))


def grid_steps(t_end: float, h: float) -> int:
    if not h > 0:
        raise InvalidArgumentError(f"sample spacing must be positive, got {h}")
    if not t_end > 0:
        raise InvalidArgumentError(f"t_end must be positive, got {t_end}")
    n = int(round(t_end / h))
    if n < 1 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        raise InvalidArgumentError(f"t_end={t_end} is not a positive multiple of h={h}")
    return n


def reference_solve(
    system,
    y0,
    t_end: float,
    sample_h: float,
    tol: float = DEFAULT_SOLVER_TOL,
) -> Trajectory:
    """
    High-accuracy samples of the true flow at t_n = n * sample_h.

    Parameters
    ----------
    system : HamiltonianSystem
        Any object exposing ``vector_field(y)``, ``dim`` and ``name``; if it
        also has ``hamiltonian(y)`` the energy drift is logged
    y0 : array_like
        Initial state
    t_end : float
        Final time, a positive multiple of ``sample_h``
    sample_h : float
        Sample spacing
    tol : float
        Solver tolerance

    Returns
    -------
    Trajectory
        The sampled solution

    Raises
    ------
    InvalidArgumentError
        If the grid is inconsistent or y0 has the wrong length
    StiffnessError
        If the solver's step size underflows
    """
    n_steps = grid_steps(t_end, sample_h)
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.shape != (system.dim,):
        raise InvalidArgumentError(f"initial value must have length {system.dim}, got shape {y0.shape}")

    name = getattr(system.name, "value", system.name)
    logger.debug(f"Reference solve for {name}: t_end={t_end}, h={sample_h}, tol={tol}")
    states = integrate_field(system.vector_field, y0, sample_h, n_steps, tol=tol)
    trajectory = Trajectory(t0=0.0, h=sample_h, states=states, system_name=str(name), solver_tol=tol)

    if hasattr(system, "hamiltonian"):
        drift = energy_drift(system, trajectory)
        if drift > ENERGY_DRIFT_GATE:
            logger.warning(f"Energy drift {drift:.3e} for {name} exceeds {ENERGY_DRIFT_GATE:.0e}")
        else:
            logger.debug(f"Energy drift {drift:.3e} for {name}")
    return trajectory


# =============================================================================
# CONVERGENCE ORDER
# =============================================================================

class OrderTarget(str, Enum):
    """What the step result is compared against."""

    EXACT_FLOW = "vs_exact_flow"
    FORWARD_STEP = "vs_forward_step"


def injected_map(tab: MirkTableau) -> OneStepMap:
    """One-step map evaluating ``tab`` under inverse injection."""

    def step(f: VectorField, y_n, y_np1, h: float) -> np.ndarray:
        return mirk_injected_step(tab, f, y_n, y_np1, h)

    step.__name__ = f"{tab.name}_injected"
    return step


def forward_map(tab: MirkTableau, tol: float = DEFAULT_FIXED_POINT_TOL) -> OneStepMap:
    """One-step map solving ``tab`` as an implicit forward method."""

    def step(f: VectorField, y_n, y_np1, h: float) -> np.ndarray:
        return mirk_forward_step(tab, f, y_n, h, tol=tol)

    step.__name__ = f"{tab.name}_forward"
    return step


def explicit_map(tab: ExplicitTableau) -> OneStepMap:
    """One-step map of an explicit method."""

    def step(f: VectorField, y_n, y_np1, h: float) -> np.ndarray:
        return explicit_step(tab, f, y_n, h)

    step.__name__ = f"{tab.name}_explicit"
    return step


def _check_h_list(h_list: Sequence[float]) -> np.ndarray:
    hs = np.asarray(h_list, dtype=np.float64)
    if hs.ndim != 1 or hs.size < 4:
        raise InvalidArgumentError(f"need at least 4 step sizes, got {list(h_list)}")
    if np.any(hs <= 0) or np.any(np.diff(hs) >= 0):
        raise InvalidArgumentError(f"step sizes must be positive and strictly decreasing, got {list(h_list)}")
    return hs


def _check_centers(centers: Sequence[float], hs: np.ndarray) -> np.ndarray:
    cs = np.asarray(centers, dtype=np.float64)
    if cs.ndim != 1 or cs.size < 1:
        raise InvalidArgumentError(f"need at least one step center, got {list(centers)}")
    if np.any(cs < 0.5 * hs[0] - 1e-12):
        raise InvalidArgumentError(f"step centers must be at least h/2 = {0.5 * hs[0]:g}, got {list(centers)}")
    return cs


def _centered_endpoints(
    f: VectorField, y0: np.ndarray, center: float, h: float, solver_tol: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact states at ``center - h/2`` and ``center + h/2`` on the trajectory through y0."""
    start = center - 0.5 * h
    y_start = y0 if start <= 1e-12 else integrate_field(f, y0, start, 1, tol=solver_tol)[1]
    return y_start, integrate_field(f, y_start, h, 1, tol=solver_tol)[1]


def step_errors(
    step_fn: OneStepMap,
    system,
    y0,
    h_list: Sequence[float],
    error_target: OrderTarget = OrderTarget.EXACT_FLOW,
    reference_fn: Optional[OneStepMap] = None,
    horizon: Optional[float] = None,
    solver_tol: float = DEFAULT_SOLVER_TOL,
    centers: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Errors of a one-step map for each step size.

    Without ``horizon`` a single step is measured (local error). It starts at
    ``y0`` unless ``centers`` is given, in which case every step of size h is
    placed symmetrically around each center time on the exact trajectory
    through ``y0`` and the largest error over the centers is kept. Fixing the
    step midpoint leaves only odd powers of h in the local error of a
    symmetric method. With ``horizon`` the map is iterated to that time and
    compared with the exact flow there (global error). Errors are Euclidean norms.

    Raises
    ------
    InvalidArgumentError
        On a bad step-size list, a center below h/2 or an inconsistent
        target/reference combination
    """
    hs = _check_h_list(h_list)
    error_target = OrderTarget(error_target)
    if error_target == OrderTarget.FORWARD_STEP:
        if reference_fn is None:
            raise InvalidArgumentError("vs_forward_step needs a reference_fn")
        if horizon is not None:
            raise InvalidArgumentError("vs_forward_step measures single steps only")
    if centers is not None and horizon is not None:
        raise InvalidArgumentError("step centers apply to single steps only")

    f = system.vector_field
    y0 = np.asarray(y0, dtype=np.float64)
    cs = _check_centers(centers, hs) if centers is not None else None
    errors = np.empty(hs.size)
    for idx, h in enumerate(hs):
        h = float(h)
        if horizon is None:
            if cs is None:
                endpoints = [(y0, reference_solve(system, y0, h, h, tol=solver_tol).states[1])]
            else:
                endpoints = [_centered_endpoints(f, y0, float(c), h, solver_tol) for c in cs]
            local = []
            for y_start, y_exact in endpoints:
                y_step = step_fn(f, y_start, y_exact, h)
                target = y_exact if error_target == OrderTarget.EXACT_FLOW else reference_fn(f, y_start, y_exact, h)
                local.append(np.linalg.norm(y_step - target))
            errors[idx] = max(local)
        else:
            truth = reference_solve(system, y0, horizon, h, tol=solver_tol)
            y = y0
            for n in range(truth.n_steps):
                y = step_fn(f, y, truth.states[n + 1], h)
            errors[idx] = np.linalg.norm(y - truth.states[-1])
        logger.debug(f"{getattr(step_fn, '__name__', 'step')}: h={h:g} error={errors[idx]:.3e}")
    return errors


def estimate_order(
    step_fn: OneStepMap,
    system,
    y0,
    h_list: Sequence[float],
    error_target: OrderTarget = OrderTarget.EXACT_FLOW,
    reference_fn: Optional[OneStepMap] = None,
    horizon: Optional[float] = None,
    solver_tol: float = DEFAULT_SOLVER_TOL,
    centers: Optional[Sequence[float]] = None,
) -> float:
    """
    Least-squares slope of log(error) against log(h).

    Parameters
    ----------
    step_fn : OneStepMap
        The map under test
    system : HamiltonianSystem
        Provides the vector field and the exact flow
    y0 : array_like
        Starting state
    h_list : Sequence[float]
        At least four strictly decreasing step sizes
    error_target : OrderTarget
        Compare against the exact flow or against ``reference_fn``
    reference_fn : Optional[OneStepMap]
        Required for ``vs_forward_step``
    horizon : Optional[float]
        Iterate to this time and measure the global error instead
    solver_tol : float
        Tolerance of the exact-flow reference
    centers : Optional[Sequence[float]]
        Midpoint times of the single steps; each must be at least ``h_list[0] / 2``

    Returns
    -------
    float
        The fitted slope

    Raises
    ------
    UnreliableFitError
        If any error is below the 1e-12 noise floor
    """
    hs = _check_h_list(h_list)
    errors = step_errors(step_fn, system, y0, hs, error_target, reference_fn, horizon, solver_tol, centers)
    for h, error in zip(hs, errors):
        if not error > NOISE_FLOOR:
            raise UnreliableFitError(
                f"error {error:.3e} at h={h:g} is below the noise floor {NOISE_FLOOR:.0e}",
                h=float(h),
                error=float(error),
            )
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)
