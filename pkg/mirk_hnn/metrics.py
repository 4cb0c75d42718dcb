"""
Post-training evaluation of learned Hamiltonians.

A trained model is rolled out with the same DOP853 sampler that produces the
ground truth, on the refined test grid h_test = h / 20 covering [0, 4 h N].
Errors are mean 2-norm deviations over the interpolation window [0, h N] and
the extrapolation window [h N, 4 h N]; both windows are closed, so t = h N
counts in each.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from mirk_hnn.errors import (
    DivergenceError,
    InvalidArgumentError,
    NumericalOverflowError,
    StiffnessError,
)
from mirk_hnn.hamiltonians import HamiltonianSystem, get_system, hamiltonian_eval
from mirk_hnn.integrators import (
    DEFAULT_SOLVER_TOL,
    Trajectory,
    grid_steps,
    integrate_field,
    reference_solve,
    save_trajectory,
)

logger = logging.getLogger(__name__)

BLOWUP_NORM = 1e6
DEFAULT_TEST_REFINEMENT = 20
DEFAULT_HORIZON_RATIO = 4

RESULT_COLUMNS = ["system", "tableau", "h", "N", "seed", "e_interp", "e_extrap", "e_H"]

Window = Tuple[float, float]


class EvalReport(BaseModel):
    """Errors of one trained model on the test grid."""

    e_interp: float = Field(ge=0)
    e_extrap: float = Field(ge=0)
    e_hamiltonian: float = Field(ge=0)
    h_test: float = Field(gt=0)
    n_test: int = Field(ge=1)
    windows: Dict[str, Window]


class ResultRow(BaseModel):
    """One line of the combined results table."""

    system: str
    tableau: str
    h: float
    N: int
    seed: int
    e_interp: float
    e_extrap: float
    e_H: float


def rollout(
    m,
    y0,
    h_test: float,
    n_steps: int,
    tol: float = DEFAULT_SOLVER_TOL,
    blowup_norm: float = BLOWUP_NORM,
) -> Trajectory:
    """
    Integrate a learned field on the uniform test grid.

    Parameters
    ----------
    m : MlpHamiltonian
        Any model exposing ``vector_field(y)`` and ``dim``
    y0 : array_like
        Initial state
    h_test : float
        Sample spacing
    n_steps : int
        Number of samples after y0
    tol : float
        Solver tolerance
    blowup_norm : float
        Norm beyond which the rollout is declared divergent

    Returns
    -------
    Trajectory
        The rolled out states

    Raises
    ------
    InvalidArgumentError
        If ``h_test`` is not positive or y0 has the wrong length
    DivergenceError
        If the state blows up or the solver gives up
    """
    if not h_test > 0:
        raise InvalidArgumentError(f"h_test must be positive, got {h_test}")
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.shape != (m.dim,):
        raise InvalidArgumentError(f"initial value must have length {m.dim}, got shape {y0.shape}")

    try:
        states = integrate_field(m.vector_field, y0, h_test, n_steps, tol=tol, blowup_norm=blowup_norm)
    except StiffnessError as e:
        step = int(np.floor(e.t_reached / h_test))
        raise DivergenceError(f"rollout stalled near step {step}: {e}", step=step, norm=float("nan")) from e
    except NumericalOverflowError as e:
        raise DivergenceError(f"rollout produced non-finite states: {e}", step=-1, norm=float("inf")) from e
    return Trajectory(t0=0.0, h=h_test, states=states, system_name="learned", solver_tol=tol)


def _check_same_grid(a: Trajectory, b: Trajectory) -> None:
    if a.dim != b.dim:
        raise InvalidArgumentError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.n_steps != b.n_steps or not np.isclose(a.h, b.h, rtol=1e-12, atol=0.0) or a.t0 != b.t0:
        raise InvalidArgumentError(
            f"grid mismatch: (t0={a.t0}, h={a.h}, N={a.n_steps}) vs (t0={b.t0}, h={b.h}, N={b.n_steps})"
        )


def _window_mask(times: np.ndarray, window: Window) -> np.ndarray:
    t_a, t_b = window
    if t_b < t_a:
        raise InvalidArgumentError(f"window end {t_b} precedes its start {t_a}")
    slack = 1e-9 * max(1.0, abs(t_a), abs(t_b))
    mask = (times >= t_a - slack) & (times <= t_b + slack)
    if not mask.any():
        raise InvalidArgumentError(f"no grid point falls in the window [{t_a}, {t_b}]")
    return mask


def flow_error(rollout: Trajectory, truth: Trajectory, window: Window) -> float:
    """
    Mean 2-norm deviation between two trajectories over a closed time window.

    Raises
    ------
    InvalidArgumentError
        If the trajectories do not share their grid and dimension, or the
        window holds no grid point
    """
    _check_same_grid(rollout, truth)
    mask = _window_mask(truth.times, window)
    deviations = np.linalg.norm(rollout.states[mask] - truth.states[mask], axis=1)
    return float(np.mean(deviations))


def hamiltonian_error(
    m,
    truth: Trajectory,
    system: Optional[HamiltonianSystem] = None,
    window: Optional[Window] = None,
) -> float:
    """
    Mean absolute deviation of H - H_theta around its mean along the truth.

    Only the gradient of H_theta is trained, so the constant offset is removed
    before averaging.

    Parameters
    ----------
    m : MlpHamiltonian
        Any model exposing ``hamiltonian(y)`` for a stack of states
    truth : Trajectory
        Reference samples
    system : Optional[HamiltonianSystem]
        True system; looked up from ``truth.system_name`` if omitted
    window : Optional[Window]
        Restrict the average to a time window; all samples by default

    Returns
    -------
    float
        The error
    """
    if system is None:
        system = get_system(truth.system_name)
    states = truth.states
    if window is not None:
        states = states[_window_mask(truth.times, window)]
    delta = np.asarray(hamiltonian_eval(system, states)) - np.asarray(m.hamiltonian(states))
    return float(np.mean(np.abs(delta - np.mean(delta))))


def evaluate_model(
    m,
    system: HamiltonianSystem,
    y0,
    h: float,
    n_samples: int,
    test_refinement: int = DEFAULT_TEST_REFINEMENT,
    horizon_ratio: float = DEFAULT_HORIZON_RATIO,
    solver_tol: float = DEFAULT_SOLVER_TOL,
    rollout_tol: float = DEFAULT_SOLVER_TOL,
    truth: Optional[Trajectory] = None,
    rollout_path: Optional[Union[str, Path]] = None,
) -> EvalReport:
    """
    Roll out a model and measure it against the true flow.

    Parameters
    ----------
    m : MlpHamiltonian
        The trained model (or an oracle stub with the same interface)
    system : HamiltonianSystem
        The true system
    y0 : array_like
        Initial value of the training trajectory
    h, n_samples : float, int
        Training grid; the interpolation window is [0, h * n_samples]
    test_refinement : int
        h_test = h / test_refinement
    horizon_ratio : float
        The test horizon is horizon_ratio * h * n_samples
    solver_tol, rollout_tol : float
        Tolerances of the truth and rollout solves
    truth : Optional[Trajectory]
        Precomputed truth on the test grid, shared between models
    rollout_path : Optional[Union[str, Path]]
        Where to write the rollout, if anywhere

    Returns
    -------
    EvalReport
        Interpolation, extrapolation and Hamiltonian errors

    Raises
    ------
    DivergenceError
        If the rollout blows up
    """
    h_test = h / test_refinement
    t_interp = h * n_samples
    t_end = horizon_ratio * t_interp
    n_test = grid_steps(t_end, h_test)
    if truth is None:
        truth = reference_solve(system, y0, t_end, h_test, tol=solver_tol)
    else:
        if truth.n_steps != n_test or not np.isclose(truth.h, h_test, rtol=1e-12, atol=0.0):
            raise InvalidArgumentError(f"supplied truth does not cover {n_test} steps of {h_test}")

    trajectory = rollout(m, y0, h_test, n_test, tol=rollout_tol)
    if rollout_path is not None:
        save_rollout(trajectory, rollout_path)

    windows = {"interp": (0.0, t_interp), "extrap": (t_interp, t_end)}
    report = EvalReport(
        e_interp=flow_error(trajectory, truth, windows["interp"]),
        e_extrap=flow_error(trajectory, truth, windows["extrap"]),
        e_hamiltonian=hamiltonian_error(m, truth, system),
        h_test=h_test,
        n_test=n_test,
        windows=windows,
    )
    logger.debug(
        f"e_interp={report.e_interp:.3e} e_extrap={report.e_extrap:.3e} e_H={report.e_hamiltonian:.3e}"
    )
    return report


def save_rollout(trajectory: Trajectory, csv_path: Union[str, Path]) -> Path:
    """Write a rollout in the trajectory CSV format."""
    csv_path, _ = save_trajectory(trajectory, csv_path)
    return csv_path


def write_results_table(rows: Iterable[ResultRow], path: Union[str, Path]) -> Path:
    """
    Write the combined results CSV, one row per (system, tableau, h, N, seed).

    Floats are written with ``repr`` so identical runs give identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([
                row.system, row.tableau, repr(row.h), row.N, row.seed,
                repr(row.e_interp), repr(row.e_extrap), repr(row.e_H),
            ])
            count += 1
    logger.info(f"Wrote {count} result rows to {path}")
    return path


def read_results_table(path: Union[str, Path]) -> List[ResultRow]:
    with open(path, newline="") as handle:
        return [ResultRow(**record) for record in csv.DictReader(handle)]


def median_by_tableau(rows: Sequence[ResultRow], field: str = "e_interp") -> Dict[str, float]:
    """Median of one error column over seeds, keyed by tableau name."""
    grouped: Dict[str, List[float]] = {}
    for row in rows:
        grouped.setdefault(row.tableau, []).append(getattr(row, field))
    return {name: float(np.median(values)) for name, values in grouped.items()}
