"""
Full-batch L-BFGS training of the MIRK interpolation loss.

One epoch is up to ``iterations_per_epoch`` accepted L-BFGS iterations (one by
default; the presets use 20, the inner budget of the PyTorch optimizer). The
optimizer uses the two-loop recursion over at most ``lbfgs_history`` curvature
pairs and a strong-Wolfe line search with cubic-interpolation zoom.
"""

import csv
import hashlib
import logging
import time
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Annotated, Callable, Deque, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mirk_hnn.errors import InvalidArgumentError, NumericalOverflowError
from mirk_hnn.hamiltonians import get_system
from mirk_hnn.integrators import Trajectory, get_tableau
from mirk_hnn.model import (
    MlpHamiltonian,
    default_layer_dims,
    from_param_vector,
    loss_and_param_grad,
    param_vector,
    residual_norms,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]

CURVATURE_EPS = 1e-12


class TerminationReason(str, Enum):
    """Why the optimizer stopped."""

    EPOCHS_EXHAUSTED = "epochs_exhausted"
    GRAD_TOL = "grad_tol"
    LINE_SEARCH_FAILURE = "line_search_failure"


class TrainConfig(BaseModel):
    """
    Configuration of one training run.

    Parameters
    ----------
    system_name : str
        Benchmark system the data comes from
    tableau_name : str
        Method used in the interpolation loss (``mirk2`` ... ``mirk6``, ``rk4``)
    h : float
        Sample spacing of the training data
    n_samples : int
        Number of transitions N
    epochs : int
        Number of epochs
    iterations_per_epoch : int
        Accepted L-BFGS iterations allowed per epoch
    max_evals_per_epoch : int
        Objective evaluations after which an epoch ends early; defaults to
        ``iterations_per_epoch * 5 // 4``
    tolerance_change : float
        An epoch ends early once an iteration changes both the loss and the
        max-norm of the parameters by no more than this
    lbfgs_history : int
        Number of stored curvature pairs
    c1, c2 : float
        Strong-Wolfe constants, 0 < c1 < c2 < 1
    max_line_search_evals : int
        Objective evaluations allowed per line search
    grad_tol : float
        Stop once the max-norm of the gradient is at or below this
    seed : int
        Seed of the parameter initialization
    hidden_layers, width : int
        Network shape; 3 x 100 by default, 2 selects the two-hidden-layer reading
    init_scheme : str
        ``glorot`` or ``zeros``
    """

    model_config = ConfigDict(extra="forbid")

    system_name: str
    tableau_name: str
    h: Annotated[float, Field(gt=0)]
    n_samples: Annotated[int, Field(ge=1)]
    epochs: Annotated[int, Field(ge=1)] = 100
    iterations_per_epoch: Annotated[int, Field(ge=1)] = 1
    max_evals_per_epoch: Optional[Annotated[int, Field(ge=1)]] = None
    tolerance_change: Annotated[float, Field(ge=0)] = 1e-12
    lbfgs_history: Annotated[int, Field(ge=1)] = 50
    line_search: Literal["strong_wolfe"] = "strong_wolfe"
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search_evals: Annotated[int, Field(ge=1)] = 20
    grad_tol: Annotated[float, Field(ge=0)] = 1e-10
    seed: int = 0
    hidden_layers: Annotated[int, Field(ge=1)] = 3
    width: Annotated[int, Field(ge=1)] = 100
    init_scheme: Literal["glorot", "zeros"] = "glorot"

    @model_validator(mode="after")
    def _check_consistency(self) -> "TrainConfig":
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_evals_per_epoch is None:
            self.max_evals_per_epoch = max(1, self.iterations_per_epoch * 5 // 4)
        get_system(self.system_name)
        get_tableau(self.tableau_name)
        return self

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump."""
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


class TrainReport(BaseModel):
    """Outcome of an optimization run."""

    loss_history: List[float]
    grad_norm_history: List[float]
    final_grad_norm: float
    wall_time: float
    termination_reason: TerminationReason
    epochs_run: int
    function_evals: int
    iterations_run: int = 0
    tableau_name: Optional[str] = None
    seed: Optional[int] = None
    final_rms_residual: Optional[float] = None
    final_mean_residual_norm: Optional[float] = None


# =============================================================================
# LINE SEARCH
# =============================================================================

def _cubic_interpolate(x1, f1, g1, x2, f2, g2, bounds=None) -> float:
    """Minimizer of the cubic through two points with slopes, clamped to ``bounds``."""
    if bounds is not None:
        lo, hi = bounds
    else:
        lo, hi = (x1, x2) if x1 <= x2 else (x2, x1)
    if not all(np.isfinite(v) for v in (x1, f1, g1, x2, f2, g2)) or x1 == x2:
        return 0.5 * (lo + hi)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_square = d1**2 - g1 * g2
    if d2_square >= 0:
        d2 = np.sqrt(d2_square)
        if x1 <= x2:
            t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        else:
            t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        if np.isfinite(t):
            return float(min(max(t, lo), hi))
    return 0.5 * (lo + hi)


def _strong_wolfe(
    phi: Callable[[float], Tuple[float, np.ndarray]],
    direction: np.ndarray,
    t: float,
    f: float,
    g: np.ndarray,
    gtd: float,
    c1: float,
    c2: float,
    max_evals: int,
    tolerance_change: float = 1e-12,
) -> Tuple[float, np.ndarray, float, int]:
    """
    Strong-Wolfe line search: bracketing followed by zoom.

    Non-finite trial values count as failed sufficient-decrease tests, which
    makes the search backtrack.

    Returns
    -------
    Tuple[float, np.ndarray, float, int]
        Value, gradient and step of the best point found, and the number of
        objective evaluations. A step of 0 means nothing better than the start.
    """
    d_norm = float(np.max(np.abs(direction)))
    f_new, g_new = phi(t)
    evals = 1
    gtd_new = float(g_new @ direction)

    t_prev, f_prev, g_prev, gtd_prev = 0.0, f, g, gtd
    done = False
    ls_iter = 0
    while ls_iter < max_evals:
        if not np.isfinite(f_new) or f_new > f + c1 * t * gtd or (ls_iter > 1 and f_new >= f_prev):
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd:
            bracket, bracket_f, bracket_g, bracket_gtd = [t], [f_new], [g_new], [gtd_new]
            done = True
            break
        if gtd_new >= 0:
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break

        min_step = t + 0.01 * (t - t_prev)
        max_step = t * 10.0
        previous = t
        t = _cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, bounds=(min_step, max_step))
        t_prev, f_prev, g_prev, gtd_prev = previous, f_new, g_new, gtd_new
        f_new, g_new = phi(t)
        evals += 1
        gtd_new = float(g_new @ direction)
        ls_iter += 1
    else:
        bracket = [0.0, t]
        bracket_f = [f, f_new]
        bracket_g = [g, g_new]
        bracket_gtd = [gtd, gtd_new]

    def _order(values):
        return (0, 1) if values[0] <= values[-1] or not np.isfinite(values[-1]) else (1, 0)

    low, high = _order(bracket_f)
    insufficient_progress = False
    while not done and ls_iter < max_evals:
        if abs(bracket[1] - bracket[0]) * d_norm < tolerance_change:
            break
        t = _cubic_interpolate(
            bracket[0], bracket_f[0], bracket_gtd[0],
            bracket[1], bracket_f[1], bracket_gtd[1],
        )
        # keep trial points away from the bracket ends
        eps = 0.1 * (max(bracket) - min(bracket))
        if min(max(bracket) - t, t - min(bracket)) < eps:
            if insufficient_progress or t >= max(bracket) or t <= min(bracket):
                if abs(t - max(bracket)) < abs(t - min(bracket)):
                    t = max(bracket) - eps
                else:
                    t = min(bracket) + eps
                insufficient_progress = False
            else:
                insufficient_progress = True
        else:
            insufficient_progress = False

        f_new, g_new = phi(t)
        evals += 1
        gtd_new = float(g_new @ direction)
        ls_iter += 1

        if not np.isfinite(f_new) or f_new > f + c1 * t * gtd or f_new >= bracket_f[low]:
            bracket[high], bracket_f[high], bracket_g[high], bracket_gtd[high] = t, f_new, g_new, gtd_new
            low, high = _order(bracket_f)
        else:
            if abs(gtd_new) <= -c2 * gtd:
                done = True
            elif gtd_new * (bracket[high] - bracket[low]) >= 0:
                bracket[high], bracket_f[high] = bracket[low], bracket_f[low]
                bracket_g[high], bracket_gtd[high] = bracket_g[low], bracket_gtd[low]
            bracket[low], bracket_f[low], bracket_g[low], bracket_gtd[low] = t, f_new, g_new, gtd_new

    return bracket_f[low], bracket_g[low], bracket[low], evals


def _two_loop(
    g: np.ndarray,
    s_hist: Deque[np.ndarray],
    y_hist: Deque[np.ndarray],
    rho_hist: Deque[float],
) -> np.ndarray:
    """L-BFGS search direction -H_k g from the stored pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        alpha = rho * float(s @ q)
        q -= alpha * y
        alphas.append(alpha)
    if s_hist:
        gamma = float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
        q *= gamma
    for (s, y, rho), alpha in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        beta = rho * float(y @ q)
        q += (alpha - beta) * s
    return -q


def lbfgs_minimize(objective: Objective, x0, cfg: TrainConfig) -> Tuple[np.ndarray, TrainReport]:
    """
    Minimize a smooth objective with L-BFGS and a strong-Wolfe line search.

    Each epoch runs up to ``cfg.iterations_per_epoch`` accepted iterations and
    ends early once ``cfg.max_evals_per_epoch`` objective evaluations are spent,
    the gradient is below ``grad_tol`` or the loss and the step both stall
    below ``tolerance_change``. Curvature pairs carry over between epochs.

    Parameters
    ----------
    objective : Objective
        Maps a parameter vector to ``(value, gradient)``
    x0 : array_like
        Starting point
    cfg : TrainConfig
        Supplies epochs, iterations per epoch, history length, Wolfe constants,
        evaluation budgets and tolerances

    Returns
    -------
    Tuple[np.ndarray, TrainReport]
        Final point and report; ``loss_history[0]`` is the value at ``x0`` and
        entry k the value after epoch k

    Raises
    ------
    NumericalOverflowError
        If the objective is not finite at ``x0``
    """
    start = time.perf_counter()
    x = np.array(x0, dtype=np.float64)
    f, g = objective(x)
    f, g = float(f), np.asarray(g, dtype=np.float64)
    evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalOverflowError(f"objective is not finite at the starting point (value {f})")

    s_hist: Deque[np.ndarray] = deque(maxlen=cfg.lbfgs_history)
    y_hist: Deque[np.ndarray] = deque(maxlen=cfg.lbfgs_history)
    rho_hist: Deque[float] = deque(maxlen=cfg.lbfgs_history)
    loss_history = [f]
    grad_norm_history = [float(np.max(np.abs(g)))]
    epoch = 0
    iterations = 0

    while True:
        if grad_norm_history[-1] <= cfg.grad_tol:
            reason = TerminationReason.GRAD_TOL
            break
        if epoch >= cfg.epochs:
            reason = TerminationReason.EPOCHS_EXHAUSTED
            break

        accepted = 0
        epoch_evals = 0
        failed = False
        while accepted < cfg.iterations_per_epoch:
            direction = _two_loop(g, s_hist, y_hist, rho_hist)
            gtd = float(g @ direction)
            if not gtd < 0:
                logger.debug(f"Epoch {epoch + 1}: not a descent direction, resetting history")
                s_hist.clear()
                y_hist.clear()
                rho_hist.clear()
                direction = -g
                gtd = float(g @ direction)
            t_init = 1.0 if s_hist else min(1.0, 1.0 / float(np.sum(np.abs(g))))

            def phi(t: float, x=x, direction=direction):
                value, gradient = objective(x + t * direction)
                return float(value), np.asarray(gradient, dtype=np.float64)

            f_new, g_new, t, ls_evals = _strong_wolfe(
                phi, direction, t_init, f, g, gtd, cfg.c1, cfg.c2, cfg.max_line_search_evals
            )
            evals += ls_evals
            epoch_evals += ls_evals
            if t <= 0.0 or not np.isfinite(f_new) or not f_new < f:
                logger.debug(f"Epoch {epoch + 1}: line search found no decrease")
                failed = True
                break

            step = t * direction
            y = g_new - g
            ys = float(y @ step)
            if ys > CURVATURE_EPS:
                s_hist.append(step)
                y_hist.append(y)
                rho_hist.append(1.0 / ys)

            x = x + step
            decrease = f - f_new
            f, g = f_new, g_new
            accepted += 1
            if epoch_evals >= cfg.max_evals_per_epoch or float(np.max(np.abs(g))) <= cfg.grad_tol:
                break
            if decrease <= cfg.tolerance_change and float(np.max(np.abs(step))) <= cfg.tolerance_change:
                break

        if accepted == 0:
            reason = TerminationReason.LINE_SEARCH_FAILURE
            break
        epoch += 1
        iterations += accepted
        loss_history.append(f)
        grad_norm_history.append(float(np.max(np.abs(g))))
        logger.debug(
            f"Epoch {epoch}: loss={f:.6e} grad_norm={grad_norm_history[-1]:.3e} "
            f"iterations={accepted} evals={epoch_evals}"
        )
        if failed:
            reason = TerminationReason.LINE_SEARCH_FAILURE
            break

    report = TrainReport(
        loss_history=loss_history,
        grad_norm_history=grad_norm_history,
        final_grad_norm=grad_norm_history[-1],
        wall_time=time.perf_counter() - start,
        termination_reason=reason,
        epochs_run=epoch,
        iterations_run=iterations,
        function_evals=evals,
    )
    return x, report


# =============================================================================
# TRAINING
# =============================================================================

def _check_dataset(cfg: TrainConfig, data: Trajectory) -> None:
    if data.n_steps != cfg.n_samples:
        raise InvalidArgumentError(f"dataset has {data.n_steps} transitions, config expects {cfg.n_samples}")
    if not np.isclose(data.h, cfg.h, rtol=1e-12, atol=0.0):
        raise InvalidArgumentError(f"dataset spacing h={data.h} does not match config h={cfg.h}")
    if get_system(data.system_name).name != get_system(cfg.system_name).name:
        raise InvalidArgumentError(f"dataset comes from {data.system_name}, config expects {cfg.system_name}")


def train(
    cfg: TrainConfig,
    data: Trajectory,
    checkpoint_path: Optional[Union[str, Path]] = None,
) -> Tuple[MlpHamiltonian, TrainReport]:
    """
    Fit H_theta to a trajectory by minimizing the MIRK interpolation loss.

    Parameters
    ----------
    cfg : TrainConfig
        Run configuration
    data : Trajectory
        Training samples, generated at ``cfg.h`` with ``cfg.n_samples`` transitions
    checkpoint_path : Optional[Union[str, Path]]
        Where to write the final parameters, if anywhere

    Returns
    -------
    Tuple[MlpHamiltonian, TrainReport]
        Trained model and optimizer report

    Raises
    ------
    InvalidArgumentError
        If the dataset does not match the configuration
    NumericalOverflowError
        If the loss is not finite at the initial parameters
    """
    _check_dataset(cfg, data)
    tab = get_tableau(cfg.tableau_name)
    dims = default_layer_dims(data.dim, cfg.hidden_layers, cfg.width)
    if cfg.init_scheme == "glorot":
        initial = MlpHamiltonian.glorot(dims, cfg.seed)
    else:
        initial = MlpHamiltonian.zeros(dims)

    logger.info(
        f"Training {cfg.system_name} with {tab.name}: h={cfg.h}, N={cfg.n_samples}, "
        f"seed={cfg.seed}, {initial.n_params} parameters"
    )

    def objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
        return loss_and_param_grad(from_param_vector(dims, x), data, tab)

    x, report = lbfgs_minimize(objective, param_vector(initial), cfg)
    model = from_param_vector(dims, x, seed=cfg.seed)

    norms = residual_norms(model, data, tab)
    report.tableau_name = tab.name
    report.seed = cfg.seed
    report.final_rms_residual = float(np.sqrt(np.mean(norms**2)))
    report.final_mean_residual_norm = float(np.mean(norms))

    logger.info(
        f"Finished {tab.name} seed={cfg.seed}: loss={report.loss_history[-1]:.3e} "
        f"after {report.epochs_run} epochs ({report.termination_reason.value})"
    )
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, tableau_name=tab.name, train_config_hash=cfg.config_hash())
    return model, report


def save_train_report(
    report: TrainReport,
    json_path: Union[str, Path],
    csv_path: Optional[Union[str, Path]] = None,
) -> None:
    """
    Write a report as JSON and, optionally, its loss history as CSV.

    The CSV has columns ``epoch, loss, grad_norm`` with epoch 0 the starting point.
    """
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report.model_dump_json(indent=2) + "\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "loss", "grad_norm"])
            for epoch, (loss, grad_norm) in enumerate(zip(report.loss_history, report.grad_norm_history)):
                writer.writerow([epoch, repr(loss), repr(grad_norm)])
