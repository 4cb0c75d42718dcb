"""
mirk-hnn command line

Runs reproducible experiments from a single JSON config file:

    mirk-hnn generate --config presets/dp.json
    mirk-hnn train    --config presets/dp.json --jobs 4 [--resume] [--seed-override N]
    mirk-hnn evaluate --config presets/dp.json [--strict]
    mirk-hnn orders   --config presets/dp.json

Environment Variables:
    MIRK_HNN_LOG_LEVEL: logging level on stderr (default INFO)

Exit codes are 0 on success, 1 on invalid input and 2 on numerical failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from mirk_hnn.errors import (
    DivergenceError,
    InvalidArgumentError,
    NumericalError,
    UnreliableFitError,
)
from mirk_hnn.hamiltonians import SystemName, get_system
from mirk_hnn.integrators import (
    DEFAULT_SOLVER_TOL,
    OrderTarget,
    energy_drift,
    estimate_order,
    explicit_map,
    forward_map,
    get_explicit_tableau,
    get_tableau,
    injected_map,
    load_trajectory,
    reference_solve,
    save_trajectory,
)
from mirk_hnn.metrics import (
    ResultRow,
    evaluate_model,
    write_results_table,
)
from mirk_hnn.model import load_checkpoint
from mirk_hnn.training import TrainConfig, save_train_report, train

# Load environment variables from .env file, if it exists
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

logger = logging.getLogger(__name__)

PRESET_INTERVAL = 20.0
LOG_LEVEL_ENV = "MIRK_HNN_LOG_LEVEL"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

T = TypeVar("T")


# =============================================================================
# CONFIGURATION
# =============================================================================

class TrainOverrides(BaseModel):
    """Optimizer and network settings applied to every training run."""

    model_config = ConfigDict(extra="forbid")

    epochs: Optional[int] = Field(default=None, ge=1)
    iterations_per_epoch: Optional[int] = Field(default=None, ge=1)
    max_evals_per_epoch: Optional[int] = Field(default=None, ge=1)
    tolerance_change: Optional[float] = Field(default=None, ge=0)
    lbfgs_history: Optional[int] = Field(default=None, ge=1)
    c1: Optional[float] = None
    c2: Optional[float] = None
    max_line_search_evals: Optional[int] = Field(default=None, ge=1)
    grad_tol: Optional[float] = Field(default=None, ge=0)
    hidden_layers: Optional[int] = Field(default=None, ge=1)
    width: Optional[int] = Field(default=None, ge=1)
    init_scheme: Optional[str] = None


class OrderSettings(BaseModel):
    """
    Step sizes used by the ``orders`` command.

    ``local_h`` applies to the single-step slopes; when omitted a list suited to
    the system and the order of the method is used. Single steps are centered
    on each of ``local_centers`` along the true trajectory and the largest error
    counts. ``forward_h`` and ``forward_horizon`` define the global-error
    certification. The horizon must avoid times where a global error cancels;
    at 2 the MIRK4 error on the double pendulum does so near h = 0.2.
    """

    model_config = ConfigDict(extra="forbid")

    local_h: Optional[List[float]] = None
    forward_h: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    forward_horizon: float = Field(default=1.6, gt=0)
    local_centers: List[float] = Field(default_factory=lambda: [0.25 * k for k in range(1, 9)], min_length=1)


class ExperimentConfig(BaseModel):
    """
    One experiment: a system, its initial value, the (h, N) grids, the methods
    and seeds to train, and where to put the results.
    """

    model_config = ConfigDict(extra="forbid")

    system: str
    initial_value: List[float]
    grid: List[Tuple[float, int]]
    tableaus: List[str]
    seeds: List[int] = Field(default_factory=lambda: [0])
    output_dir: str
    omega: Optional[float] = None
    train: TrainOverrides = Field(default_factory=TrainOverrides)
    orders: OrderSettings = Field(default_factory=OrderSettings)
    solver_tol: float = Field(default=DEFAULT_SOLVER_TOL, gt=0)
    test_refinement: int = Field(default=20, ge=1)
    horizon_ratio: float = Field(default=4.0, gt=0)
    rollout_tol: float = Field(default=DEFAULT_SOLVER_TOL, gt=0)

    @field_validator("tableaus")
    @classmethod
    def _check_tableaus(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one tableau is required")
        for name in value:
            get_tableau(name)
        return value

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one seed is required")
        return value

    @model_validator(mode="after")
    def _check_experiment(self) -> "ExperimentConfig":
        system = get_system(self.system, self.omega)
        if len(self.initial_value) != system.dim:
            raise ValueError(f"initial_value must have {system.dim} entries, got {len(self.initial_value)}")
        if not self.grid:
            raise ValueError("grid must hold at least one (h, N) pair")
        for h, n in self.grid:
            if not h > 0 or n < 1:
                raise ValueError(f"grid entries need h > 0 and N >= 1, got ({h}, {n})")
            if not np.isclose(h * n, PRESET_INTERVAL):
                logger.warning(f"Grid ({h}, {n}) covers [0, {h * n:g}], not the usual [0, {PRESET_INTERVAL:g}]")
        return self

    def get_system(self):
        return get_system(self.system, self.omega)

    @property
    def system_key(self) -> str:
        return self.get_system().name.value

    def train_config(self, tableau: str, h: float, n_samples: int, seed: int) -> TrainConfig:
        """Full training configuration of one run."""
        return TrainConfig(
            system_name=self.system_key,
            tableau_name=tableau,
            h=h,
            n_samples=n_samples,
            seed=seed,
            **self.train.model_dump(exclude_none=True),
        )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read an experiment config from JSON.

    Raises
    ------
    FileNotFoundError
        If the file does not exist
    pydantic.ValidationError
        If the contents are invalid
    """
    return ExperimentConfig.model_validate_json(Path(path).read_text())


def dump_config(config: ExperimentConfig) -> Dict[str, Any]:
    """Serialize a config back to the JSON-compatible form it was read from."""
    return config.model_dump(mode="json", exclude_unset=True)


# =============================================================================
# FILE LAYOUT
# =============================================================================

def _run_stem(tableau: str, h: float, n_samples: int, seed: int) -> str:
    return f"{tableau}_h{h:g}_N{n_samples}_seed{seed}"


def dataset_path(config: ExperimentConfig, h: float, n_samples: int) -> Path:
    return Path(config.output_dir) / "data" / f"{config.system_key}_h{h:g}_N{n_samples}.csv"


def checkpoint_path(config: ExperimentConfig, tableau: str, h: float, n_samples: int, seed: int) -> Path:
    return Path(config.output_dir) / "checkpoints" / f"{_run_stem(tableau, h, n_samples, seed)}.json"


def report_path(config: ExperimentConfig, tableau: str, h: float, n_samples: int, seed: int) -> Path:
    return Path(config.output_dir) / "reports" / f"{_run_stem(tableau, h, n_samples, seed)}.json"


def _runs(config: ExperimentConfig, seeds: Sequence[int]) -> List[Tuple[str, float, int, int]]:
    return [
        (tableau, float(h), int(n), int(seed))
        for h, n in config.grid
        for tableau in config.tableaus
        for seed in seeds
    ]


def _seeds(config: ExperimentConfig, seed_override: Optional[int]) -> List[int]:
    return [seed_override] if seed_override is not None else list(config.seeds)


def _map_jobs(func: Callable[..., T], tasks: Sequence[tuple], jobs: int) -> List[T]:
    """Run tasks in order, in a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [func(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, *zip(*tasks)))


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_generate(config: ExperimentConfig) -> List[Path]:
    """
    Write one training dataset per (h, N) grid.

    Each dataset is the true flow from the configured initial value sampled at
    t_n = n h, n = 0..N, as CSV plus a JSON sidecar.

    Returns
    -------
    List[Path]
        The CSV files written
    """
    system = config.get_system()
    written = []
    for h, n_samples in config.grid:
        trajectory = reference_solve(system, config.initial_value, h * n_samples, h, tol=config.solver_tol)
        csv_file, _ = save_trajectory(trajectory, dataset_path(config, h, n_samples))
        drift = energy_drift(system, trajectory)
        logger.info(f"Wrote {trajectory.n_steps + 1} samples to {csv_file} (energy drift {drift:.2e})")
        written.append(csv_file)
    return written


def _train_run(train_cfg: TrainConfig, data_file: Path, ckpt_file: Path, report_file: Path) -> Path:
    data = load_trajectory(data_file)
    _, report = train(train_cfg, data, checkpoint_path=ckpt_file)
    save_train_report(report, report_file, report_file.with_name(report_file.stem + "_loss.csv"))
    return ckpt_file


def cmd_train(
    config: ExperimentConfig,
    jobs: int = 1,
    resume: bool = False,
    seed_override: Optional[int] = None,
) -> List[Path]:
    """
    Train one model per (tableau, grid, seed).

    Parameters
    ----------
    config : ExperimentConfig
        The experiment
    jobs : int
        Number of worker processes
    resume : bool
        Skip runs whose checkpoint already exists
    seed_override : Optional[int]
        Train only this seed

    Returns
    -------
    List[Path]
        Checkpoints written by this invocation

    Raises
    ------
    FileNotFoundError
        If a dataset is missing
    """
    for h, n_samples in config.grid:
        data_file = dataset_path(config, h, n_samples)
        if not data_file.exists():
            raise FileNotFoundError(
                f"Dataset {data_file} not found; run 'mirk-hnn generate --config <config>' first"
            )

    tasks = []
    for tableau, h, n_samples, seed in _runs(config, _seeds(config, seed_override)):
        ckpt_file = checkpoint_path(config, tableau, h, n_samples, seed)
        if resume and ckpt_file.exists():
            logger.info(f"Skipping {ckpt_file.name}: checkpoint exists")
            continue
        tasks.append((
            config.train_config(tableau, h, n_samples, seed),
            dataset_path(config, h, n_samples),
            ckpt_file,
            report_path(config, tableau, h, n_samples, seed),
        ))

    logger.info(f"Training {len(tasks)} runs with {jobs} job(s)")
    return _map_jobs(_train_run, tasks, jobs)


def _evaluate_run(
    config: ExperimentConfig,
    tableau: str,
    h: float,
    n_samples: int,
    seed: int,
    truth,
    strict: bool,
) -> Optional[ResultRow]:
    ckpt_file = checkpoint_path(config, tableau, h, n_samples, seed)
    if not ckpt_file.exists():
        if strict:
            raise FileNotFoundError(f"Checkpoint {ckpt_file} not found")
        logger.warning(f"Skipping {ckpt_file.name}: checkpoint not found")
        return None

    model, _ = load_checkpoint(ckpt_file)
    stem = _run_stem(tableau, h, n_samples, seed)
    out = Path(config.output_dir)
    try:
        report = evaluate_model(
            model,
            config.get_system(),
            config.initial_value,
            h,
            n_samples,
            test_refinement=config.test_refinement,
            horizon_ratio=config.horizon_ratio,
            solver_tol=config.solver_tol,
            rollout_tol=config.rollout_tol,
            truth=truth,
            rollout_path=out / "rollouts" / f"{stem}.csv",
        )
    except DivergenceError as e:
        if strict:
            raise
        logger.warning(f"Skipping {stem}: rollout diverged at step {e.step}")
        return None

    eval_file = out / "eval" / f"{stem}.json"
    eval_file.parent.mkdir(parents=True, exist_ok=True)
    eval_file.write_text(report.model_dump_json(indent=2) + "\n")
    return ResultRow(
        system=config.system_key,
        tableau=tableau,
        h=h,
        N=n_samples,
        seed=seed,
        e_interp=report.e_interp,
        e_extrap=report.e_extrap,
        e_H=report.e_hamiltonian,
    )


def cmd_evaluate(
    config: ExperimentConfig,
    jobs: int = 1,
    strict: bool = False,
    seed_override: Optional[int] = None,
) -> Path:
    """
    Evaluate every trained model and write ``results.csv``.

    The truth on each test grid is solved once and shared by all runs on that
    grid. Missing checkpoints and diverged rollouts are skipped with a warning
    unless ``strict`` is set.

    Returns
    -------
    Path
        The results table
    """
    system = config.get_system()
    seeds = _seeds(config, seed_override)
    rows: List[ResultRow] = []
    for h, n_samples in config.grid:
        h, n_samples = float(h), int(n_samples)
        h_test = h / config.test_refinement
        t_end = config.horizon_ratio * h * n_samples
        truth = reference_solve(system, config.initial_value, t_end, h_test, tol=config.solver_tol)
        tasks = [
            (config, tableau, h, n_samples, seed, truth, strict)
            for tableau in config.tableaus
            for seed in seeds
        ]
        rows.extend(row for row in _map_jobs(_evaluate_run, tasks, jobs) if row is not None)

    return write_results_table(rows, Path(config.output_dir) / "results.csv")


ORDER_COLUMNS = ["tableau", "p", "forward", "injected_vs_flow", "injected_vs_forward", "status", "note"]


def default_local_h(system_key: str, p: int) -> List[float]:
    """Step sizes for single-step slopes that stay above the noise floor."""
    if system_key == SystemName.FPUT.value or p >= 4:
        return [0.25, 0.2, 0.15, 0.1]
    return [0.4, 0.2, 0.1, 0.05]


def _order_row(config: ExperimentConfig, system, name: str) -> Dict[str, Any]:
    tab = get_tableau(name)
    p = tab.p
    explicit = not np.any(tab.v)
    y0 = config.initial_value
    system_key = getattr(system.name, "value", str(system.name))
    local_h = config.orders.local_h or default_local_h(system_key, p)
    row: Dict[str, Any] = {"tableau": tab.name, "p": p, "forward": "", "injected_vs_flow": "",
                           "injected_vs_forward": "", "status": "", "note": ""}
    checks = []
    try:
        step = explicit_map(get_explicit_tableau(name)) if explicit else forward_map(tab)
        forward = estimate_order(
            step, system, y0, config.orders.forward_h,
            horizon=config.orders.forward_horizon, solver_tol=config.solver_tol,
        )
        row["forward"] = f"{forward:.3f}"
        checks.append(p - 0.3 <= forward <= p + 0.5)

        vs_flow = estimate_order(
            injected_map(tab), system, y0, local_h,
            solver_tol=config.solver_tol, centers=config.orders.local_centers,
        )
        row["injected_vs_flow"] = f"{vs_flow:.3f}"
        checks.append(p + 0.7 <= vs_flow <= p + 1.5)

        if explicit:
            row["note"] = "explicit method: injected and forward steps coincide"
        else:
            vs_forward = estimate_order(
                injected_map(tab), system, y0, local_h,
                error_target=OrderTarget.FORWARD_STEP, reference_fn=forward_map(tab),
                solver_tol=config.solver_tol, centers=config.orders.local_centers,
            )
            row["injected_vs_forward"] = f"{vs_forward:.3f}"
            checks.append(vs_forward >= p + 1.5)
    except UnreliableFitError as e:
        logger.warning(f"{tab.name}: unreliable fit ({e})")
        row["status"] = "unreliable"
        row["note"] = str(e)
        return row

    row["status"] = "pass" if all(checks) else "fail"
    return row


def cmd_orders(config: ExperimentConfig) -> Path:
    """
    Fit empirical orders for every configured tableau and write ``orders.csv``.

    Each row holds the forward order (global error at the configured horizon),
    the slope of the injected step against the exact flow and, for implicit
    methods, against the forward-solved step, with pass/fail against the
    nominal order. Degenerate fits are reported as ``unreliable``.

    Returns
    -------
    Path
        The orders table
    """
    system = get_system(config.system, config.omega)
    rows = [_order_row(config, system, name) for name in config.tableaus]

    path = Path(config.output_dir) / "orders.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=ORDER_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    for row in rows:
        print(
            f"{row['tableau']:>6}  p={row['p']}  forward={row['forward'] or '-':>6}  "
            f"vs_flow={row['injected_vs_flow'] or '-':>6}  vs_forward={row['injected_vs_forward'] or '-':>6}  "
            f"{row['status']}"
        )
    logger.info(f"Wrote {len(rows)} order rows to {path}")
    return path


# =============================================================================
# ENTRY POINT
# =============================================================================

def _configure_logging() -> None:
    level = os.getenv(LOG_LEVEL_ENV, "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirk-hnn",
        description="Learn Hamiltonians from trajectory samples with MIRK interpolation residuals",
    )
    parser.add_argument("command", choices=["generate", "train", "evaluate", "orders"])
    parser.add_argument("--config", required=True, help="Experiment config (JSON)")
    parser.add_argument("--jobs", type=int, default=1, help="Worker processes for train/evaluate")
    parser.add_argument("--strict", action="store_true", help="Fail on missing checkpoints or diverged rollouts")
    parser.add_argument("--seed-override", type=int, default=None, help="Run only this seed")
    parser.add_argument("--resume", action="store_true", help="Skip runs whose checkpoint exists")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one command and return the exit code.

    Returns
    -------
    int
        0 on success, 1 on invalid input, 2 on numerical failure
    """
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        logger.error(f"--jobs must be at least 1, got {args.jobs}")
        return EXIT_INVALID

    try:
        config = load_config(args.config)
        if args.command == "generate":
            cmd_generate(config)
        elif args.command == "train":
            cmd_train(config, jobs=args.jobs, resume=args.resume, seed_override=args.seed_override)
        elif args.command == "evaluate":
            cmd_evaluate(config, jobs=args.jobs, strict=args.strict, seed_override=args.seed_override)
        else:
            cmd_orders(config)
    except (InvalidArgumentError, ValidationError, OSError, json.JSONDecodeError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
