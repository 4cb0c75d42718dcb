#!/usr/bin/env python3
"""
Reproduction checks for mirk-hnn

Runs the headline checks on the shipped presets and prints a pass/fail
summary: order certification of every builtin method, the ordering of median
interpolation errors across methods, the MIRK6 vs MIRK2 gap on the sparsest
double pendulum data and end-to-end determinism.

Usage:
    python check_reproduction.py [--jobs N] [--orders-only] [--work-dir DIR]

Environment Variables:
    MIRK_HNN_LOG_LEVEL: logging level on stderr (default WARNING here)
"""

import argparse
import csv
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Dict, List, Tuple

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    # dotenv is optional - if not available, just use system environment variables
    pass

try:
    from mirk_hnn.cli import (
        ExperimentConfig,
        cmd_evaluate,
        cmd_generate,
        cmd_orders,
        cmd_train,
        load_config,
    )
    from mirk_hnn.metrics import ResultRow, median_by_tableau, read_results_table
except ImportError as e:
    print(f"Error: Could not import required modules: {e}")
    print("Make sure you have installed the package and its dependencies:")
    print("  pip install -e .")
    sys.exit(1)

PRESETS = Path(__file__).resolve().parent / "presets"
ORDERING_TABLEAUS = ["mirk2", "mirk4", "mirk6", "rk4"]


class ReproductionChecker:
    """
    Runs the reproduction checks against a scratch directory.

    Sweep results are cached per preset so the ordering checks and the
    determinism check share one training pass.
    """

    def __init__(self, work_dir: Path, jobs: int):
        self.work_dir = work_dir
        self.jobs = jobs
        self._sweeps: Dict[str, List[ResultRow]] = {}

    def _config(self, preset: str, run: str, **updates) -> ExperimentConfig:
        config = load_config(PRESETS / f"{preset}.json")
        return config.model_copy(update={"output_dir": str(self.work_dir / preset / run), **updates})

    def _pipeline(self, config: ExperimentConfig) -> Path:
        cmd_generate(config)
        cmd_train(config, jobs=self.jobs)
        return cmd_evaluate(config, jobs=self.jobs)

    def _sweep(self, preset: str) -> List[ResultRow]:
        if preset not in self._sweeps:
            print(f"   training {preset} sweep ({', '.join(ORDERING_TABLEAUS)}) ...")
            results = self._pipeline(self._config(preset, "sweep", tableaus=ORDERING_TABLEAUS))
            self._sweeps[preset] = read_results_table(results)
        return self._sweeps[preset]

    @staticmethod
    def _medians(rows: List[ResultRow]) -> Dict[Tuple[float, int], Dict[str, float]]:
        grids = sorted({(row.h, row.N) for row in rows})
        return {grid: median_by_tableau([row for row in rows if (row.h, row.N) == grid]) for grid in grids}

    def check_orders(self, preset: str) -> bool:
        """
        Fit empirical orders for every builtin method.

        Returns
        -------
        bool
            True if every row passes
        """
        print(f"\n🔄 Certifying orders on {preset}...")
        config = self._config(preset, "orders", tableaus=["mirk2", "mirk3", "mirk4", "mirk5", "mirk6", "rk4"])
        path = cmd_orders(config)
        with open(path, newline="") as handle:
            statuses = [row["status"] for row in csv.DictReader(handle)]
        if all(status == "pass" for status in statuses):
            print(f"✅ All {len(statuses)} methods hit their nominal orders")
            return True
        print(f"❌ Order certification failed: {statuses}")
        return False

    def check_ordering(self, preset: str) -> bool:
        """
        Median interpolation errors must order MIRK6 < MIRK4 < MIRK2 and MIRK4 < RK4.

        Returns
        -------
        bool
            True if the ordering holds on every grid
        """
        print(f"\n🔄 Checking error ordering on {preset}...")
        ok = True
        for grid, medians in self._medians(self._sweep(preset)).items():
            line = "  ".join(f"{name}={medians[name]:.2e}" for name in ORDERING_TABLEAUS)
            holds = medians["mirk6"] < medians["mirk4"] < medians["mirk2"] and medians["mirk4"] < medians["rk4"]
            print(f"{'✅' if holds else '❌'} (h, N) = {grid}: {line}")
            ok = ok and holds
        return ok

    def check_sparse_gap(self) -> bool:
        """
        MIRK6 must beat MIRK2 by 10x on the N = 10 double pendulum data.

        Returns
        -------
        bool
            True if the gap is at least 10x
        """
        print("\n🔄 Checking MIRK6 vs MIRK2 on double pendulum, N = 10...")
        medians = self._medians(self._sweep("dp"))[(2.0, 10)]
        ratio = medians["mirk2"] / medians["mirk6"]
        if ratio >= 10:
            print(f"✅ MIRK2 / MIRK6 = {ratio:.1f}")
            return True
        print(f"❌ MIRK2 / MIRK6 = {ratio:.1f}, expected at least 10")
        return False

    def check_determinism(self) -> bool:
        """
        Rerun the double pendulum sweep and compare the results tables byte for byte.

        Returns
        -------
        bool
            True if both runs match
        """
        print("\n🔄 Checking determinism...")
        self._sweep("dp")
        first = self.work_dir / "dp" / "sweep" / "results.csv"
        second = self._pipeline(self._config("dp", "rerun", tableaus=ORDERING_TABLEAUS))
        if first.read_bytes() == second.read_bytes():
            print("✅ Results tables are identical")
            return True
        print(f"❌ {first} and {second} differ")
        return False

    def run_all_checks(self, orders_only: bool = False) -> bool:
        """
        Run all checks and return overall success status.

        Returns
        -------
        bool
            True if all checks pass, False if any check fails
        """
        print("🚀 Starting mirk-hnn reproduction checks")
        print("=" * 50)

        checks = [
            ("Orders (double pendulum)", lambda: self.check_orders("dp")),
            ("Orders (FPUT)", lambda: self.check_orders("fput")),
        ]
        if not orders_only:
            checks += [
                ("Error ordering (double pendulum)", lambda: self.check_ordering("dp")),
                ("Error ordering (FPUT)", lambda: self.check_ordering("fput")),
                ("Sparse data gap", self.check_sparse_gap),
                ("Determinism", self.check_determinism),
            ]

        results = []
        for check_name, check_func in checks:
            try:
                results.append((check_name, check_func()))
            except Exception as e:
                print(f"❌ Check '{check_name}' crashed: {e}")
                results.append((check_name, False))

        print("\n" + "=" * 50)
        print("📊 Check Results Summary:")
        print("=" * 50)

        passed = sum(1 for _, success in results if success)
        for check_name, success in results:
            print(f"{'✅ PASS' if success else '❌ FAIL'} - {check_name}")
        print("-" * 50)
        print(f"Results: {passed}/{len(results)} checks passed")

        if passed == len(results):
            print("🎉 All checks passed!")
            return True
        print("⚠️  Some checks failed. Check the output above for details.")
        return False


def main():
    """
    Main function to run the checks.
    """
    parser = argparse.ArgumentParser(description="Run the mirk-hnn reproduction checks")
    parser.add_argument("--jobs", type=int, default=max(1, (os.cpu_count() or 1) - 1))
    parser.add_argument("--orders-only", action="store_true", help="Only certify method orders (about a minute)")
    parser.add_argument("--work-dir", default="runs/check", help="Scratch directory, wiped first")
    args = parser.parse_args()

    logging.basicConfig(
        level=getattr(logging, os.getenv("MIRK_HNN_LOG_LEVEL", "WARNING").upper(), logging.WARNING),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr
    )

    work_dir = Path(args.work_dir)
    shutil.rmtree(work_dir, ignore_errors=True)
    checker = ReproductionChecker(work_dir, args.jobs)
    sys.exit(0 if checker.run_all_checks(orders_only=args.orders_only) else 1)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\n⚠️  Checks interrupted by user")
        sys.exit(1)
