from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from mirk_hnn.cli import checkpoint_path, cmd_generate, cmd_train, dataset_path, report_path
from mirk_hnn.errors import NumericalOverflowError
from mirk_hnn.integrators import Trajectory, save_trajectory
from mirk_hnn.model import load_checkpoint


class TestCmdTrain:
    """Unit tests for cmd_train."""

    def test_one_checkpoint_per_method(self, make_config):
        """Test all six methods on the (2, 10) grid give six checkpoints and reports."""
        config = make_config(tableaus=["mirk2", "mirk3", "mirk4", "mirk5", "mirk6", "rk4"])
        cmd_generate(config)

        written = cmd_train(config)

        assert len(written) == 6
        for tableau in config.tableaus:
            ckpt = checkpoint_path(config, tableau, 2.0, 10, 0)
            assert ckpt in written
            _, meta = load_checkpoint(ckpt)
            assert meta["tableau_name"] == tableau
            report = report_path(config, tableau, 2.0, 10, 0)
            assert report.exists()
            assert report.with_name(report.stem + "_loss.csv").exists()

    def test_runs_cover_grid_and_seeds(self, make_config):
        """Test one run per (tableau, grid, seed)."""
        config = make_config(tableaus=["mirk2"], grid=[(2.0, 10), (1.0, 20)], seeds=[0, 1])
        cmd_generate(config)

        written = cmd_train(config)

        assert len(written) == 4

    def test_missing_dataset_names_generate_command(self, make_config):
        """Test a missing dataset gives an actionable message."""
        with pytest.raises(FileNotFoundError) as excinfo:
            cmd_train(make_config())

        assert "mirk-hnn generate" in str(excinfo.value)

    def test_resume_skips_completed_runs(self, make_config):
        """Test a resumed rerun writes nothing new."""
        config = make_config()
        cmd_generate(config)
        cmd_train(config)
        out = config.output_dir
        before = {p: p.stat().st_mtime_ns for p in sorted(Path(out).rglob("*"))}

        written = cmd_train(config, resume=True)

        after = {p: p.stat().st_mtime_ns for p in sorted(Path(out).rglob("*"))}
        assert written == []
        assert after == before

    def test_seed_override(self, make_config):
        """Test --seed-override trains only that seed."""
        config = make_config(tableaus=["mirk2"], seeds=[0, 1, 2])
        cmd_generate(config)

        written = cmd_train(config, seed_override=5)

        assert written == [checkpoint_path(config, "mirk2", 2.0, 10, 5)]

    @patch("mirk_hnn.cli.ProcessPoolExecutor")
    def test_jobs_use_process_pool(self, mock_executor, make_config):
        """Test more than one job dispatches runs to a worker pool."""
        config = make_config()
        cmd_generate(config)
        pool = MagicMock()
        pool.map.return_value = iter(["a", "b"])
        mock_executor.return_value.__enter__.return_value = pool

        written = cmd_train(config, jobs=3)

        mock_executor.assert_called_once_with(max_workers=3)
        assert written == ["a", "b"]
        assert pool.map.call_count == 1

    def test_worker_error_crosses_process_pool(self, make_config):
        """Test a numerical failure inside a worker reaches the caller with its fields."""
        config = make_config()
        states = np.zeros((11, 4))
        states[1] = 1e200
        save_trajectory(
            Trajectory(t0=0.0, h=2.0, states=states, system_name="double_pendulum"),
            dataset_path(config, 2.0, 10),
        )

        with pytest.raises(NumericalOverflowError) as excinfo:
            cmd_train(config, jobs=2)

        assert excinfo.value.transition == 0
