import json

import numpy as np
import pytest

from mirk_hnn.errors import InvalidArgumentError
from mirk_hnn.integrators import Trajectory, load_trajectory, save_trajectory, trajectory_to_dict


class TestTrajectoryIO:
    """Unit tests for trajectory CSV and sidecar files."""

    def test_save_writes_header_rows_and_sidecar(self, tmp_path, dp_dataset):
        """Test the CSV layout and the metadata sidecar."""
        csv_path, json_path = save_trajectory(dp_dataset, tmp_path / "dp.csv")

        lines = csv_path.read_text().splitlines()
        assert lines[0] == "t,y1,y2,y3,y4"
        assert len(lines) == dp_dataset.n_steps + 2

        meta = json.loads(json_path.read_text())
        assert meta == trajectory_to_dict(dp_dataset)
        assert meta["N"] == 6
        assert meta["h"] == 0.5
        assert meta["system"] == "double_pendulum"
        assert meta["y0"] == [-0.1, 0.5, -0.3, 0.1]

    def test_load_restores_exact_values(self, tmp_path, dp_dataset):
        """Test 17 significant digits bring every float back bit for bit."""
        csv_path, _ = save_trajectory(dp_dataset, tmp_path / "dp.csv")

        loaded = load_trajectory(csv_path)

        np.testing.assert_array_equal(loaded.states, dp_dataset.states)
        assert loaded.h == dp_dataset.h
        assert loaded.solver_tol == dp_dataset.solver_tol
        assert loaded.system_name == dp_dataset.system_name

    def test_rewrite_is_byte_identical(self, tmp_path, dp_dataset):
        """Test saving the same trajectory twice gives identical bytes."""
        first, _ = save_trajectory(dp_dataset, tmp_path / "a.csv")
        second, _ = save_trajectory(dp_dataset, tmp_path / "b.csv")

        assert first.read_bytes() == second.read_bytes()

    def test_creates_parent_directories(self, tmp_path, dp_dataset):
        """Test missing directories are created."""
        csv_path, _ = save_trajectory(dp_dataset, tmp_path / "nested" / "dir" / "dp.csv")

        assert csv_path.exists()

    def test_missing_sidecar(self, tmp_path, dp_dataset):
        """Test loading without the sidecar fails."""
        csv_path, json_path = save_trajectory(dp_dataset, tmp_path / "dp.csv")
        json_path.unlink()

        with pytest.raises(FileNotFoundError):
            load_trajectory(csv_path)

    def test_row_count_mismatch(self, tmp_path, dp_dataset):
        """Test a truncated CSV is detected."""
        csv_path, _ = save_trajectory(dp_dataset, tmp_path / "dp.csv")
        lines = csv_path.read_text().splitlines()
        csv_path.write_text("\n".join(lines[:-1]) + "\n")

        with pytest.raises(InvalidArgumentError):
            load_trajectory(csv_path)

    def test_trajectory_properties(self):
        """Test n_steps, dim and times of a small trajectory."""
        trajectory = Trajectory(t0=1.0, h=0.25, states=np.zeros((5, 2)), system_name="fput")

        assert trajectory.n_steps == 4
        assert trajectory.dim == 2
        np.testing.assert_allclose(trajectory.times, [1.0, 1.25, 1.5, 1.75, 2.0])

    def test_rejects_non_positive_spacing(self):
        """Test h <= 0 is rejected."""
        with pytest.raises(InvalidArgumentError):
            Trajectory(t0=0.0, h=0.0, states=np.zeros((2, 4)), system_name="fput")
