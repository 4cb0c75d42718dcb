from unittest.mock import patch

import numpy as np

from mirk_hnn.cli import cmd_generate, dataset_path, main
from mirk_hnn.integrators import energy_drift, load_trajectory

from conftest import FPUT_Y0


class TestCmdGenerate:
    """Unit tests for cmd_generate."""

    def test_coarse_preset_grid_has_eleven_rows(self, make_config):
        """Test (h, N) = (2, 10) writes 11 samples plus a header."""
        config = make_config()

        written = cmd_generate(config)

        assert written == [dataset_path(config, 2.0, 10)]
        lines = written[0].read_text().splitlines()
        assert len(lines) == 12
        assert written[0].with_suffix(".json").exists()

    def test_fput_fine_grid(self, make_config):
        """Test FPUT (0.5, 40) gives 41 samples with energy drift below 1e-9."""
        config = make_config(system="fput", initial_value=FPUT_Y0.tolist(), grid=[(0.5, 40)])

        (path,) = cmd_generate(config)

        trajectory = load_trajectory(path)
        assert trajectory.states.shape == (41, 4)
        assert energy_drift(config.get_system(), trajectory) < 1e-9

    def test_one_file_per_grid(self, make_config):
        """Test every (h, N) pair gets its own dataset."""
        config = make_config(grid=[(2.0, 10), (1.0, 20)])

        written = cmd_generate(config)

        assert [p.name for p in written] == ["double_pendulum_h2_N10.csv", "double_pendulum_h1_N20.csv"]

    def test_rerun_is_byte_identical(self, make_config):
        """Test regenerating gives the same bytes."""
        config = make_config()
        (path,) = cmd_generate(config)
        first = path.read_bytes(), path.with_suffix(".json").read_bytes()

        cmd_generate(config)

        assert (path.read_bytes(), path.with_suffix(".json").read_bytes()) == first

    def test_initial_value_is_first_row(self, make_config):
        """Test the dataset starts at the configured initial value."""
        config = make_config()

        (path,) = cmd_generate(config)

        np.testing.assert_array_equal(load_trajectory(path).states[0], config.initial_value)

    @patch("mirk_hnn.cli.save_trajectory")
    def test_unwritable_output_dir_exits_with_validation_code(self, mock_save, make_config, tmp_path):
        """Test a write failure maps to exit code 1."""
        mock_save.side_effect = PermissionError("read-only file system")
        config_file = tmp_path / "config.json"
        config_file.write_text(make_config().model_dump_json())

        assert main(["generate", "--config", str(config_file)]) == 1
