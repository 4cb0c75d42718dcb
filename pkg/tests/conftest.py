import numpy as np
import pytest

from mirk_hnn.hamiltonians import get_system
from mirk_hnn.integrators import reference_solve
from mirk_hnn.model import MlpHamiltonian

DP_Y0 = np.array([-0.1, 0.5, -0.3, 0.1])
FPUT_Y0 = np.array([0.2, 0.4, -0.3, 0.5])


def central_difference(func, x, index, eps):
    """Central finite difference of a scalar function along one coordinate."""
    up, down = x.copy(), x.copy()
    up[index] += eps
    down[index] -= eps
    return (func(up) - func(down)) / (2.0 * eps)


def fd_divergence(field, y, eps=1e-5):
    """Trace of the central-difference Jacobian of a vector field."""
    return sum(central_difference(lambda z: field(z)[i], y, i, eps) for i in range(y.size))


class ZeroFieldSystem:
    """Stub system whose field vanishes, so every step is exact."""

    name = "zero_field"
    dim = 4

    def vector_field(self, y):
        return np.zeros_like(np.asarray(y, dtype=np.float64))


class RotationSystem:
    """Harmonic oscillator H = (q^2 + p^2) / 2 with closed-form flow."""

    name = "rotation"
    dim = 2

    def vector_field(self, y):
        y = np.asarray(y, dtype=np.float64)
        return np.array([y[1], -y[0]])

    def hamiltonian(self, y):
        y = np.asarray(y, dtype=np.float64)
        return 0.5 * (y[..., 0] ** 2 + y[..., 1] ** 2)

    @staticmethod
    def exact(y0, t):
        q0, p0 = y0
        return np.array([q0 * np.cos(t) + p0 * np.sin(t), -q0 * np.sin(t) + p0 * np.cos(t)])


@pytest.fixture
def dp_system():
    return get_system("double_pendulum")


@pytest.fixture
def fput_system():
    return get_system("fput")


@pytest.fixture
def dp_y0():
    return DP_Y0.copy()


@pytest.fixture
def fput_y0():
    return FPUT_Y0.copy()


@pytest.fixture
def small_model():
    """A 4 -> 8 -> 8 -> 1 network with Glorot weights and nonzero biases."""
    model = MlpHamiltonian.glorot([4, 8, 8, 1], seed=0)
    rng = np.random.default_rng(1)
    for b in model.biases:
        b[:] = rng.uniform(-0.3, 0.3, size=b.shape)
    return model


@pytest.fixture
def dp_dataset(dp_system, dp_y0):
    """Double pendulum samples with h = 0.5 and N = 6."""
    return reference_solve(dp_system, dp_y0, 3.0, 0.5)


@pytest.fixture
def make_config(tmp_path):
    """Factory for small double-pendulum experiment configs writing under tmp_path."""
    from mirk_hnn.cli import ExperimentConfig

    def _make(**overrides):
        settings = dict(
            system="double_pendulum",
            initial_value=DP_Y0.tolist(),
            grid=[(2.0, 10)],
            tableaus=["mirk2", "mirk4"],
            seeds=[0],
            output_dir=str(tmp_path / "runs"),
            train={"epochs": 1, "hidden_layers": 1, "width": 6},
        )
        settings.update(overrides)
        return ExperimentConfig(**settings)

    return _make
