"""
Benchmark Hamiltonian systems.

Closed-form energies and hand-derived gradients for the double pendulum and the
Fermi-Pasta-Ulam-Tsingou chain, plus the canonical structure matrix J. States are
ordered y = (q_1, ..., q_d, p_1, ..., p_d). Every function accepts a single state
or a stack of states along the leading axes; the state lives on the last axis.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np

from mirk_hnn.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


class SystemName(str, Enum):
    """Known benchmark systems."""

    DOUBLE_PENDULUM = "double_pendulum"
    FPUT = "fput"


_ALIASES = {
    "dp": SystemName.DOUBLE_PENDULUM,
    "double_pendulum": SystemName.DOUBLE_PENDULUM,
    "doublependulum": SystemName.DOUBLE_PENDULUM,
    "fput": SystemName.FPUT,
    "fpu": SystemName.FPUT,
}

FPUT_DEFAULT_PARAMS = {"omega": 2.0, "m": 1.0}


@dataclass(frozen=True)
class StructureMatrix:
    """
    The canonical symplectic matrix J = [[0, I], [-I, 0]] of size 2d x 2d.

    Parameters
    ----------
    dim_half : int
        Number of position coordinates d
    """

    dim_half: int

    def __post_init__(self):
        if int(self.dim_half) != self.dim_half or self.dim_half < 1:
            raise InvalidArgumentError(f"dim_half must be a positive integer, got {self.dim_half}")

    @property
    def dim(self) -> int:
        return 2 * self.dim_half

    @property
    def matrix(self) -> np.ndarray:
        """Dense 2d x 2d representation."""
        d = self.dim_half
        eye = np.eye(d)
        J = np.zeros((2 * d, 2 * d))
        J[:d, d:] = eye
        J[d:, :d] = -eye
        return J

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Return J v along the last axis without forming J."""
        v = np.asarray(v, dtype=np.float64)
        d = self.dim_half
        return np.concatenate([v[..., d:], -v[..., :d]], axis=-1)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        """Return J^T v = -J v along the last axis."""
        v = np.asarray(v, dtype=np.float64)
        d = self.dim_half
        return np.concatenate([-v[..., d:], v[..., :d]], axis=-1)


@dataclass(frozen=True)
class HamiltonianSystem:
    """
    A benchmark Hamiltonian system with closed-form energy and gradient.

    Parameters
    ----------
    name : SystemName
        Which benchmark this is
    params : Dict[str, float]
        Named constants. The double pendulum takes none; FPUT takes exactly
        ``omega`` and ``m`` with ``m == 1``.
    """

    name: SystemName
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.name == SystemName.DOUBLE_PENDULUM:
            if self.params:
                raise InvalidArgumentError(f"double pendulum takes no parameters, got {sorted(self.params)}")
        elif self.name == SystemName.FPUT:
            if set(self.params) != {"omega", "m"}:
                raise InvalidArgumentError(f"FPUT takes exactly 'omega' and 'm', got {sorted(self.params)}")
            if self.params["m"] != 1:
                raise InvalidArgumentError(f"only the m = 1 FPUT chain is supported, got m = {self.params['m']}")
        else:
            raise InvalidArgumentError(f"Unknown system: {self.name}")

    @property
    def dim(self) -> int:
        return 4

    @property
    def structure(self) -> StructureMatrix:
        return StructureMatrix(self.dim // 2)

    def hamiltonian(self, y: np.ndarray):
        return hamiltonian_eval(self, y)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        return hamiltonian_grad(self, y)

    def vector_field(self, y: np.ndarray) -> np.ndarray:
        return true_vector_field(self, y)


def get_system(name: str, omega: Optional[float] = None) -> HamiltonianSystem:
    """
    Look up a benchmark system by name.

    Parameters
    ----------
    name : str
        ``double_pendulum`` (alias ``dp``) or ``fput``
    omega : Optional[float]
        Override for the FPUT stiff-spring frequency (default 2)

    Returns
    -------
    HamiltonianSystem
        The configured system

    Raises
    ------
    InvalidArgumentError
        If the name is unknown
    """
    key = str(name).strip().lower().replace("-", "_")
    if key not in _ALIASES:
        raise InvalidArgumentError(f"Unknown system '{name}', expected one of {sorted(_ALIASES)}")
    system_name = _ALIASES[key]
    if system_name == SystemName.FPUT:
        params = dict(FPUT_DEFAULT_PARAMS)
        if omega is not None:
            params["omega"] = float(omega)
        return HamiltonianSystem(system_name, params)
    return HamiltonianSystem(system_name)


def _check_state(system: HamiltonianSystem, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 0 or y.shape[-1] != system.dim:
        raise InvalidArgumentError(
            f"{system.name.value} expects states of length {system.dim}, got shape {y.shape}"
        )
    return y


def hamiltonian_eval(system: HamiltonianSystem, y):
    """
    Evaluate the closed-form Hamiltonian H(y).

    Parameters
    ----------
    system : HamiltonianSystem
        The benchmark system
    y : array_like
        State of length ``system.dim`` (or a stack of states)

    Returns
    -------
    float or np.ndarray
        Energy per state

    Raises
    ------
    InvalidArgumentError
        If the state length does not match the system dimension
    """
    y = _check_state(system, y)
    q1, q2, p1, p2 = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    if system.name == SystemName.DOUBLE_PENDULUM:
        delta = q1 - q2
        numerator = 0.5 * p1**2 + p2**2 - p1 * p2 * np.cos(delta)
        denominator = 1.0 + np.sin(delta) ** 2
        value = numerator / denominator - 2.0 * np.cos(q1) - np.cos(q2)
    else:
        omega = system.params["omega"]
        value = (
            0.5 * (p1**2 + p2**2)
            + 0.25 * omega**2 * (q2 - q1) ** 2
            + q1**4
            + q2**4
        )
    return float(value) if np.ndim(value) == 0 else value


def hamiltonian_grad(system: HamiltonianSystem, y) -> np.ndarray:
    """
    Exact gradient of the Hamiltonian with respect to the state.

    Parameters
    ----------
    system : HamiltonianSystem
        The benchmark system
    y : array_like
        State of length ``system.dim`` (or a stack of states)

    Returns
    -------
    np.ndarray
        dH/dy, same shape as ``y``

    Raises
    ------
    InvalidArgumentError
        If the state length does not match the system dimension
    """
    y = _check_state(system, y)
    q1, q2, p1, p2 = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    grad = np.empty_like(y)
    if system.name == SystemName.DOUBLE_PENDULUM:
        delta = q1 - q2
        cos_d, sin_d = np.cos(delta), np.sin(delta)
        numerator = 0.5 * p1**2 + p2**2 - p1 * p2 * cos_d
        denominator = 1.0 + sin_d**2
        # quotient rule in delta = q1 - q2
        d_kinetic = (p1 * p2 * sin_d * denominator - numerator * 2.0 * sin_d * cos_d) / denominator**2
        grad[..., 0] = d_kinetic + 2.0 * np.sin(q1)
        grad[..., 1] = -d_kinetic + np.sin(q2)
        grad[..., 2] = (p1 - p2 * cos_d) / denominator
        grad[..., 3] = (2.0 * p2 - p1 * cos_d) / denominator
    else:
        omega = system.params["omega"]
        spring = 0.5 * omega**2 * (q2 - q1)
        grad[..., 0] = -spring + 4.0 * q1**3
        grad[..., 1] = spring + 4.0 * q2**3
        grad[..., 2] = p1
        grad[..., 3] = p2
    return grad


def true_vector_field(system: HamiltonianSystem, y) -> np.ndarray:
    """Return f(y) = J grad H(y)."""
    return system.structure.apply(hamiltonian_grad(system, y))


class SystemHamiltonian:
    """
    Expose a known system through the learned-model interface.

    Used as an oracle in place of a trained network: rolling out the true field,
    checking gauge invariance with a constant ``offset`` added to the energy, and
    short-circuiting evaluation runs.

    Parameters
    ----------
    system : HamiltonianSystem
        The wrapped benchmark
    offset : float
        Constant added to every energy value
    """

    def __init__(self, system: HamiltonianSystem, offset: float = 0.0):
        self.system = system
        self.offset = float(offset)

    @property
    def dim(self) -> int:
        return self.system.dim

    def hamiltonian(self, y):
        return hamiltonian_eval(self.system, y) + self.offset

    def input_gradient(self, y) -> np.ndarray:
        return hamiltonian_grad(self.system, y)

    def vector_field(self, y) -> np.ndarray:
        return true_vector_field(self.system, y)
