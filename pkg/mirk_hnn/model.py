"""
Learnable Hamiltonian: a tanh multilayer perceptron H_theta.

Besides the forward pass this module provides the exact input gradient
(giving the learned field f_theta = J grad H_theta) and the exact parameter
gradient of the MIRK interpolation loss, which differentiates through the
input-gradient sweep and the whole stage recursion by hand-written reverse mode.

Batched arrays put samples on the first axis: inputs have shape (B, n_0).
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from mirk_hnn.errors import InvalidArgumentError, NumericalOverflowError
from mirk_hnn.hamiltonians import StructureMatrix
from mirk_hnn.integrators import MirkTableau, Trajectory, mirk_injected_step

logger = logging.getLogger(__name__)


def default_layer_dims(state_dim: int, hidden_layers: int = 3, width: int = 100) -> List[int]:
    """``[state_dim, width, ..., width, 1]`` with ``hidden_layers`` hidden layers."""
    if hidden_layers < 1 or width < 1:
        raise InvalidArgumentError(f"need at least one hidden layer of positive width, got {hidden_layers} x {width}")
    return [state_dim] + [width] * hidden_layers + [1]


@dataclass(eq=False)
class MlpHamiltonian:
    """
    Scalar network H_theta with tanh hidden layers and a linear output.

    Parameters
    ----------
    layer_dims : List[int]
        ``[2d, n_1, ..., n_k, 1]``
    weights : List[np.ndarray]
        ``weights[l]`` has shape ``(layer_dims[l + 1], layer_dims[l])``
    biases : List[np.ndarray]
        ``biases[l]`` has shape ``(layer_dims[l + 1],)``
    seed : Optional[int]
        Seed the parameters were drawn with, if any
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    seed: Optional[int] = None

    def __post_init__(self):
        self.layer_dims = [int(n) for n in self.layer_dims]
        if len(self.layer_dims) < 3 or self.layer_dims[-1] != 1:
            raise InvalidArgumentError(
                f"layer_dims must have a hidden layer and a scalar output, got {self.layer_dims}"
            )
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InvalidArgumentError(
                f"expected {n_layers} weight matrices and bias vectors, got {len(self.weights)} and {len(self.biases)}"
            )
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != expected or b.shape != (expected[0],):
                raise InvalidArgumentError(
                    f"layer {l}: expected weight {expected} and bias ({expected[0]},), got {w.shape} and {b.shape}"
                )

    @classmethod
    def glorot(cls, layer_dims: Sequence[int], seed: int) -> "MlpHamiltonian":
        """Glorot-uniform weights, zero biases, drawn from ``numpy.random.default_rng(seed)``."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases, seed=seed)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "MlpHamiltonian":
        """The all-zero network, whose field vanishes identically."""
        weights = [np.zeros((n_out, n_in)) for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:])]
        biases = [np.zeros(n_out) for n_out in layer_dims[1:]]
        return cls(list(layer_dims), weights, biases)

    @property
    def dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_params(self) -> int:
        return param_count(self.layer_dims)

    @property
    def structure(self) -> StructureMatrix:
        return StructureMatrix(self.dim // 2)

    def hamiltonian(self, y):
        return model_eval(self, y)

    def input_gradient(self, y) -> np.ndarray:
        return model_input_grad(self, y)

    def vector_field(self, y) -> np.ndarray:
        return model_vector_field(self, y)


# =============================================================================
# PARAMETER VECTORS AND CHECKPOINTS
# =============================================================================

def param_count(layer_dims: Sequence[int]) -> int:
    """Number of weights and biases for the given layer sizes."""
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]))


def param_vector(m: MlpHamiltonian) -> np.ndarray:
    """
    Flatten parameters layer by layer: weights row-major, then biases.

    Returns
    -------
    np.ndarray
        Vector of length ``param_count(m.layer_dims)``
    """
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(m.weights, m.biases)])


def from_param_vector(layer_dims: Sequence[int], x, seed: Optional[int] = None) -> MlpHamiltonian:
    """
    Inverse of :func:`param_vector`.

    Raises
    ------
    InvalidArgumentError
        If the vector length does not match the layer sizes
    """
    x = np.asarray(x, dtype=np.float64)
    expected = param_count(layer_dims)
    if x.shape != (expected,):
        raise InvalidArgumentError(f"expected a parameter vector of length {expected}, got shape {x.shape}")
    weights, biases = [], []
    offset = 0
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(x[offset:offset + n_in * n_out].reshape(n_out, n_in).copy())
        offset += n_in * n_out
        biases.append(x[offset:offset + n_out].copy())
        offset += n_out
    return MlpHamiltonian(list(layer_dims), weights, biases, seed=seed)


def model_to_dict(
    m: MlpHamiltonian,
    tableau_name: Optional[str] = None,
    train_config_hash: Optional[str] = None,
) -> Dict[str, Any]:
    """
    Checkpoint representation of a model.

    Parameters
    ----------
    m : MlpHamiltonian
        The model
    tableau_name : Optional[str]
        Method the model was trained with
    train_config_hash : Optional[str]
        Hash of the training configuration

    Returns
    -------
    Dict[str, Any]
        ``{layer_dims, seed, params, tableau_name, train_config_hash}``
    """
    return {
        "layer_dims": list(m.layer_dims),
        "seed": m.seed,
        "params": [float(x) for x in param_vector(m)],
        "tableau_name": tableau_name,
        "train_config_hash": train_config_hash,
    }


def save_checkpoint(
    m: MlpHamiltonian,
    path: Union[str, Path],
    tableau_name: Optional[str] = None,
    train_config_hash: Optional[str] = None,
) -> Path:
    """Write a model checkpoint as JSON (floats are written in round-trip precision)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(m, tableau_name, train_config_hash)) + "\n")
    logger.debug(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[MlpHamiltonian, Dict[str, Any]]:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    Tuple[MlpHamiltonian, Dict[str, Any]]
        The model and the remaining metadata
    """
    payload = json.loads(Path(path).read_text())
    model = from_param_vector(payload["layer_dims"], payload["params"], seed=payload.get("seed"))
    meta = {k: v for k, v in payload.items() if k != "params"}
    return model, meta


# =============================================================================
# FORWARD AND INPUT-GRADIENT SWEEPS
# =============================================================================

def _as_batch(m: MlpHamiltonian, y) -> Tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 0 or y.shape[-1] != m.dim:
        raise InvalidArgumentError(f"model expects inputs of length {m.dim}, got shape {y.shape}")
    single = y.ndim == 1
    return (y[None, :] if single else y.reshape(-1, m.dim)), single


def _forward(m: MlpHamiltonian, X: np.ndarray) -> List[np.ndarray]:
    """Hidden activations [X, a_1, ..., a_k]."""
    activations = [X]
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        activations.append(np.tanh(activations[-1] @ w.T + b))
    return activations


def _input_sweep(m: MlpHamiltonian, activations: List[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """
    Reverse sweep for dH/dX.

    Returns the gradient together with the sensitivities s_l = dH/da_l
    (s_0 is the gradient) and deltas delta_l = s_l * (1 - a_l^2), indexed by
    hidden layer 1..k (index 0 unused for deltas).
    """
    n_hidden = len(activations) - 1
    batch = activations[0].shape[0]
    sens: List[Optional[np.ndarray]] = [None] * (n_hidden + 1)
    deltas: List[Optional[np.ndarray]] = [None] * (n_hidden + 1)
    sens[n_hidden] = np.broadcast_to(m.weights[-1], (batch, m.weights[-1].shape[1]))
    for l in range(n_hidden, 0, -1):
        deltas[l] = sens[l] * (1.0 - activations[l] ** 2)
        sens[l - 1] = deltas[l] @ m.weights[l - 1]
    return sens[0], sens, deltas


def _input_sweep_vjp(
    m: MlpHamiltonian,
    activations: List[np.ndarray],
    sens: List[np.ndarray],
    deltas: List[np.ndarray],
    cotangent: np.ndarray,
) -> Tuple[List[np.ndarray], List[np.ndarray], np.ndarray]:
    """
    Reverse mode through the forward pass and the input-gradient sweep.

    For Phi = sum_batch <cotangent, dH/dX> this returns dPhi/dW, dPhi/db and
    dPhi/dX (the Hessian of H applied to the cotangent).
    """
    n_hidden = len(activations) - 1
    grad_w = [np.zeros_like(w) for w in m.weights]
    grad_b = [np.zeros_like(b) for b in m.biases]
    act_bar: List[Optional[np.ndarray]] = [None] * (n_hidden + 1)

    # adjoint of the input-gradient sweep, walked from s_0 upwards
    sens_bar = cotangent
    for l in range(1, n_hidden + 1):
        delta_bar = sens_bar @ m.weights[l - 1].T
        grad_w[l - 1] += deltas[l].T @ sens_bar
        sens_bar = delta_bar * (1.0 - activations[l] ** 2)
        act_bar[l] = -2.0 * activations[l] * delta_bar * sens[l]
    grad_w[-1] += sens_bar.sum(axis=0, keepdims=True)

    # adjoint of the forward pass, driven by the activation adjoints
    x_bar = None
    for l in range(n_hidden, 0, -1):
        z_bar = act_bar[l] * (1.0 - activations[l] ** 2)
        grad_w[l - 1] += z_bar.T @ activations[l - 1]
        grad_b[l - 1] += z_bar.sum(axis=0)
        upstream = z_bar @ m.weights[l - 1]
        if l > 1:
            act_bar[l - 1] = act_bar[l - 1] + upstream
        else:
            x_bar = upstream
    return grad_w, grad_b, x_bar


def model_eval(m: MlpHamiltonian, y):
    """
    Evaluate H_theta(y).

    Parameters
    ----------
    m : MlpHamiltonian
        The network
    y : array_like
        A state of length ``layer_dims[0]`` or a stack of states

    Returns
    -------
    float or np.ndarray
        Energy per state

    Raises
    ------
    InvalidArgumentError
        On a shape mismatch
    """
    X, single = _as_batch(m, y)
    hidden = _forward(m, X)[-1]
    H = (hidden @ m.weights[-1].T + m.biases[-1])[:, 0]
    if single:
        return float(H[0])
    return H.reshape(np.shape(y)[:-1])


def model_input_grad(m: MlpHamiltonian, y) -> np.ndarray:
    """Exact gradient of H_theta with respect to its input."""
    X, single = _as_batch(m, y)
    grad, _, _ = _input_sweep(m, _forward(m, X))
    grad = np.array(grad)
    return grad[0] if single else grad.reshape(np.shape(y))


def model_vector_field(m: MlpHamiltonian, y) -> np.ndarray:
    """Learned Hamiltonian field f_theta(y) = J grad H_theta(y)."""
    return m.structure.apply(model_input_grad(m, y))


# =============================================================================
# MIRK INTERPOLATION LOSS
# =============================================================================

def loss_and_param_grad(
    m: MlpHamiltonian,
    dataset: Trajectory,
    tab: MirkTableau,
) -> Tuple[float, np.ndarray]:
    """
    MIRK interpolation loss and its exact gradient with respect to theta.

    The loss is (1/N) sum_n || y(t_{n+1}) - y_hat_{n+1} ||^2 where y_hat is the
    inverse-injected MIRK step with f = f_theta. All N transitions are evaluated
    together, stage by stage. The gradient runs reverse mode through the
    residual, the stage recursion, J, the input-gradient sweep and the forward
    pass, so it contains the mixed second derivatives of H_theta.

    Parameters
    ----------
    m : MlpHamiltonian
        Current network
    dataset : Trajectory
        Samples y(t_0), ..., y(t_N) with spacing ``dataset.h``
    tab : MirkTableau
        Method used for the interpolation condition

    Returns
    -------
    Tuple[float, np.ndarray]
        Loss value and gradient in :func:`param_vector` order

    Raises
    ------
    InvalidArgumentError
        If the dataset has no transition or its dimension differs from the model's
    NumericalOverflowError
        If the loss is not finite; names the first offending transition
    """
    states = dataset.states
    if states.shape[0] < 2:
        raise InvalidArgumentError("dataset needs at least one transition")
    if states.shape[1] != m.dim:
        raise InvalidArgumentError(f"dataset dimension {states.shape[1]} does not match model input {m.dim}")

    h = dataset.h
    J = m.structure
    n_transitions = states.shape[0] - 1
    y_start, y_end = states[:-1], states[1:]
    delta = y_end - y_start

    stages: List[np.ndarray] = []
    caches = []
    for i in range(tab.s):
        X = y_start + tab.v[i] * delta
        for j in range(i):
            if tab.D[i, j] != 0.0:
                X = X + h * tab.D[i, j] * stages[j]
        activations = _forward(m, X)
        grad, sens, deltas = _input_sweep(m, activations)
        stages.append(J.apply(grad))
        caches.append((activations, sens, deltas))

    y_hat = y_start.copy()
    for i in range(tab.s):
        y_hat = y_hat + h * tab.b[i] * stages[i]
    residual = y_end - y_hat
    per_transition = np.sum(residual**2, axis=1)
    bad = np.flatnonzero(~np.isfinite(per_transition))
    if bad.size:
        raise NumericalOverflowError(
            f"non-finite interpolation residual at transition {bad[0]}", transition=int(bad[0])
        )
    loss = float(per_transition.sum() / n_transitions)

    y_hat_bar = -2.0 * residual / n_transitions
    stage_bar = [h * tab.b[i] * y_hat_bar for i in range(tab.s)]
    grad_w = [np.zeros_like(w) for w in m.weights]
    grad_b = [np.zeros_like(b) for b in m.biases]
    for i in range(tab.s - 1, -1, -1):
        activations, sens, deltas = caches[i]
        cotangent = J.apply_transpose(stage_bar[i])
        gw, gb, x_bar = _input_sweep_vjp(m, activations, sens, deltas, cotangent)
        for l in range(len(grad_w)):
            grad_w[l] += gw[l]
            grad_b[l] += gb[l]
        for j in range(i):
            if tab.D[i, j] != 0.0:
                stage_bar[j] = stage_bar[j] + h * tab.D[i, j] * x_bar

    grad = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(grad_w, grad_b)])
    return loss, grad


def residual_norms(m: MlpHamiltonian, dataset: Trajectory, tab: MirkTableau) -> np.ndarray:
    """Unsquared per-transition residuals || y(t_{n+1}) - y_hat_{n+1} ||_2."""
    states = dataset.states
    y_hat = mirk_injected_step(tab, m.vector_field, states[:-1], states[1:], dataset.h)
    return np.linalg.norm(states[1:] - y_hat, axis=1)
