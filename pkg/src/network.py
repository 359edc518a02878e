"""
Feed-forward perceiver mapping a flattened image to a hypervector.

Two ReLU hidden layers and a tanh output layer, with hand-written forward and
backward passes in numpy (float64).
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from src.errors import NonFiniteError

logger = logging.getLogger(__name__)

DEFAULT_LAYER_SIZES: Tuple[int, int, int, int] = (2352, 200, 200, 1000)
PARAMETER_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def layer_shapes(sizes: Sequence[int]) -> List[Tuple[int, ...]]:
    """Parameter shapes in declaration order for the given layer widths."""
    shapes: List[Tuple[int, ...]] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(fan_out, fan_in), (fan_out,)]
    return shapes


def init_scale(fan_in: int) -> float:
    """Target standard deviation of a freshly initialized weight (sqrt(2 / fan_in))."""
    return float(np.sqrt(2.0 / fan_in))


class MlpModel:
    """
    Weights and biases of the ``in -> h1 -> h2 -> out`` network.

    Attributes:
        layer_sizes (Tuple[int, int, int, int]): Input, two hidden and output widths.
        params (List[np.ndarray]): ``[W1, b1, W2, b2, W3, b3]``; ``Wk`` has shape
            ``(fan_out, fan_in)``. Optimizers update these arrays in place.
        init_seed (int): Seed the weights were drawn from.
    """

    def __init__(self, layer_sizes: Sequence[int], params: Sequence[np.ndarray], init_seed: int = 0):
        if len(layer_sizes) != 4:
            raise ValueError(f"expected 4 layer sizes, got {len(layer_sizes)}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.params = [np.array(p, dtype=np.float64) for p in params]
        self.init_seed = int(init_seed)
        for name, p, shape in zip(PARAMETER_NAMES, self.params, self.shapes()):
            if p.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {p.shape}")
        self.check_finite()

    def shapes(self) -> List[Tuple[int, ...]]:
        return layer_shapes(self.layer_sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def check_finite(self) -> None:
        for name, p in zip(PARAMETER_NAMES, self.params):
            if not np.all(np.isfinite(p)):
                raise NonFiniteError(f"parameter {name} contains NaN or Inf")

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes, [p.copy() for p in self.params], self.init_seed)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES) -> "MlpModel":
        """All-zero model; its output is the zero vector for every input."""
        return cls(layer_sizes, [np.zeros(s) for s in layer_shapes(layer_sizes)], init_seed=0)


def init_model(seed: int, layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES) -> MlpModel:
    """
    Draws a fresh model.

    Weights are uniform on ``[-a, a]`` with ``a = sqrt(6 / fan_in)``, giving a
    standard deviation of ``sqrt(2 / fan_in)``; biases start at zero. Layers are
    drawn in order from one PCG64 stream.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    params: List[np.ndarray] = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        params.append(np.zeros(fan_out))
    return MlpModel(layer_sizes, params, init_seed=seed)


@dataclass(frozen=True)
class ForwardTrace:
    """Everything backward needs. Arrays are 1-D for one input, 2-D for a batch."""
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    z3: np.ndarray
    out: np.ndarray


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def forward(model: MlpModel, x: np.ndarray) -> ForwardTrace:
    """
    Runs ``tanh(W3 relu(W2 relu(W1 x + b1) + b2) + b3)``.

    Args:
        model (MlpModel): The network.
        x (np.ndarray): One flattened image ``(in,)`` or a batch ``(n, in)``,
            pixel values in [0, 1].

    Returns:
        ForwardTrace: Pre-activations, activations and output.

    Raises:
        ValueError: If the input width or range is wrong.
        NonFiniteError: If any intermediate value is NaN or Inf.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input width {x.shape[-1]} != model input {model.input_dim}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("input pixels must lie in [0, 1]")

    W1, b1, W2, b2, W3, b3 = model.params
    z1 = x @ W1.T + b1
    h1 = relu(z1)
    z2 = h1 @ W2.T + b2
    h2 = relu(z2)
    z3 = h2 @ W3.T + b3
    out = np.tanh(z3)
    if not np.all(np.isfinite(z3)):
        raise NonFiniteError("non-finite activation in forward pass")
    return ForwardTrace(x=x, z1=z1, h1=h1, z2=z2, h2=h2, z3=z3, out=out)


def predict(model: MlpModel, x: np.ndarray, batch_size: int = 256) -> npt.NDArray[np.float64]:
    """Network outputs for a batch, computed in chunks."""
    x = np.atleast_2d(x)
    chunks = [forward(model, x[i:i + batch_size]).out for i in range(0, len(x), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, model.output_dim))


def backward(model: MlpModel, trace: ForwardTrace, output_gradient: np.ndarray) -> List[np.ndarray]:
    """
    Reverse-mode gradients of all six parameter tensors.

    Args:
        model (MlpModel): The model ``trace`` was produced with.
        trace (ForwardTrace): Result of ``forward``.
        output_gradient (np.ndarray): dLoss/dout, same shape as ``trace.out``.
            For a batch the parameter gradients are summed over rows.

    Returns:
        List[np.ndarray]: ``[dW1, db1, dW2, db2, dW3, db3]``.

    Raises:
        ValueError: On a shape mismatch.
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != trace.out.shape:
        raise ValueError(f"output gradient shape {g.shape} != output shape {trace.out.shape}")

    x, h1, h2, out = (np.atleast_2d(a) for a in (trace.x, trace.h1, trace.h2, trace.out))
    z1, z2 = np.atleast_2d(trace.z1), np.atleast_2d(trace.z2)
    g = np.atleast_2d(g)
    _, _, W2, _, W3, _ = model.params

    dz3 = g * (1.0 - out ** 2)
    dW3 = dz3.T @ h2
    db3 = dz3.sum(axis=0)

    # relu'(0) is taken as 0
    dz2 = (dz3 @ W3) * (z2 > 0.0)
    dW2 = dz2.T @ h1
    db2 = dz2.sum(axis=0)

    dz1 = (dz2 @ W2) * (z1 > 0.0)
    dW1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return [dW1, db1, dW2, db2, dW3, db3]


def gradient_norm(grads: Sequence[np.ndarray]) -> float:
    """Global L2 norm of a gradient list; raises NonFiniteError if it is not finite."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if not np.isfinite(norm):
        raise NonFiniteError("gradient contains NaN or Inf")
    return norm
