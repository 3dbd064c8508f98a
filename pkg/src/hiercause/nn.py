"""Minimal dense neural-network engine.

Plain-numpy MLPs with Leaky-ReLU hidden activations and a linear output
layer, exact reverse-mode gradients, and Adam. This is all the search and
estimation code needs; there is no autograd graph, just the fixed MLP
topology.

Conventions: weights are (out, in) matrices, a forward pass computes
``X @ W.T + b`` per layer, and losses are mean-over-samples of the squared
error summed over output dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDivergenceError

DEFAULT_ALPHA = 0.2


@dataclass
class MlpParams:
    """Layer parameters plus the Leaky-ReLU negative slope.

    ``weights[k]`` has shape (out_k, in_k) and must compose with the next
    layer (in_{k+1} == out_k). ``alpha`` must lie in (0, 1).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.weights:
            raise ValueError("MlpParams needs at least one layer")
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: bad shapes {w.shape} / {b.shape}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: in-dim {w.shape[1]} does not "
                                 f"compose with previous out-dim")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.alpha)

    def astype(self, dtype) -> "MlpParams":
        return MlpParams([w.astype(dtype) for w in self.weights],
                         [b.astype(dtype) for b in self.biases], self.alpha)


@dataclass
class MlpGrads:
    """Gradient container mirroring MlpParams shapes."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def mlp_init(layer_dims: list[int], alpha: float = DEFAULT_ALPHA,
             seed: int = 0) -> MlpParams:
    """Gaussian weights scaled by 1/sqrt(fan-in), zero biases.

    ``layer_dims`` lists [in, hidden..., out]; at least two entries. The same
    (dims, alpha, seed) always yields identical parameters.
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least input and output dims")
    if any(d <= 0 for d in layer_dims):
        raise ValueError("all layer dims must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.standard_normal((d_out, d_in)) / np.sqrt(d_in))
        biases.append(np.zeros(d_out))
    return MlpParams(weights, biases, alpha)


def _leaky_gain(z: np.ndarray, alpha: float) -> np.ndarray:
    # bool-arithmetic form: much faster than np.where on large arrays, and
    # the gain array doubles as the activation derivative for backward
    dt = z.dtype.type
    return dt(alpha) + dt(1.0 - alpha) * (z > 0.0)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass: Leaky-ReLU after every layer except the last (linear)."""
    h = _check_input(params, x)
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k != last:
            h *= _leaky_gain(h, params.alpha)
    return h


def forward_cached(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass retaining per-layer inputs and activation gains."""
    h = _check_input(params, x)
    cache = []
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        gain = None
        if k != last:
            gain = _leaky_gain(z, params.alpha)
            z *= gain
        cache.append((h, gain))
        h = z
    return h, cache


def backward(params: MlpParams, cache: list,
             grad_out: np.ndarray) -> tuple[MlpGrads, np.ndarray]:
    """Backpropagate grad_out through a cached forward pass.

    Returns parameter gradients and the gradient w.r.t. the network input,
    so callers can chain networks (decoder into encoder).
    """
    g_w = [None] * params.n_layers
    g_b = [None] * params.n_layers
    d = grad_out
    last = params.n_layers - 1
    for k in range(last, -1, -1):
        h_in, gain = cache[k]
        if k != last:
            d = d * gain
        g_w[k] = d.T @ h_in
        g_b[k] = d.sum(axis=0)
        d = d @ params.weights[k]
    return MlpGrads(g_w, g_b), d


def mlp_grad(params: MlpParams, x: np.ndarray,
             y: np.ndarray) -> tuple[MlpGrads, float]:
    """Exact gradient of the mean squared error (1/n) * sum ||f(x) - y||^2."""
    if y.shape != (x.shape[0], params.out_dim):
        raise ValueError(f"target shape {y.shape} does not match "
                         f"({x.shape[0]}, {params.out_dim})")
    out, cache = forward_cached(params, x)
    resid = out - y
    n = x.shape[0]
    loss = float((resid * resid).sum() / n)
    grads, _ = backward(params, cache, 2.0 * resid / n)
    return grads, loss


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    # computation follows the parameter dtype (training may run in float32)
    x = np.asarray(x, dtype=params.weights[0].dtype)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"input shape {x.shape} does not match "
                         f"in-dim {params.in_dim}")
    return x


@dataclass
class AdamState:
    """Adam moment accumulators mirroring one MlpParams."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(w) for w in params.weights],
        v_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(state: AdamState, params: MlpParams,
              grads: MlpGrads) -> tuple[AdamState, MlpParams]:
    """One bias-corrected Adam update. Mutates state and params in place.

    A single state/params pair must only ever be driven by one trainer.
    """
    for g in grads.weights + grads.biases:
        # the plain sum is nan/inf as soon as any entry is, without the
        # full-size boolean temp np.isfinite would allocate
        if not np.isfinite(g.sum()):
            raise TrainingDivergenceError(state.step, "non-finite gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    sqrt_c2 = np.sqrt(1.0 - state.beta2 ** t)
    scale = state.lr / c1
    for m, v, p, g in (
        list(zip(state.m_w, state.v_w, params.weights, grads.weights))
        + list(zip(state.m_b, state.v_b, params.biases, grads.biases))
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        den = np.sqrt(v)
        den /= sqrt_c2
        den += state.eps
        np.divide(m, den, out=den)
        den *= scale
        p -= den
    return state, params


def save_params(params: MlpParams, path_base: str | Path) -> None:
    """Write params as a little-endian f64 blob plus a JSON sidecar.

    Same checkpoint layout as sample tables: ``<base>.f64`` holds all weights
    then all biases, concatenated flat; ``<base>.json`` records shapes.
    """
    base = Path(path_base)
    blob = np.concatenate([w.ravel() for w in params.weights]
                          + [b.ravel() for b in params.biases])
    base.with_suffix(".f64").write_bytes(blob.astype("<f8").tobytes())
    sidecar = {
        "kind": "mlp-params",
        "alpha": params.alpha,
        "weight_shapes": [list(w.shape) for w in params.weights],
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_params(path_base: str | Path) -> MlpParams:
    base = Path(path_base)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    if sidecar.get("kind") != "mlp-params":
        raise ValueError(f"{base}: sidecar is not an mlp-params descriptor")
    flat = np.frombuffer(base.with_suffix(".f64").read_bytes(), dtype="<f8")
    shapes = [tuple(s) for s in sidecar["weight_shapes"]]
    weights, biases = [], []
    off = 0
    for out_d, in_d in shapes:
        weights.append(flat[off:off + out_d * in_d].reshape(out_d, in_d).copy())
        off += out_d * in_d
    for out_d, _ in shapes:
        biases.append(flat[off:off + out_d].copy())
        off += out_d
    if off != flat.size:
        raise ValueError(f"{base}: blob size does not match shapes")
    return MlpParams(weights, biases, float(sidecar["alpha"]))
