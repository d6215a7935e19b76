"""Dense/sparse kernels and explicit-gradient building blocks.

Everything runs in float64. Sparse matrices are ``scipy.sparse.csr_matrix``
kept in canonical form (sorted column indices, no duplicates), which gives a
row-major, ascending-column reduction order in ``spmm``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

ACTIVATIONS = ("relu", "identity")


class ContractError(ValueError):
    """A kernel was called with arguments violating its preconditions."""


# ---------------------------------------------------------------------------
# sparse helpers
# ---------------------------------------------------------------------------

def canonical(a) -> sp.csr_matrix:
    """Return ``a`` as a float64 CSR matrix with sorted, deduplicated indices."""
    m = sp.csr_matrix(a, dtype=np.float64, copy=True)
    m.sum_duplicates()
    m.sort_indices()
    m.eliminate_zeros()
    return m


def sparse_from_entries(rows, cols, values, shape: tuple[int, int]) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if rows.size and (rows.min() < 0 or rows.max() >= shape[0] or cols.min() < 0 or cols.max() >= shape[1]):
        raise ContractError("sparse entry index out of range")
    if not np.all(np.isfinite(values)):
        raise ContractError("sparse entries must be finite")
    keys = rows * shape[1] + cols
    if np.unique(keys).size != keys.size:
        raise ContractError("duplicate (row, col) coordinates")
    return canonical(sp.coo_matrix((values, (rows, cols)), shape=shape))


def binary_symmetric(rows, cols, n: int) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency from an (undirected) edge list; duplicates collapse."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    m = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return m


def spmm(a: sp.spmatrix, h: np.ndarray) -> np.ndarray:
    if a.shape[1] != h.shape[0]:
        raise ContractError(f"spmm: a is {a.shape}, h has {h.shape[0]} rows")
    a = a if (sp.isspmatrix_csr(a) and a.has_canonical_format) else canonical(a)
    return np.asarray(a @ np.asarray(h, dtype=np.float64))


def sym_normalize(a: sp.spmatrix) -> sp.csr_matrix:
    """D~^{-1/2} (A + I) D~^{-1/2} with D~ = rowdeg(A) + I."""
    if a.shape[0] != a.shape[1]:
        raise ContractError(f"sym_normalize needs a square matrix, got {a.shape}")
    a = canonical(a)
    if a.nnz and a.data.min() < 0:
        raise ContractError("sym_normalize needs nonnegative entries")
    n = a.shape[0]
    deg = np.asarray(a.sum(axis=1)).ravel() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return canonical(d @ (a + sp.identity(n, format="csr")) @ d)


# ---------------------------------------------------------------------------
# MLP with explicit reverse mode
# ---------------------------------------------------------------------------

@dataclass
class Layer:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[1]:
            raise ContractError("layer bias must match weight output dim")


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ContractError("consecutive layer dimensions do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator, final_activation: str = "identity") -> "MlpParams":
        """Glorot-uniform weights, zero biases, rectifier on hidden layers."""
        layers = []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            bound = np.sqrt(6.0 / (a + b))
            act = final_activation if i == len(dims) - 2 else "relu"
            layers.append(Layer(rng.uniform(-bound, bound, size=(a, b)), np.zeros(b), act))
        return cls(layers)

    def flat(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"W{i}"] = layer.weight
            out[f"b{i}"] = layer.bias
        return out

    def with_flat(self, values: dict[str, np.ndarray]) -> "MlpParams":
        return MlpParams([
            Layer(values[f"W{i}"], values[f"b{i}"], layer.activation)
            for i, layer in enumerate(self.layers)
        ])

    def linear_map(self) -> np.ndarray:
        """End-to-end weight product with activations and biases dropped."""
        w = self.layers[0].weight
        for layer in self.layers[1:]:
            w = w @ layer.weight
        return w


@dataclass
class MlpCache:
    weights: tuple
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else z


def mlp_forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise ContractError(f"mlp_forward: expected (*, {p.in_dim}) input, got {x.shape}")
    cache = MlpCache(weights=tuple(layer.weight for layer in p.layers))
    h = x
    for layer in p.layers:
        cache.inputs.append(h)
        z = h @ layer.weight + layer.bias
        cache.pre.append(z)
        h = _act(layer.activation, z)
    return h, cache


def mlp_backward(p: MlpParams, cache: MlpCache, upstream: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    if len(cache.weights) != len(p.layers) or any(
        w is not layer.weight for w, layer in zip(cache.weights, p.layers)
    ):
        raise ContractError("mlp_backward: cache does not belong to these parameters")
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(upstream, dtype=np.float64)
    for i in range(len(p.layers) - 1, -1, -1):
        layer = p.layers[i]
        if layer.activation == "relu":
            g = g * (cache.pre[i] > 0)
        grads[f"W{i}"] = cache.inputs[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ layer.weight.T
    return grads, g


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------

def softmax(z: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    s = np.asarray(z, dtype=np.float64) / temperature
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray, temperature: float) -> np.ndarray:
    """Pull a gradient w.r.t. softmax(z / T) back to z."""
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner) / temperature


def softmax_ce_grad(logits: np.ndarray, labels, temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits / T) and its gradient w.r.t. logits."""
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() >= c)):
        raise ContractError("labels must index valid classes, one per row")
    s = logits / temperature
    s = s - s.max(axis=1, keepdims=True)
    logz = np.log(np.exp(s).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logz - s[rows, labels]))
    probs = np.exp(s - logz[:, None])
    probs[rows, labels] -= 1.0
    return loss, probs / (temperature * n)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive moment estimation over a dict of named arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for key in sorted(params):
            g = grads[key]
            m = self.beta1 * self.m.get(key, np.zeros_like(g)) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(key, np.zeros_like(g)) + (1 - self.beta2) * g * g
            self.m[key], self.v[key] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            out[key] = params[key] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one entry at a time."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value at entry {i}")
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
