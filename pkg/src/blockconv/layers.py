"""Block and sliding-window 1-D convolution layers with analytic gradients.

The block layer reads its input in disjoint chunks: the kernel stride
equals the kernel length, so an input of length n becomes n/k output
positions. Each of the q kernels contributes one feature column, giving a
pre-activation matrix of shape (n/k, q). The sliding-window variant
(stride s < k) is provided forward-only.

All forward/backward operations accept an optional leading batch axis and
are pure functions of their inputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StructureError
from .numerics import as_dense

__all__ = [
    "ConvKernelBank",
    "LayerCache",
    "sigmoid",
    "nonoverlap_forward",
    "overlap_forward",
    "beta_project",
    "forward_cached",
    "stage_backward",
]


@dataclass
class ConvKernelBank:
    """A bank of q convolution kernels of length k with one bias each.

    ``weights[i]`` is kernel i; ``biases[i]`` is shared across every block
    position that kernel visits (weight sharing).
    """

    weights: np.ndarray  # (q, k)
    biases: np.ndarray  # (q,)

    def __post_init__(self):
        self.weights = as_dense(self.weights, rank=2)
        self.biases = as_dense(self.biases, rank=1)
        if self.weights.shape[0] < 1 or self.weights.shape[1] < 1:
            raise StructureError(f"bank needs q >= 1 kernels of length k >= 1, got {self.weights.shape}")
        if self.biases.shape[0] != self.weights.shape[0]:
            raise StructureError(
                f"bank needs one bias per kernel: weights {self.weights.shape}, "
                f"biases {self.biases.shape}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise StructureError("bank parameters must be finite")

    @property
    def q(self):
        return self.weights.shape[0]

    @property
    def k(self):
        return self.weights.shape[1]


@dataclass
class LayerCache:
    """Per-sample (or per-batch) intermediates kept for the backward pass."""

    x: np.ndarray  # input, shape (..., n)
    pre: np.ndarray  # pre-activation, shape (..., L, q)
    post: np.ndarray  # sigmoid(pre), same shape


def sigmoid(t):
    """Logistic function 1 / (1 + e^(-t)) without overflow.

    Negative arguments are evaluated as e^t / (1 + e^t), so exp never sees
    a large positive input. Output lies strictly inside (0, 1) for finite
    t up to the limits of float64 (beyond |t| ~ 36.7 the nearest
    representable double is exactly 0.0 or 1.0). Scalars in, scalar out;
    arrays map elementwise.
    """
    arr = np.asarray(t, dtype=np.float64)
    e = np.exp(-np.abs(arr))
    out = np.where(arr >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if np.isscalar(t) or arr.ndim == 0 else out


def _blocks(x, k):
    """View of x split into disjoint length-k blocks along the last axis."""
    n = x.shape[-1]
    if n == 0 or n % k != 0:
        raise StructureError(
            f"kernel length {k} does not tile input length {n}; block layers "
            "need the kernel lengths to factor the input length exactly"
        )
    return x.reshape(x.shape[:-1] + (n // k, k))


def nonoverlap_forward(x, bank):
    """Pre-activation of a block-convolution layer: (j, i) -> w_i . x_j + b_i.

    x_j is the j-th disjoint block of length k, so the output has shape
    (..., n/k, q). The activation is the caller's job.
    """
    x = as_dense(x)
    blocks = _blocks(x, bank.k)
    return blocks.reshape(-1, bank.k).dot(bank.weights.T).reshape(
        blocks.shape[:-1] + (bank.q,)
    ) + bank.biases


def overlap_forward(x, bank, stride):
    """Pre-activation of a sliding-window layer with stride < kernel length.

    Window j covers x[j*s : j*s + k] for j = 0 .. (n-k)/s, giving shape
    (..., (n-k)/s + 1, q). Forward only; training support is limited to the
    block layers.
    """
    x = as_dense(x)
    stride = int(stride)
    k = bank.k
    if stride < 1 or stride >= k:
        raise ParameterError(
            f"stride must satisfy 1 <= s < k, got s={stride} with k={k}"
        )
    n = x.shape[-1]
    if n < k or (n - k) % stride != 0:
        raise StructureError(
            f"stride {stride} does not tile the {n - k} positions left by a "
            f"length-{k} kernel on input length {n}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=-1)[
        ..., ::stride, :
    ]
    flat = np.ascontiguousarray(windows).reshape(-1, k)
    return flat.dot(bank.weights.T).reshape(windows.shape[:-1] + (bank.q,)) + bank.biases


def beta_project(activated, beta):
    """Collapse the q feature columns to one value per position: rows . beta.

    The projection is deliberately bare: no bias, no activation.
    """
    activated = as_dense(activated)
    beta = as_dense(beta, rank=1)
    if activated.ndim < 2:
        raise StructureError(f"expected a (..., L, q) matrix, got shape {activated.shape}")
    if activated.shape[-1] != beta.shape[0]:
        raise StructureError(
            f"feature count {activated.shape[-1]} does not match projection "
            f"length {beta.shape[0]}"
        )
    return activated @ beta


def forward_cached(x, bank):
    """Run nonoverlap_forward + sigmoid, keeping intermediates for backward."""
    x = as_dense(x)
    pre = nonoverlap_forward(x, bank)
    return LayerCache(x=x, pre=pre, post=sigmoid(pre))


def _bank_backward(cache, bank, grad_post):
    """Gradients through sigmoid(nonoverlap_forward(x)) given d/d(post).

    Returns (grad_x, grad_weights, grad_biases); gradients are summed over
    any batch axes. The sigmoid derivative is post * (1 - post), taken from
    the cached activation.
    """
    post = cache.post
    if grad_post.shape != post.shape:
        raise StructureError(
            f"gradient shape {grad_post.shape} does not match cached "
            f"activations {post.shape}"
        )
    d_pre = grad_post * post * (1.0 - post)
    q, k = bank.q, bank.k
    blocks_flat = _blocks(cache.x, k).reshape(-1, k)
    d_pre_flat = d_pre.reshape(-1, q)
    grad_weights = d_pre_flat.T @ blocks_flat
    grad_biases = d_pre_flat.sum(axis=0)
    grad_x = (d_pre_flat @ bank.weights).reshape(cache.x.shape)
    return grad_x, grad_weights, grad_biases


def stage_backward(cache, bank, beta, grad_out):
    """Exact gradients of beta_project(sigmoid(nonoverlap_forward(x))).

    grad_out has the shape of the stage output (..., L). Returns
    (grad_input, grad_weights, grad_biases, grad_beta); parameter gradients
    are summed over batch axes, grad_input keeps the input's shape.
    """
    beta = as_dense(beta, rank=1)
    grad_out = as_dense(grad_out)
    post = cache.post
    if post.shape[-1] != beta.shape[0]:
        raise StructureError(
            f"cache carries {post.shape[-1]} features but beta has length {beta.shape[0]}"
        )
    if grad_out.shape != post.shape[:-1]:
        raise StructureError(
            f"grad_out shape {grad_out.shape} does not match stage output "
            f"shape {post.shape[:-1]}"
        )
    grad_beta = post.reshape(-1, beta.shape[0]).T @ grad_out.reshape(-1)
    grad_post = grad_out[..., None] * beta
    grad_x, grad_weights, grad_biases = _bank_backward(cache, bank, grad_post)
    return grad_x, grad_weights, grad_biases, grad_beta
