"""Classical linear-inverse-problem solvers used for comparison.

Both solvers recover y from a measurement x = A y (+ noise) with A of
shape (n, m):

* ``art_solve`` is cyclic Kaczmarz (the algebraic reconstruction
  technique): each equation row projects the iterate onto its hyperplane,
  scaled by a relaxation factor.
* ``lasso_solve`` is ISTA for the objective 0.5 ||A y - x||^2 + lam ||y||_1:
  a gradient step of size 1/L followed by soft-thresholding, where L bounds
  the largest eigenvalue of A^T A.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StructureError
from .numerics import SeededRng, as_dense

__all__ = ["ArtConfig", "LassoConfig", "art_solve", "soft_threshold", "lasso_solve",
           "lipschitz_bound"]

# Fixed stream for the power-iteration start vector: the Lipschitz bound is
# a deterministic function of the matrix alone.
_POWER_SEED = 0x1B57A
_POWER_ITERS = 64


@dataclass(frozen=True)
class ArtConfig:
    """sweeps: full passes over the rows; relaxation in (0, 2]."""

    sweeps: int = 200
    relaxation: float = 1.0

    def __post_init__(self):
        if self.sweeps < 1:
            raise ParameterError(f"sweeps must be >= 1, got {self.sweeps}")
        if not 0.0 < self.relaxation <= 2.0:
            raise ParameterError(f"relaxation must lie in (0, 2], got {self.relaxation}")


@dataclass(frozen=True)
class LassoConfig:
    """lam: L1 weight, or None to defer to held-out grid selection;
    iteration stops at max_iters or once the objective decrease falls
    below tol."""

    lam: float = None
    max_iters: int = 1000
    tol: float = 1e-10

    def __post_init__(self):
        if self.lam is not None and self.lam < 0.0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")


def _check_system(a, x):
    a = as_dense(a, rank=2)
    x = as_dense(x, rank=1)
    if x.shape[0] != a.shape[0]:
        raise StructureError(f"matrix {a.shape} against measurement {x.shape}")
    return a, x


def art_solve(a, x, cfg, y0=None):
    """Cyclic Kaczmarz sweeps for A y = x; returns the final iterate.

    Row i updates y <- y + relaxation * (x_i - a_i . y) / ||a_i||^2 * a_i,
    so with relaxation 1 each update lands exactly on row i's hyperplane.
    """
    a, x = _check_system(a, x)
    row_norms = np.einsum("ij,ij->i", a, a)
    if np.any(row_norms == 0.0):
        raise ParameterError(f"row {int(np.argmin(row_norms))} of the matrix is zero")
    if y0 is None:
        y = np.zeros(a.shape[1])
    else:
        y = as_dense(y0, rank=1).copy()
        if y.shape[0] != a.shape[1]:
            raise StructureError(f"start vector {y.shape} against matrix {a.shape}")
    for _ in range(cfg.sweeps):
        for i in range(a.shape[0]):
            row = a[i]
            y += (cfg.relaxation * (x[i] - row @ y) / row_norms[i]) * row
    return y


def soft_threshold(v, t):
    """Shrink toward zero: sign(v) * max(|v| - t, 0). Elementwise on arrays."""
    if np.any(np.asarray(t) < 0.0):
        raise ParameterError(f"threshold must be >= 0, got {t}")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lipschitz_bound(a):
    """Upper bound on the largest eigenvalue of A^T A.

    Power iteration (64 steps, fixed internal seed) gives a Rayleigh
    quotient that approaches the eigenvalue from below; a 5% margin turns
    it into the upper bound that guarantees ISTA's descent.
    """
    a = as_dense(a, rank=2)
    rng = SeededRng(_POWER_SEED).child("power-iteration")
    v = rng.standard_normal(a.shape[1])
    norm = np.linalg.norm(v)
    if norm == 0.0:
        v = np.ones(a.shape[1])
        norm = np.linalg.norm(v)
    v /= norm
    for _ in range(_POWER_ITERS):
        w = a.T @ (a @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 1.0
        v = w / norm
    rayleigh = float(np.dot(a @ v, a @ v))
    return 1.05 * rayleigh if rayleigh > 0.0 else 1.0


def lasso_solve(a, x, cfg, return_objectives=False):
    """ISTA for 0.5 ||A y - x||^2 + lam ||y||_1 from y = 0.

    Each iteration takes a gradient step of size 1/L and soft-thresholds by
    lam/L. A step is only accepted if it does not increase the objective
    (with a correct L that is automatic up to rounding), so the recorded
    objective sequence is non-increasing by construction.
    """
    a, x = _check_system(a, x)
    if cfg.lam is None:
        raise ParameterError("lam is unset; pass a value or run grid selection first")
    step = 1.0 / lipschitz_bound(a)
    threshold = step * cfg.lam
    y = np.zeros(a.shape[1])
    objectives = [_lasso_objective(a, x, y, cfg.lam)]
    for _ in range(cfg.max_iters):
        grad = a.T @ (a @ y - x)
        candidate = soft_threshold(y - step * grad, threshold)
        value = _lasso_objective(a, x, candidate, cfg.lam)
        if value > objectives[-1]:
            break
        y = candidate
        objectives.append(value)
        if objectives[-2] - objectives[-1] < cfg.tol:
            break
    if return_objectives:
        return y, objectives
    return y


def _lasso_objective(a, x, y, lam):
    residual = a @ y - x
    return 0.5 * float(residual @ residual) + lam * float(np.abs(y).sum())
