"""Exponential-family geometry of a softmax model.

Primal coordinates are representation vectors ``lam``; dual coordinates are
mean parameters ``phi = grad A(lam) = E[gamma | lam]``. Everything here is a
pure function of an immutable :class:`~dualsteer.model.SoftmaxModel`.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotInDualImage
from .model import SoftmaxModel, top_k_indices

# Levenberg term added to Cov when inverting the dual map.
INVERSE_REG = 1e-10


def logits(model: SoftmaxModel, lam) -> np.ndarray:
    lam = model.check_point(lam)
    return model.gamma @ lam


def _log_normalizer_from_logits(z: np.ndarray) -> float:
    m = z.max()
    if not np.isfinite(m):
        raise FloatingPointError("non-finite logits; representation vector overflows")
    return float(m + np.log(np.sum(np.exp(z - m))))


def log_normalizer(model: SoftmaxModel, lam) -> float:
    """``A(lam) = log sum_y exp(lam . gamma_y)`` with max-subtraction."""
    return _log_normalizer_from_logits(logits(model, lam))


def log_softmax(model: SoftmaxModel, lam) -> np.ndarray:
    z = logits(model, lam)
    return z - _log_normalizer_from_logits(z)


def softmax_probs(model: SoftmaxModel, lam) -> np.ndarray:
    return np.exp(log_softmax(model, lam))


def dual_map(model: SoftmaxModel, lam) -> np.ndarray:
    """Mean parameter ``phi(lam) = sum_y p_y gamma_y``."""
    return softmax_probs(model, lam) @ model.gamma


def covariance(gamma: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Weighted covariance of the rows of ``gamma``; ``probs`` must sum to one."""
    centered = gamma - probs @ gamma
    cov = (centered * probs[:, None]).T @ centered
    return 0.5 * (cov + cov.T)


def hessian(model: SoftmaxModel, lam, top_k: int | None = None) -> np.ndarray:
    """``Cov[gamma | lam]``, optionally over the ``top_k`` most probable items only.

    With ``top_k`` the kept probabilities are renormalized before forming the
    covariance.
    """
    p = softmax_probs(model, lam)
    gamma = model.gamma
    if top_k is not None and top_k < model.V:
        if top_k < 1:
            raise ValueError("top_k must be positive")
        keep = top_k_indices(p, top_k)
        p = p[keep] / p[keep].sum()
        gamma = gamma[keep]
    return covariance(gamma, p)


def kl(model: SoftmaxModel, lam0, lam1) -> float:
    """``KL(P_lam0 || P_lam1)`` as the Bregman divergence of ``A``."""
    lam0 = model.check_point(lam0)
    lam1 = model.check_point(lam1)
    a0 = log_normalizer(model, lam0)
    a1 = log_normalizer(model, lam1)
    return float(a1 - a0 - dual_map(model, lam0) @ (lam1 - lam0))


def total_variation(model: SoftmaxModel, lam0, lam1) -> float:
    return 0.5 * float(np.abs(softmax_probs(model, lam0) - softmax_probs(model, lam1)).sum())


def _row_space_basis(model: SoftmaxModel) -> np.ndarray:
    """Orthonormal basis (columns) of the span of row differences of gamma."""
    centered = model.gamma - model.gamma.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(model.V, model.d) * np.finfo(float).eps)) if s[0] > 0 else 0
    return vt[:rank].T


def min_norm_representative(model: SoftmaxModel, lam) -> np.ndarray:
    """Drop the components of ``lam`` that shift every logit equally."""
    basis = _row_space_basis(model)
    return basis @ (basis.T @ lam)


def solve_inverse_dual(
    model: SoftmaxModel,
    phi,
    tol: float = 1e-10,
    max_iter: int = 100,
    lam_init=None,
) -> tuple[np.ndarray, int]:
    """Damped Newton on ``A(lam) - phi . lam``; returns ``(lam, iterations)``."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (model.d,):
        raise DimensionMismatch(f"expected a {model.d}-vector, got shape {phi.shape}")
    if not np.all(np.isfinite(phi)):
        raise NotInDualImage("phi is not finite")
    lam = np.zeros(model.d) if lam_init is None else min_norm_representative(model, np.asarray(lam_init, float))
    eye = np.eye(model.d)

    def objective(x):
        return log_normalizer(model, x) - phi @ x

    try:
        f = objective(lam)
        for it in range(max_iter + 1):
            p = softmax_probs(model, lam)
            grad = p @ model.gamma - phi
            gnorm = np.linalg.norm(grad)
            if gnorm <= tol:
                return min_norm_representative(model, lam), it
            if it == max_iter:
                break
            step = -np.linalg.solve(covariance(model.gamma, p) + INVERSE_REG * eye, grad)
            slope = grad @ step
            slack = 1e-13 * (1.0 + abs(f))
            t = 1.0
            while t > 1e-20:
                cand = lam + t * step
                fc = objective(cand)
                if fc <= f + 1e-4 * t * slope + slack:
                    break
                t *= 0.5
            else:
                break
            lam, f = cand, fc
            if not np.all(np.isfinite(lam)):
                break
    except (FloatingPointError, np.linalg.LinAlgError):
        pass
    raise NotInDualImage(f"inverse dual map did not reach tol={tol:g} in {max_iter} iterations")


def inverse_dual_map(model: SoftmaxModel, phi, tol: float = 1e-10, max_iter: int = 100, lam_init=None) -> np.ndarray:
    """``lam(phi)``: the minimum-norm primal point whose mean parameter is ``phi``.

    Raises :class:`NotInDualImage` when ``phi`` is not (numerically) inside the
    convex hull of the unembedding vectors.
    """
    return solve_inverse_dual(model, phi, tol=tol, max_iter=max_iter, lam_init=lam_init)[0]


def conjugate(model: SoftmaxModel, phi, tol: float = 1e-10, max_iter: int = 100) -> float:
    """Convex conjugate ``A*(phi) = sup_lam lam . phi - A(lam)`` (negative entropy)."""
    lam = inverse_dual_map(model, phi, tol=tol, max_iter=max_iter)
    return float(lam @ np.asarray(phi, float) - log_normalizer(model, lam))


def entropy(model: SoftmaxModel, lam) -> float:
    logp = log_softmax(model, lam)
    p = np.exp(logp)
    return float(-np.sum(p * logp))
