"""Brute-force verifiers for tests.

Nothing here is used on production paths. The helpers deliberately avoid
:mod:`dualsteer.geometry` so that agreement between the two is meaningful.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Literal

import mpmath
import numpy as np

from .errors import NoMinimizer
from .model import SoftmaxModel
from .probes import LinearProbe


# -- independent reductions ---------------------------------------------------


def _log_probs(gamma: np.ndarray, lam: np.ndarray) -> np.ndarray:
    z = np.asarray(gamma, np.longdouble) @ np.asarray(lam, np.longdouble)
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def extended_log_normalizer(model: SoftmaxModel, lam, dps: int = 50) -> float:
    """``log sum exp(lam . gamma_y)`` in ``dps``-digit arithmetic."""
    with mpmath.workdps(dps):
        lam_mp = [mpmath.mpf(float(x)) for x in lam]
        terms = [mpmath.exp(mpmath.fsum(mpmath.mpf(float(g)) * l for g, l in zip(row, lam_mp))) for row in model.gamma]
        return float(mpmath.log(mpmath.fsum(terms)))


def direct_kl(model: SoftmaxModel, lam0, lam1, floor: float = 1e-300) -> float:
    """``sum p0 log(p0 / p1)`` by direct summation, both probabilities floored."""
    p0 = np.exp(_log_probs(model.gamma, lam0))
    p1 = np.exp(_log_probs(model.gamma, lam1))
    p0c, p1c = np.maximum(p0, floor), np.maximum(p1, floor)
    return float(np.sum(p0 * (np.log(p0c) - np.log(p1c))))


def extended_kl_cells(p0, pt, floor: float = 0.0, dps: int = 50) -> float:
    with mpmath.workdps(dps):
        return float(
            mpmath.fsum(
                mpmath.mpf(float(a)) * mpmath.log(mpmath.mpf(float(a)) / mpmath.mpf(max(float(b), floor)))
                for a, b in zip(p0, pt)
                if a > 0
            )
        )


def _mean(gamma: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return (np.exp(_log_probs(gamma, lam)).astype(np.float64)) @ gamma


def _A(gamma: np.ndarray, lam: np.ndarray) -> float:
    z = gamma @ lam
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()))


# -- finite differences -------------------------------------------------------


def finite_diff_gradient(f: Callable[[np.ndarray], float], lam, h: float = 1e-5) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    g = np.empty_like(lam)
    for i in range(lam.size):
        e = np.zeros_like(lam)
        e[i] = h
        g[i] = (f(lam + e) - f(lam - e)) / (2 * h)
    return g


def finite_diff_jacobian(g: Callable[[np.ndarray], np.ndarray], lam, h: float = 1e-5) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    cols = []
    for i in range(lam.size):
        e = np.zeros_like(lam)
        e[i] = h
        cols.append((np.asarray(g(lam + e)) - np.asarray(g(lam - e))) / (2 * h))
    return np.column_stack(cols)


# -- weighted KL minimizers (interpolation oracle) ----------------------------


@dataclass(frozen=True)
class GridSpec:
    lo: float | tuple[float, ...]
    hi: float | tuple[float, ...]
    points: int

    def __post_init__(self):
        if self.points < 3:
            raise ValueError("grid needs at least 3 points per axis")
        if np.any(np.asarray(self.lo) >= np.asarray(self.hi)):
            raise ValueError("grid needs lo < hi")

    def axes(self, d: int) -> list[np.ndarray]:
        if d > 3:
            raise ValueError("grid oracle is limited to d <= 3")
        lo = np.broadcast_to(np.asarray(self.lo, float), (d,))
        hi = np.broadcast_to(np.asarray(self.hi, float), (d,))
        return [np.linspace(lo[i], hi[i], self.points) for i in range(d)]

    def grid(self, d: int) -> np.ndarray:
        return np.array(list(itertools.product(*self.axes(d))))


def _weighted_objective(gamma, lam, lp0, lp1, t, direction):
    lp = _log_probs(gamma, lam)
    p = np.exp(lp)
    if direction == "reverse":
        return float((1 - t) * np.sum(p * (lp - lp0)) + t * np.sum(p * (lp - lp1)))
    return float((1 - t) * np.sum(np.exp(lp0) * (lp0 - lp)) + t * np.sum(np.exp(lp1) * (lp1 - lp)))


def weighted_kl_objective(model, lam, lam0, lam1, t, direction: Literal["reverse", "forward"]) -> float:
    """Reverse: ``(1-t)KL(P||P0) + tKL(P||P1)``; forward: ``(1-t)KL(P0||P) + tKL(P1||P)``."""
    g = model.gamma
    return _weighted_objective(g, np.asarray(lam, float), _log_probs(g, lam0), _log_probs(g, lam1), t, direction)


def grid_min_weighted_kl(model: SoftmaxModel, lam0, lam1, t: float, direction, grid: GridSpec):
    """Exhaustive minimizer of the weighted KL objective over a grid in ``lam``."""
    g = model.gamma
    lp0, lp1 = _log_probs(g, lam0), _log_probs(g, lam1)
    pts = grid.grid(model.d)
    vals = np.array([_weighted_objective(g, x, lp0, lp1, t, direction) for x in pts])
    i = int(np.argmin(vals))
    return pts[i], float(vals[i])


def _gradient_descent(f, grad, x0, max_iter=20000, gtol=1e-9, armijo=1e-4):
    """Gradient descent with halving backtracking; returns ``(x, f(x), converged)``.

    The trial step is the Barzilai-Borwein estimate when it is positive, which
    keeps iteration counts low on ill-conditioned objectives; the Armijo test
    still makes every accepted step a descent step. The search stops early,
    unconverged, once the required decrease is below the rounding level of
    ``f`` and so can no longer be certified.
    """
    x = np.asarray(x0, float)
    fx = f(x)
    g = grad(x)
    step = 1.0
    for _ in range(max_iter):
        gn2 = g @ g
        if not np.isfinite(fx) or not np.isfinite(gn2):
            return x, fx, False
        if np.sqrt(gn2) <= gtol:
            return x, fx, True
        resolution = 4.0 * np.finfo(float).eps * max(abs(fx), 1.0)
        while True:
            cand = x - step * g
            fc = f(cand)
            if fc <= fx - armijo * step * gn2:
                break
            step *= 0.5
            if armijo * step * gn2 < resolution:
                return x, fx, False
        g_new = grad(cand)
        s, y = cand - x, g_new - g
        sy = s @ y
        step = min(float(s @ s / sy), 1e6) if sy > 0 else min(step * 2.0, 1e6)
        x, fx, g = cand, fc, g_new
    return x, fx, False


def descent_min_weighted_kl(model, lam0, lam1, t, direction, starts: int = 20, seed: int = 0, scale: float | None = None):
    """Multi-start gradient descent on the weighted KL objective (for ``d > 2``)."""
    g = model.gamma
    lam0 = np.asarray(lam0, float)
    lam1 = np.asarray(lam1, float)
    lp0, lp1 = _log_probs(g, lam0), _log_probs(g, lam1)
    p0, p1 = np.exp(lp0).astype(float), np.exp(lp1).astype(float)
    target_mean = (1 - t) * (p0 @ g) + t * (p1 @ g)

    def f(x):
        return _weighted_objective(g, x, lp0, lp1, t, direction)

    if direction == "forward":

        def grad(x):
            return _mean(g, x) - target_mean

    else:

        def grad(x):
            lp = _log_probs(g, x)
            p = np.exp(lp).astype(float)
            h = (lp - (1 - t) * lp0 - t * lp1).astype(float)
            # d/dx sum_y p_y h_y with h_y linear in x through lp
            centered = g - p @ g
            return centered.T @ (p * (h - p @ h))

    rng = np.random.default_rng(seed)
    scale = (np.linalg.norm(lam0) + np.linalg.norm(lam1)) / 2 + 1.0 if scale is None else scale
    best = None
    for _ in range(starts):
        x, fx, _ = _gradient_descent(f, grad, scale * rng.standard_normal(model.d))
        if best is None or fx < best[1]:
            best = (x, fx)
    return best


# -- hyperplane KL projection (steering oracle) -------------------------------


def constrained_min_kl(
    model: SoftmaxModel,
    lam0,
    probe: LinearProbe,
    c: float,
    starts: int = 20,
    seed: int = 0,
    gtol: float = 1e-9,
) -> np.ndarray:
    """Multi-start gradient descent for ``min KL(P_lam0 || P_lam)`` on ``beta . lam = c``.

    The plane is parameterized as ``origin + basis @ a`` with an orthonormal
    basis of the null space of ``beta``; the objective is
    ``A(lam(a)) - phi(lam0) . lam(a)`` and its gradient ``basis.T (phi - phi0)``.
    """
    g = model.gamma
    lam0 = np.asarray(lam0, float)
    beta = probe.beta
    origin = lam0 + (c - beta @ lam0) / (beta @ beta) * beta
    # orthonormal basis of beta's null space via a full QR of beta
    q, _ = np.linalg.qr(np.column_stack([beta, np.eye(model.d)]))
    basis = q[:, 1 : model.d]
    if basis.shape[1] == 0:
        return origin
    phi0 = _mean(g, lam0)

    def f(a):
        x = origin + basis @ a
        return _A(g, x) - phi0 @ x

    def grad(a):
        return basis.T @ (_mean(g, origin + basis @ a) - phi0)

    rng = np.random.default_rng(seed)
    scale = np.linalg.norm(lam0) + 1.0
    best = None
    for s in range(starts):
        a0 = np.zeros(basis.shape[1]) if s == 0 else scale * rng.standard_normal(basis.shape[1])
        a, fa, ok = _gradient_descent(f, grad, a0, gtol=gtol)
        if np.isfinite(fa) and (best is None or fa < best[1]):
            best = (a, fa, ok)
    if best is None:
        raise NoMinimizer("descent diverged from every start")
    return origin + basis @ best[0]
