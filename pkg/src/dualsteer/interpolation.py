"""Primal (e-geodesic) and dual (m-geodesic) interpolation between two contexts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import NotInDualImage
from .geometry import dual_map, inverse_dual_map, kl
from .model import SoftmaxModel


@dataclass(frozen=True)
class InterpolationPath:
    kind: Literal["primal", "dual"]
    ts: np.ndarray
    points: np.ndarray  # (len(ts), d) primal points
    dual_points: np.ndarray  # (len(ts), d) mean parameters


def uniform_ts(steps: int) -> np.ndarray:
    if steps < 2:
        raise ValueError("need at least two interpolation steps")
    return np.linspace(0.0, 1.0, steps)


def _check_ts(ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("ts must be a non-empty 1-D sequence")
    if np.any(ts < 0) or np.any(ts > 1) or np.any(np.diff(ts) <= 0):
        raise ValueError("ts must be strictly increasing within [0, 1]")
    return ts


def e_interpolate(model: SoftmaxModel, lam0, lam1, ts) -> InterpolationPath:
    """Straight line in primal coordinates: ``(1-t) lam0 + t lam1``."""
    lam0 = model.check_point(lam0)
    lam1 = model.check_point(lam1)
    ts = _check_ts(ts)
    points = (1.0 - ts)[:, None] * lam0 + ts[:, None] * lam1
    duals = np.array([dual_map(model, p) for p in points])
    return InterpolationPath("primal", ts, points, duals)


def m_interpolate(model: SoftmaxModel, lam0, lam1, ts, tol: float = 1e-10, max_iter: int = 100) -> InterpolationPath:
    """Straight line in dual coordinates, with primal preimages of each ``phi_t``.

    Each inverse solve is warm-started from the previous preimage.
    """
    lam0 = model.check_point(lam0)
    lam1 = model.check_point(lam1)
    ts = _check_ts(ts)
    phi0, phi1 = dual_map(model, lam0), dual_map(model, lam1)
    duals = (1.0 - ts)[:, None] * phi0 + ts[:, None] * phi1
    points = np.empty_like(duals)
    prev = lam0
    for i, (t, phi) in enumerate(zip(ts, duals)):
        try:
            prev = inverse_dual_map(model, phi, tol=tol, max_iter=max_iter, lam_init=prev)
        except NotInDualImage as exc:
            raise NotInDualImage(f"at t={t:g}: {exc}") from None
        points[i] = prev
    return InterpolationPath("dual", ts, points, duals)


def weighted_reverse_kl(model: SoftmaxModel, lam, lam0, lam1, t: float) -> float:
    """``(1-t) KL(P_lam || P_lam0) + t KL(P_lam || P_lam1)``."""
    return (1.0 - t) * kl(model, lam, lam0) + t * kl(model, lam, lam1)


def weighted_forward_kl(model: SoftmaxModel, phi, lam0, lam1, t: float, tol: float = 1e-10) -> float:
    """``(1-t) KL(P_lam0 || P_phi) + t KL(P_lam1 || P_phi)``, ``P_phi`` via the inverse dual map."""
    lam = inverse_dual_map(model, phi, tol=tol)
    return (1.0 - t) * kl(model, lam0, lam) + t * kl(model, lam1, lam)
