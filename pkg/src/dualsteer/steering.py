"""Euclidean steering and dual steering via regularized Newton updates.

Both methods take unit-length primal steps of size ``eta``. Euclidean steering
moves along ``beta``; dual steering solves ``(Cov[gamma | lam] + alpha I) v =
beta`` at every step so that the induced move in mean-parameter space follows
``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.linalg
from scipy.linalg import null_space

from .concepts import ConceptScheme, factorize_probs
from .errors import DegenerateProbe, DistributionCollapsed, NoMinimizer, SingularSystem
from .geometry import covariance, dual_map, log_normalizer, softmax_probs
from .metrics import KL_FLOOR, StepMetrics, path_metrics
from .model import SoftmaxModel, top_k_indices
from .probes import LinearProbe

DEFAULT_ALPHA = 5e-3
DEFAULT_TERMINATE_AT = 0.9999
DEFAULT_TOP_K = 20000
COLLAPSE_THRESHOLD = 1.0 - 1e-12


@dataclass(frozen=True)
class SteeringConfig:
    """Parameters shared by both steering methods.

    ``eta=None`` picks ``0.1 * |lam0| / sqrt(d)`` clamped to [1e-3, 1].
    ``top_k=None`` uses the top 20000 items when ``V > 20000``, else all
    items; ``top_k=0`` forces the full covariance.
    """

    alpha: float = DEFAULT_ALPHA
    eta: float | None = None
    max_steps: int = 1000
    terminate_at: float = DEFAULT_TERMINATE_AT
    top_k: int | None = None
    record_every: int = 1
    normalize: bool = True
    kl_floor: float = KL_FLOOR

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be > 0")
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be a positive integer")
        if not 0 < self.terminate_at <= 1:
            raise ValueError("terminate_at must lie in (0, 1]")
        if self.top_k is not None and self.top_k < 0:
            raise ValueError("top_k must be non-negative")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be a positive integer")

    def step_size(self, lam0: np.ndarray) -> float:
        if self.eta is not None:
            return float(self.eta)
        return float(np.clip(0.1 * np.linalg.norm(lam0) / math.sqrt(len(lam0)), 1e-3, 1.0))

    def covariance_k(self, V: int) -> int | None:
        if self.top_k is None:
            return DEFAULT_TOP_K if V > DEFAULT_TOP_K else None
        if self.top_k == 0 or self.top_k >= V:
            return None
        return self.top_k


@dataclass
class SteeringPath:
    method: Literal["euclidean", "dual"]
    points: np.ndarray
    probe: LinearProbe
    config: SteeringConfig
    per_step: list[StepMetrics] = field(default_factory=list)
    recorded: list[int] = field(default_factory=list)
    stop_reason: str = "max_steps"
    rank_deficient: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.points) - 1


def _covariance_at(model: SoftmaxModel, probs: np.ndarray, k: int | None) -> np.ndarray:
    if k is None:
        return covariance(model.gamma, probs)
    keep = top_k_indices(probs, k)
    p = probs[keep]
    return covariance(model.gamma[keep], p / p.sum())


def dual_direction(model: SoftmaxModel, lam, beta, alpha: float = DEFAULT_ALPHA, top_k: int | None = None):
    """Unit-norm solution of ``(Cov[gamma | lam] + alpha I) v = beta``.

    Returns ``(v / |v|, rank_deficient)``. With ``alpha == 0`` a least-squares
    pseudo-inverse is used and ``rank_deficient`` reports whether Cov was
    numerically singular.
    """
    probs = softmax_probs(model, lam)
    return _dual_direction(model, probs, np.asarray(beta, float), alpha, top_k)


def _dual_direction(model, probs, beta, alpha, k):
    cov = _covariance_at(model, probs, k)
    deficient = False
    if alpha > 0:
        try:
            v = scipy.linalg.cho_solve(scipy.linalg.cho_factor(cov + alpha * np.eye(len(beta))), beta)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"regularized covariance is not positive definite: {exc}") from None
    else:
        v, _, rank, _ = np.linalg.lstsq(cov, beta, rcond=None)
        deficient = rank < len(beta)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise SingularSystem("steering direction vanished")
    return v / n, deficient


def _steer(method, model, lam0, probe, config, scheme):
    if probe.input_space != "primal":
        raise DegenerateProbe("steering needs a probe on primal representations")
    config = config or SteeringConfig()
    lam = model.check_point(lam0).copy()
    eta = config.step_size(lam)
    k = config.covariance_k(model.V)
    beta = probe.beta
    euclid_dir = probe.direction if config.normalize else beta
    points = [lam.copy()]
    deficient = False
    reason = "max_steps"

    def finish():
        path = SteeringPath(
            method, np.array(points), probe, replace(config, eta=eta), stop_reason=reason, rank_deficient=deficient
        )
        if scheme is not None:
            idx = list(range(0, len(points), config.record_every))
            if idx[-1] != len(points) - 1:
                idx.append(len(points) - 1)
            path.recorded = idx
            path.per_step = path_metrics(model, scheme, probe, path.points, idx, floor=config.kl_floor)
        return path

    for step in range(config.max_steps + 1):
        probs = softmax_probs(model, lam)
        if scheme is not None and factorize_probs(scheme, probs).pw[1] >= config.terminate_at:
            reason = "terminated"
            break
        if probs.max() > COLLAPSE_THRESHOLD:
            reason = "collapsed"
            raise DistributionCollapsed(f"distribution collapsed at step {step}", path=finish())
        if step == config.max_steps:
            break
        if method == "dual":
            direction, bad = _dual_direction(model, probs, beta, config.alpha, k)
            deficient |= bad
        else:
            direction = euclid_dir
        lam = lam + eta * direction
        points.append(lam.copy())
    return finish()


def euclidean_steer(
    model: SoftmaxModel,
    lam0,
    probe: LinearProbe,
    config: SteeringConfig | None = None,
    scheme: ConceptScheme | None = None,
) -> SteeringPath:
    """``lam_{t+1} = lam_t + eta * beta / |beta|`` (unnormalized if ``config.normalize`` is off).

    With a ``scheme`` the run stops once the target probability reaches
    ``config.terminate_at`` and per-step metrics are recorded.
    """
    return _steer("euclidean", model, lam0, probe, config, scheme)


def dual_steer(
    model: SoftmaxModel,
    lam0,
    probe: LinearProbe,
    config: SteeringConfig | None = None,
    scheme: ConceptScheme | None = None,
) -> SteeringPath:
    """Regularized Newton steering: the covariance is recomputed at every step."""
    return _steer("dual", model, lam0, probe, config, scheme)


def steer(method: str, *args, **kwargs) -> SteeringPath:
    if method == "euclidean":
        return euclidean_steer(*args, **kwargs)
    if method == "dual":
        return dual_steer(*args, **kwargs)
    raise ValueError(f"unknown steering method {method!r}")


def hyperplane_frame(beta: np.ndarray, lam0: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Point on ``{beta . lam = c}`` nearest ``lam0`` and an orthonormal basis of the plane."""
    beta = np.asarray(beta, float)
    origin = lam0 + (c - beta @ lam0) / (beta @ beta) * beta
    return origin, null_space(beta[None, :])


def dual_projection_target(
    model: SoftmaxModel,
    lam0,
    probe: LinearProbe,
    c: float,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> np.ndarray:
    """Minimizer of ``KL(P_lam0 || P_lam)`` over the hyperplane ``beta . lam = c``.

    Damped Newton in hyperplane coordinates. The dual displacement of the
    result is parallel to ``beta``.
    """
    lam0 = model.check_point(lam0)
    origin, basis = hyperplane_frame(probe.beta, lam0, c)
    phi0 = dual_map(model, lam0)
    if basis.shape[1] == 0:
        return origin

    def objective(a):
        x = origin + basis @ a
        return log_normalizer(model, x) - phi0 @ x

    a = np.zeros(basis.shape[1])
    eye = np.eye(basis.shape[1])
    try:
        f = objective(a)
        for it in range(max_iter + 1):
            x = origin + basis @ a
            probs = softmax_probs(model, x)
            grad = basis.T @ (probs @ model.gamma - phi0)
            if np.linalg.norm(grad) <= tol:
                return x
            if it == max_iter:
                break
            hess = basis.T @ covariance(model.gamma, probs) @ basis + 1e-10 * eye
            step = -np.linalg.solve(hess, grad)
            slope = grad @ step
            slack = 1e-13 * (1.0 + abs(f))
            t = 1.0
            while t > 1e-20:
                cand = a + t * step
                fc = objective(cand)
                if fc <= f + 1e-4 * t * slope + slack:
                    break
                t *= 0.5
            else:
                break
            a, f = cand, fc
    except (FloatingPointError, np.linalg.LinAlgError):
        pass
    raise NoMinimizer(f"KL projection onto beta.lam = {c:g} did not converge")
