"""Linear concept probes and the probing-assumption diagnostic."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.special import expit

from .concepts import ConceptScheme, factorize
from .errors import DegenerateProbe, DimensionMismatch
from .geometry import dual_map
from .model import SoftmaxModel

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class LinearProbe:
    """``P(W=1 | x) = sigmoid(beta . x + offset)`` with ``x = lam`` or ``x = phi(lam)``."""

    beta: np.ndarray
    offset: float = 0.0
    input_space: Literal["primal", "dual"] = "primal"

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        if beta.ndim != 1:
            raise DimensionMismatch("beta must be a vector")
        if not np.all(np.isfinite(beta)):
            raise DegenerateProbe("beta has non-finite entries")
        if np.linalg.norm(beta) < DEGENERATE_NORM:
            raise DegenerateProbe(f"|beta| < {DEGENERATE_NORM:g}")
        if self.input_space not in ("primal", "dual"):
            raise ValueError(f"unknown input space {self.input_space!r}")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.beta))

    @property
    def direction(self) -> np.ndarray:
        return self.beta / self.norm

    def scaled(self, c: float) -> "LinearProbe":
        return LinearProbe(self.beta * c, self.offset * c, self.input_space)

    def to_json(self) -> dict:
        return {"beta": self.beta.tolist(), "offset": self.offset, "space": self.input_space}

    @classmethod
    def from_json(cls, data) -> "LinearProbe":
        return cls(np.asarray(data["beta"], float), float(data.get("offset", 0.0)), data.get("space", "primal"))


def save_probe(probe: LinearProbe, path) -> None:
    Path(path).write_text(json.dumps(probe.to_json()) + "\n", encoding="utf-8")


def load_probe(path) -> LinearProbe:
    return LinearProbe.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _stack(points) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("probe construction needs non-empty point sets")
    return arr


def primal_mean_difference(base, target) -> LinearProbe:
    """``beta = mean(target) - mean(base)`` over primal points."""
    b, t = _stack(base), _stack(target)
    if b.shape[1] != t.shape[1]:
        raise DimensionMismatch("base and target points differ in dimension")
    return LinearProbe(t.mean(axis=0) - b.mean(axis=0), 0.0, "primal")


def dual_mean_difference(model: SoftmaxModel, base, target) -> LinearProbe:
    """``beta = mean(phi(target)) - mean(phi(base))``, used as a probe on ``lam``."""
    b = np.array([dual_map(model, x) for x in _stack(base)])
    t = np.array([dual_map(model, x) for x in _stack(target)])
    return LinearProbe(t.mean(axis=0) - b.mean(axis=0), 0.0, "primal")


def probe_input(probe: LinearProbe, model: SoftmaxModel, lam) -> np.ndarray:
    lam = model.check_point(lam)
    return dual_map(model, lam) if probe.input_space == "dual" else lam


def probe_logit(probe: LinearProbe, model: SoftmaxModel, lam) -> float:
    return float(probe.beta @ probe_input(probe, model, lam) + probe.offset)


def probe_projection(probe: LinearProbe, model: SoftmaxModel, lam) -> float:
    """Normalized projection ``beta . x / |beta|``."""
    return float(probe.direction @ probe_input(probe, model, lam))


def fit_logistic_probe(
    points: Sequence[tuple[np.ndarray, int]],
    iters: int = 2000,
    lr: float = 0.5,
    l2: float = 0.0,
) -> LinearProbe:
    """Full-batch gradient descent on the mean logistic loss, from zero weights.

    Deterministic for a fixed point ordering.
    """
    X = np.array([np.asarray(p, dtype=np.float64) for p, _ in points])
    y = np.array([int(lbl) for _, lbl in points], dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty list of (point, label) pairs")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise DegenerateProbe("logistic fit needs both labels present")
    n = X.shape[0]
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(iters):
        r = expit(X @ w + b) - y
        w -= lr * (X.T @ r / n + l2 * w)
        b -= lr * r.mean()
    return LinearProbe(w, b, "primal")


def probe_assumption_trace(
    probe: LinearProbe,
    model: SoftmaxModel,
    points,
    scheme: ConceptScheme,
) -> np.ndarray:
    """Per point: normalized probe projection and ``logit P(W=1 | lam)``.

    ``points`` is a sequence of primal vectors or anything with a ``points``
    attribute (a steering path). Returns an ``(n, 2)`` array.
    """
    pts = getattr(points, "points", points)
    out = np.empty((len(pts), 2))
    for i, lam in enumerate(pts):
        pw = factorize(model, scheme, lam).pw
        out[i] = probe_projection(probe, model, lam), np.log(pw[1]) - np.log(pw[0])
    return out
