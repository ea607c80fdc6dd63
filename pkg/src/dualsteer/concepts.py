"""Binary concepts: counterfactual pair schemes and concept/off-target factorization.

A scheme partitions the items into counterfactual pairs ``(y_i^0, y_i^1)`` and
neutral items. The off-target space has one cell per pair plus one per
neutral item. Several items may be collapsed onto one representative (e.g.
many images sharing one caption); their probabilities are summed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidScheme, NoPairMass
from .geometry import softmax_probs
from .model import SoftmaxModel

PAIR_MASS_FLOOR = 1e-300


@dataclass(frozen=True)
class ConceptScheme:
    pairs: tuple[tuple[int, int], ...]
    neutral: tuple[int, ...] = ()
    collapse: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        neutral = tuple(int(i) for i in self.neutral)
        collapse = {int(k): tuple(int(m) for m in v) for k, v in dict(self.collapse).items()}
        if not pairs:
            raise InvalidScheme("a concept scheme needs at least one counterfactual pair")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "neutral", neutral)
        object.__setattr__(self, "collapse", collapse)
        reps = [i for p in pairs for i in p] + list(neutral)
        if len(set(reps)) != len(reps):
            raise InvalidScheme("pair and neutral indices must be disjoint")
        bad = set(collapse) - set(reps)
        if bad:
            raise InvalidScheme(f"collapse keys {sorted(bad)} are not pair or neutral items")
        object.__setattr__(self, "_slot_cache", {})

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_cells(self) -> int:
        return self.n_pairs + len(self.neutral)

    def slot_index(self, V: int) -> np.ndarray:
        """Map every item to its slot: ``2i``/``2i+1`` for pair ``i``, then neutrals.

        Validates that the scheme covers exactly ``range(V)``.
        """
        cached = self._slot_cache.get(V)
        if cached is not None:
            return cached
        slots = np.full(V, -1, dtype=np.intp)
        reps = [(a, 2 * i) for i, (a, _) in enumerate(self.pairs)]
        reps += [(b, 2 * i + 1) for i, (_, b) in enumerate(self.pairs)]
        reps += [(y, 2 * self.n_pairs + j) for j, y in enumerate(self.neutral)]
        for item, slot in reps:
            for member in (item,) + self.collapse.get(item, ()):
                if not 0 <= member < V:
                    raise InvalidScheme(f"item index {member} out of range for V={V}")
                if slots[member] != -1:
                    raise InvalidScheme(f"item {member} assigned twice")
                slots[member] = slot
        missing = np.flatnonzero(slots < 0)
        if missing.size:
            raise InvalidScheme(f"{missing.size} items not covered by the scheme (first: {missing[0]})")
        slots.setflags(write=False)
        self._slot_cache[V] = slots
        return slots

    def slot_probs(self, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Aggregate item probabilities into ``(base, target, neutral)`` cells."""
        n = self.n_pairs
        mass = np.bincount(self.slot_index(len(probs)), weights=probs, minlength=2 * n + len(self.neutral))
        return mass[0 : 2 * n : 2], mass[1 : 2 * n : 2], mass[2 * n :]

    def to_json(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "neutral": list(self.neutral),
            "collapse": {str(k): list(v) for k, v in sorted(self.collapse.items())},
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ConceptScheme":
        try:
            return cls(
                pairs=[tuple(p) for p in data["pairs"]],
                neutral=data.get("neutral", []),
                collapse={int(k): v for k, v in (data.get("collapse") or {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidScheme(f"malformed scheme: {exc}") from None


def save_scheme(scheme: ConceptScheme, path) -> None:
    Path(path).write_text(json.dumps(scheme.to_json(), indent=1) + "\n", encoding="utf-8")


def load_scheme(path) -> ConceptScheme:
    return ConceptScheme.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class FactorizedView:
    """Concept marginal ``pw = (P(W=0), P(W=1))`` and off-target marginal ``pz``.

    ``pz[:n_pairs]`` are the shared-attribute cells, the rest are neutral items.
    """

    pw: np.ndarray
    pz: np.ndarray
    n_pairs: int

    @property
    def pair_mass(self) -> float:
        return float(self.pz[: self.n_pairs].sum())


def factorize_probs(scheme: ConceptScheme, probs: np.ndarray) -> FactorizedView:
    base, target, neutral = scheme.slot_probs(probs)
    b, t = base.sum(), target.sum()
    if b + t < PAIR_MASS_FLOOR:
        raise NoPairMass("counterfactual pairs carry no probability mass")
    pw = np.array([b, t]) / (b + t)
    pz = np.concatenate([base + target, neutral])
    return FactorizedView(pw, pz / pz.sum(), scheme.n_pairs)


def factorize(model: SoftmaxModel, scheme: ConceptScheme, lam) -> FactorizedView:
    """Induced concept and off-target marginals of ``P_lam``."""
    return factorize_probs(scheme, softmax_probs(model, lam))


def factorization_residual(model: SoftmaxModel, scheme: ConceptScheme, lam) -> float:
    """``max |P(y_i^w) - pw(w) pz(z_i)|`` over all pair cells; zero iff factorizable."""
    probs = softmax_probs(model, lam)
    base, target, _ = scheme.slot_probs(probs)
    view = factorize_probs(scheme, probs)
    zi = view.pz[: scheme.n_pairs]
    return float(max(np.abs(base - view.pw[0] * zi).max(), np.abs(target - view.pw[1] * zi).max()))


# -- exactly factorizable synthetic models -----------------------------------


@dataclass(frozen=True)
class FactorizableModelSpec:
    """Attribute vectors ``u_i`` per pair, concept vector ``v``, neutral vectors."""

    shared_dirs: np.ndarray
    concept_dir: np.ndarray
    neutral_dirs: np.ndarray

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.shared_dirs, dtype=np.float64))
        v = np.asarray(self.concept_dir, dtype=np.float64)
        nd = np.asarray(self.neutral_dirs, dtype=np.float64)
        if v.ndim != 1:
            raise DimensionMismatch("concept_dir must be a vector")
        d = v.shape[0]
        nd = nd.reshape(-1, d) if nd.size else np.zeros((0, d))
        if u.shape[1] != d or (nd.size and nd.shape[1] != d):
            raise DimensionMismatch("all direction vectors must share one dimension")
        if d < 2:
            raise DimensionMismatch("synthetic models need d >= 2")
        if not np.any(v):
            raise ValueError("concept_dir must be nonzero")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(nd))):
            raise ValueError("direction vectors must be finite")
        object.__setattr__(self, "shared_dirs", u)
        object.__setattr__(self, "concept_dir", v)
        object.__setattr__(self, "neutral_dirs", nd)

    @property
    def d(self) -> int:
        return self.concept_dir.shape[0]


def synthesize_factorizable(spec: FactorizableModelSpec, labels: Sequence[str] | None = None):
    """Build a model where every ``P_lam`` is exactly concept-factorizable.

    Items are laid out as ``y_1^0, y_1^1, y_2^0, ..., neutral...`` with
    ``gamma(y_i^w) = u_i + w v`` and ``gamma(y) = u_y``. Returns
    ``(model, scheme, probe)`` where the probe ``beta = v, b = 0`` satisfies
    ``P(W=1 | lam) = sigmoid(v . lam)`` identically.
    """
    from .probes import LinearProbe

    u, v, nd = spec.shared_dirs, spec.concept_dir, spec.neutral_dirs
    n, m = u.shape[0], nd.shape[0]
    rows = np.empty((2 * n + m, spec.d))
    rows[0 : 2 * n : 2] = u
    rows[1 : 2 * n : 2] = u + v
    rows[2 * n :] = nd
    if labels is None:
        labels = [f"p{i}_{w}" for i in range(n) for w in (0, 1)] + [f"n{j}" for j in range(m)]
    model = SoftmaxModel(tuple(labels), rows)
    scheme = ConceptScheme(
        pairs=[(2 * i, 2 * i + 1) for i in range(n)],
        neutral=list(range(2 * n, 2 * n + m)),
    )
    return model, scheme, LinearProbe(v.copy(), 0.0, "primal")


def random_factorizable_spec(
    rng: np.random.Generator,
    n_pairs: int,
    n_neutral: int,
    d: int,
    concept_scale: float = 8.0,
    indicator_scale: float = 16.0,
    free_scale: float = 6.0,
    shear: float = 0.3,
) -> FactorizableModelSpec:
    """Random testbed in which the off-target marginal can be held exactly fixed.

    Canonical layout: axis 0 carries the concept, axis 1 marks pair items
    (``indicator_scale`` on every ``u_i``, zero on neutrals), the remaining axes
    hold Gaussian attributes. A random shear ``I + shear * N / sqrt(d)`` then
    makes the geometry generic (attributes no longer orthogonal to the concept
    direction). With ``shear=0`` the attributes stay orthogonal to ``v``.

    The scales keep ``Cov[gamma | lam]`` well above the default steering
    regularization all the way to a 0.9999 concept probability.
    """
    if d < 2:
        raise DimensionMismatch("synthetic models need d >= 2")
    u = np.zeros((n_pairs, d))
    nd = np.zeros((n_neutral, d))
    u[:, 1] = indicator_scale
    u[:, 2:] = free_scale * rng.standard_normal((n_pairs, d - 2))
    nd[:, 2:] = free_scale * rng.standard_normal((n_neutral, d - 2))
    v = np.zeros(d)
    v[0] = concept_scale
    if shear:
        L = np.eye(d) + shear * rng.standard_normal((d, d)) / np.sqrt(d)
        u, nd, v = u @ L.T, nd @ L.T, L @ v
    return FactorizableModelSpec(u, v, nd)
