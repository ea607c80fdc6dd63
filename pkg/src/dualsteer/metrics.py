"""Steering metrics: target success, off-target preservation, diagnostics, binning."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.special import rel_entr

from .concepts import ConceptScheme, FactorizedView, factorization_residual, factorize, factorize_probs
from .errors import NotFactorizable, ZeroDisplacement
from .geometry import dual_map, kl, softmax_probs
from .model import SoftmaxModel
from .probes import LinearProbe, probe_projection

KL_FLOOR = 1e-12
N_BINS = 20
FACTORIZABLE_TOL = 1e-8
METRIC_NAMES = ("target_prob", "pair_mass", "offtarget_kl", "rank_diff", "dual_cosine")


@dataclass(frozen=True)
class StepMetrics:
    target_prob: float
    pair_mass: float
    offtarget_kl: float
    rank_diff: float
    dual_cosine: float  # nan where no next step exists
    projection: float = math.nan
    logit: float = math.nan

    def as_dict(self) -> dict:
        return asdict(self)


def target_prob(model: SoftmaxModel, scheme: ConceptScheme, lam) -> float:
    """Target-pair mass over total pair mass, ``P(W=1 | lam)``."""
    return float(factorize(model, scheme, lam).pw[1])


def pair_mass(model: SoftmaxModel, scheme: ConceptScheme, lam) -> float:
    base, target, _ = scheme.slot_probs(softmax_probs(model, lam))
    return float(base.sum() + target.sum())


def kl_cells(p0: np.ndarray, pt: np.ndarray, floor: float = KL_FLOOR) -> float:
    """``sum p0 log(p0 / max(pt, floor))``; cells with ``p0 = 0`` contribute nothing."""
    return float(np.sum(rel_entr(p0, np.maximum(pt, floor))))


def offtarget_kl(model: SoftmaxModel, scheme: ConceptScheme, lam0, lam_t, floor: float = KL_FLOOR) -> float:
    """``KL(P^Z_lam0 || P^Z_lamt)`` with a floor on the second argument."""
    return kl_cells(factorize(model, scheme, lam0).pz, factorize(model, scheme, lam_t).pz, floor)


def ranks(p: np.ndarray) -> np.ndarray:
    """1-based ranks by descending probability, ties to the lower index."""
    order = np.argsort(-p, kind="stable")
    r = np.empty(len(p), dtype=np.int64)
    r[order] = np.arange(1, len(p) + 1)
    return r


def rank_diff_cells(pz0: np.ndarray, pzt: np.ndarray, reduced_vocab=None) -> float:
    """``sum_z P0(z) |1/rank_t(z) - 1/rank_0(z)|``, optionally within a reduced cell set."""
    if reduced_vocab is not None:
        keep = np.asarray(sorted(set(int(i) for i in reduced_vocab)), dtype=np.intp)
        pz0, pzt = pz0[keep], pzt[keep]
    return float(np.sum(pz0 * np.abs(1.0 / ranks(pzt) - 1.0 / ranks(pz0))))


def rank_diff(model: SoftmaxModel, scheme: ConceptScheme, lam0, lam_t, reduced_vocab=None) -> float:
    return rank_diff_cells(factorize(model, scheme, lam0).pz, factorize(model, scheme, lam_t).pz, reduced_vocab)


def top_mass_cells(pz: np.ndarray, mass: float = 0.99) -> np.ndarray:
    """Smallest prefix of cells (by descending probability) holding ``mass``."""
    order = np.argsort(-pz, kind="stable")
    cum = np.cumsum(pz[order])
    n = int(np.searchsorted(cum, mass * cum[-1], side="left")) + 1
    return np.sort(order[: min(n, len(pz))])


def reduced_vocabulary(views: Sequence[FactorizedView], mass: float = 0.99, n_samples: int | None = 10) -> np.ndarray:
    """Union of the top-``mass`` off-target cells at equally spaced path steps."""
    if not views:
        return np.zeros(0, dtype=np.intp)
    if n_samples is None or n_samples >= len(views):
        picks = range(len(views))
    else:
        picks = np.unique(np.linspace(0, len(views) - 1, n_samples).round().astype(int))
    cells = set()
    for i in picks:
        cells.update(top_mass_cells(views[i].pz, mass).tolist())
    return np.array(sorted(cells), dtype=np.intp)


def dual_step_cosine(model: SoftmaxModel, probe: LinearProbe, lam_t, lam_next) -> float:
    """Cosine between the dual displacement ``phi(next) - phi(t)`` and ``beta``."""
    step = dual_map(model, lam_next) - dual_map(model, lam_t)
    return _cosine(step, probe.beta)


def _cosine(step: np.ndarray, beta: np.ndarray) -> float:
    n = np.linalg.norm(step)
    if n == 0.0:
        raise ZeroDisplacement("dual displacement is zero")
    return float(np.clip(step @ beta / (n * np.linalg.norm(beta)), -1.0, 1.0))


def kl_decomposition(
    model: SoftmaxModel,
    scheme: ConceptScheme,
    lam_a,
    lam_b,
    direction: Literal["forward", "reverse"] = "forward",
):
    """Split a KL divergence into concept and off-target parts.

    ``forward`` decomposes ``KL(P_a || P_b)``, ``reverse`` decomposes
    ``KL(P_b || P_a)``. Returns ``(pair_mass_weight, concept_kl, offtarget_kl,
    total_kl)`` where ``weight * concept_kl + offtarget_kl == total_kl``; the
    weight is the pair mass under the first argument of the KL.
    """
    for lam in (lam_a, lam_b):
        res = factorization_residual(model, scheme, lam)
        if res > FACTORIZABLE_TOL:
            raise NotFactorizable(f"factorization residual {res:.3g} exceeds {FACTORIZABLE_TOL:g}")
    if direction == "forward":
        first, second = lam_a, lam_b
    elif direction == "reverse":
        first, second = lam_b, lam_a
    else:
        raise ValueError(f"direction must be 'forward' or 'reverse', not {direction!r}")
    v1, v2 = factorize(model, scheme, first), factorize(model, scheme, second)
    weight = v1.pair_mass
    concept = float(np.sum(rel_entr(v1.pw, v2.pw)))
    off = float(np.sum(rel_entr(v1.pz, v2.pz)))
    total = kl(model, first, second)
    gap = abs(weight * concept + off - total)
    if gap > 1e-10 * max(1.0, abs(total)):
        raise NotFactorizable(f"decomposition mismatch {gap:.3g}")
    return weight, concept, off, total


def path_metrics(
    model: SoftmaxModel,
    scheme: ConceptScheme,
    probe: LinearProbe,
    points,
    indices: Iterable[int] | None = None,
    floor: float = KL_FLOOR,
    reduced_vocab=None,
) -> list[StepMetrics]:
    """Metrics at the requested path indices (all by default), relative to ``points[0]``.

    ``dual_cosine`` uses the step to the next point and is nan at the last one.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return []
    idx = range(len(points)) if indices is None else list(indices)
    view0 = factorize(model, scheme, points[0])
    out = []
    for i in idx:
        probs = softmax_probs(model, points[i])
        view = factorize_probs(scheme, probs)
        cos = math.nan
        if i + 1 < len(points):
            try:
                cos = _cosine(dual_map(model, points[i + 1]) - probs @ model.gamma, probe.beta)
            except ZeroDisplacement:
                pass
        base, target, _ = scheme.slot_probs(probs)
        out.append(
            StepMetrics(
                target_prob=float(view.pw[1]),
                pair_mass=float(base.sum() + target.sum()),
                offtarget_kl=kl_cells(view0.pz, view.pz, floor),
                rank_diff=rank_diff_cells(view0.pz, view.pz, reduced_vocab),
                dual_cosine=cos,
                projection=probe_projection(probe, model, points[i]),
                logit=float(np.log(view.pw[1]) - np.log(view.pw[0])),
            )
        )
    return out


# -- binned aggregation ------------------------------------------------------


@dataclass(frozen=True)
class BinnedSummary:
    """Per-bin mean and SEM across runs, bins over the target probability.

    ``count[b, m]`` is the number of runs that populated bin ``b`` for metric
    ``m``; the SEM uses that per-bin count and is nan when it is below two.
    """

    edges: np.ndarray
    metrics: tuple[str, ...]
    mean: np.ndarray
    sem: np.ndarray
    count: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    def rows(self) -> list[dict]:
        out = []
        for m, name in enumerate(self.metrics):
            for b in range(self.n_bins):
                out.append(
                    {
                        "bin_lo": float(self.edges[b]),
                        "bin_hi": float(self.edges[b + 1]),
                        "metric": name,
                        "mean": float(self.mean[b, m]),
                        "sem": float(self.sem[b, m]),
                        "count": int(self.count[b, m]),
                    }
                )
        return out

    def column(self, metric: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.metrics.index(metric)
        return self.mean[:, m], self.sem[:, m], self.count[:, m]

    def to_json(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(x) else float(x) for x in row] for row in a]

        return {
            "edges": self.edges.tolist(),
            "metrics": list(self.metrics),
            "mean": clean(self.mean),
            "sem": clean(self.sem),
            "count": self.count.tolist(),
        }


def _metric_value(step, name: str) -> float:
    return float(step[name] if isinstance(step, dict) else getattr(step, name))


def bin_and_summarize(
    runs: Sequence[Sequence[StepMetrics]],
    n_bins: int = N_BINS,
    metrics: Sequence[str] = METRIC_NAMES,
) -> BinnedSummary:
    """Two-stage aggregation: average within each bin per run, then across runs.

    Steps are binned by ``target_prob`` into ``n_bins`` equal bins on [0, 1];
    nan metric values are skipped. Empty bins get count 0 and a nan mean.
    """
    if not runs:
        raise ValueError("need at least one run")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    metrics = tuple(metrics)
    # per-run per-bin means, nan where the run has no value in the bin
    per_run = np.full((len(runs), n_bins, len(metrics)), np.nan)
    for r, steps in enumerate(runs):
        if not len(steps):
            continue
        tp = np.array([_metric_value(s, "target_prob") for s in steps])
        vals = np.array([[_metric_value(s, m) for m in metrics] for s in steps])
        bins = np.minimum((np.clip(tp, 0.0, 1.0) * n_bins).astype(int), n_bins - 1)
        for b in np.unique(bins):
            per_run[r, b] = _nanmean(vals[bins == b])
    count = np.isfinite(per_run).sum(axis=0)
    mean = _nanmean(per_run)
    dev = np.where(np.isfinite(per_run), per_run - mean[None], 0.0)
    var = (dev**2).sum(axis=0) / np.maximum(count - 1, 1)
    sem = np.where(count > 1, np.sqrt(var / np.maximum(count, 1)), np.nan)
    return BinnedSummary(edges, metrics, mean, sem, count)


def _nanmean(x: np.ndarray) -> np.ndarray:
    """Column means over axis 0 ignoring nan; nan where a column has no values."""
    ok = np.isfinite(x)
    n = ok.sum(axis=0)
    total = np.where(ok, x, 0.0).sum(axis=0)
    return np.where(n > 0, total / np.maximum(n, 1), np.nan)
