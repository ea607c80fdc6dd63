"""Run configuration: an INI file with fixed sections.

Example::

    [run]
    output_dir = out
    seed = 0

    [model]
    path = model.sgm
    temperature = 1.0

    [scheme]
    path = scheme.json

    [probe]
    kind = file            ; file | vector | primal-md | dual-md | logistic
    path = probe.json

    [steering]
    alpha = 0.005
    eta = auto
    max_steps = 1000
    terminate_at = 0.9999
    top_k = auto
    starts = starts.txt
    methods = euclidean, dual

    [metrics]
    kl_floor = 1e-12
    n_bins = 20
    reduced_vocab_mass = 0.99

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .metrics import KL_FLOOR, N_BINS
from .steering import DEFAULT_ALPHA, DEFAULT_TERMINATE_AT, SteeringConfig

WORKERS_ENV = "DUALSTEER_WORKERS"
PROBE_KINDS = ("file", "vector", "primal-md", "dual-md", "logistic")


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.replace(",", " ").split()], dtype=np.float64)
    except ValueError:
        raise ConfigError(f"not a list of numbers: {text!r}") from None


def parse_matrix(text: str) -> np.ndarray:
    """Rows separated by ``;``, entries by whitespace or commas."""
    rows = [parse_vector(r) for r in text.split(";") if r.strip()]
    if not rows:
        return np.zeros((0, 0))
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix: {text!r}")
    return np.array(rows)


def load_points(path) -> np.ndarray:
    """A matrix of primal points, one per row (``.npy`` or whitespace text)."""
    path = Path(path)
    if path.suffix == ".npy":
        pts = np.load(path)
    else:
        text = path.read_text(encoding="utf-8")
        pts = np.loadtxt(path, ndmin=2) if text.strip() else np.zeros((0, 0))
    return np.atleast_2d(np.asarray(pts, dtype=np.float64)) if pts.size else np.zeros((0, 0))


@dataclass
class SynthesisConfig:
    n_pairs: int = 2
    n_neutral: int = 1
    d: int = 3
    shared_dirs: np.ndarray | None = None
    concept_dir: np.ndarray | None = None
    neutral_dirs: np.ndarray | None = None
    concept_scale: float = 8.0
    indicator_scale: float = 16.0
    free_scale: float = 6.0
    shear: float = 0.3
    n_starts: int = 20
    start_scale: float = 0.025


@dataclass
class ProbeConfig:
    kind: str = "file"
    path: Path | None = None
    vector: np.ndarray | None = None
    offset: float = 0.0
    base_points: Path | None = None
    target_points: Path | None = None
    labeled_points: Path | None = None
    iters: int = 2000
    lr: float = 0.5


@dataclass
class InterpolateConfig:
    lambda0: np.ndarray | None = None
    lambda1: np.ndarray | None = None
    kinds: tuple[str, ...] = ("primal", "dual")
    steps: int = 21
    top: int = 5
    tol: float = 1e-10


@dataclass
class MetricConfig:
    kl_floor: float = KL_FLOOR
    n_bins: int = N_BINS
    reduced_vocab_mass: float = 0.99
    reduce_ranks: bool = False
    trace: Path | None = None


@dataclass
class RunConfig:
    base_dir: Path
    output_dir: Path
    seed: int = 0
    workers: int = 1
    model_path: Path | None = None
    temperature: float = 1.0
    synthesis: SynthesisConfig | None = None
    scheme_path: Path | None = None
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    steering: SteeringConfig = field(default_factory=SteeringConfig)
    methods: tuple[str, ...] = ("euclidean", "dual")
    starts_path: Path | None = None
    metrics: MetricConfig = field(default_factory=MetricConfig)
    interpolate: InterpolateConfig = field(default_factory=InterpolateConfig)


class _Section:
    """Typed accessors over one configparser section with uniform error messages."""

    def __init__(self, cp: configparser.ConfigParser, name: str, base: Path):
        self.name = name
        self.sec = cp[name] if cp.has_section(name) else {}
        self.base = base

    def __contains__(self, key):
        return key in self.sec

    def _raw(self, key):
        return self.sec[key].strip()

    def get(self, key, default=None):
        return self._raw(key) if key in self.sec else default

    def _convert(self, key, default, fn, what):
        if key not in self.sec or self._raw(key).lower() in ("", "auto", "none"):
            return default
        try:
            return fn(self._raw(key))
        except (ValueError, ConfigError):
            raise ConfigError(f"[{self.name}] {key}: expected {what}, got {self._raw(key)!r}") from None

    def int(self, key, default=None):
        return self._convert(key, default, int, "an integer")

    def float(self, key, default=None):
        return self._convert(key, default, float, "a number")

    def bool(self, key, default=False):
        def conv(s):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)

        return self._convert(key, default, conv, "a boolean")

    def vector(self, key, default=None):
        return self._convert(key, default, parse_vector, "a vector")

    def matrix(self, key, default=None):
        return self._convert(key, default, parse_matrix, "a matrix")

    def path(self, key, must_exist=True):
        if key not in self.sec or not self._raw(key):
            return None
        p = Path(os.path.expanduser(self._raw(key)))
        p = p if p.is_absolute() else self.base / p
        if must_exist and not p.exists():
            raise ConfigError(f"[{self.name}] {key}: file not found: {p}")
        return p


def read_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse a run configuration. ``overrides`` maps ``section.key`` to raw values."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        sec, key = dotted.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp[sec][key] = value
    base = path.resolve().parent

    def section(name):
        return _Section(cp, name, base)

    run = section("run")
    out = Path(run.get("output_dir", "out"))
    cfg = RunConfig(base_dir=base, output_dir=out if out.is_absolute() else base / out)
    cfg.seed = run.int("seed", 0)
    cfg.workers = run.int("workers", 1)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            cfg.workers = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from None
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")

    model = section("model")
    cfg.model_path = model.path("path")
    cfg.temperature = model.float("temperature", 1.0)
    if not np.isfinite(cfg.temperature) or cfg.temperature <= 0:
        raise ConfigError("[model] temperature must be a positive number")

    if cp.has_section("synthesis"):
        syn = section("synthesis")
        cfg.synthesis = SynthesisConfig(
            n_pairs=syn.int("n_pairs", 2),
            n_neutral=syn.int("n_neutral", 1),
            d=syn.int("d", 3),
            shared_dirs=syn.matrix("shared_dirs"),
            concept_dir=syn.vector("concept_dir"),
            neutral_dirs=syn.matrix("neutral_dirs"),
            concept_scale=syn.float("concept_scale", 8.0),
            indicator_scale=syn.float("indicator_scale", 16.0),
            free_scale=syn.float("free_scale", 6.0),
            shear=syn.float("shear", 0.3),
            n_starts=syn.int("n_starts", 20),
            start_scale=syn.float("start_scale", 0.025),
        )
        s = cfg.synthesis
        if s.n_pairs < 1 or s.n_neutral < 0 or s.d < 2 or s.n_starts < 0:
            raise ConfigError("[synthesis] needs n_pairs >= 1, n_neutral >= 0, d >= 2, n_starts >= 0")

    cfg.scheme_path = section("scheme").path("path")

    pr = section("probe")
    kind = pr.get("kind", "file")
    if kind not in PROBE_KINDS:
        raise ConfigError(f"[probe] kind must be one of {', '.join(PROBE_KINDS)}")
    cfg.probe = ProbeConfig(
        kind=kind,
        path=pr.path("path"),
        vector=pr.vector("vector"),
        offset=pr.float("offset", 0.0),
        base_points=pr.path("base_points"),
        target_points=pr.path("target_points"),
        labeled_points=pr.path("labeled_points"),
        iters=pr.int("iters", 2000),
        lr=pr.float("lr", 0.5),
    )

    st = section("steering")
    try:
        cfg.steering = SteeringConfig(
            alpha=st.float("alpha", DEFAULT_ALPHA),
            eta=st.float("eta", None),
            max_steps=st.int("max_steps", 1000),
            terminate_at=st.float("terminate_at", DEFAULT_TERMINATE_AT),
            top_k=st.int("top_k", None),
            record_every=st.int("record_every", 1),
            normalize=st.bool("normalize", True),
            kl_floor=section("metrics").float("kl_floor", KL_FLOOR),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[steering] {exc}") from None
    methods = tuple(m.strip() for m in st.get("methods", "euclidean, dual").split(",") if m.strip())
    if not methods or any(m not in ("euclidean", "dual") for m in methods):
        raise ConfigError("[steering] methods must list euclidean and/or dual")
    cfg.methods = methods
    cfg.starts_path = st.path("starts")

    me = section("metrics")
    cfg.metrics = MetricConfig(
        kl_floor=me.float("kl_floor", KL_FLOOR),
        n_bins=me.int("n_bins", N_BINS),
        reduced_vocab_mass=me.float("reduced_vocab_mass", 0.99),
        reduce_ranks=me.bool("reduce_ranks", False),
        trace=me.path("trace", must_exist=False),
    )
    if cfg.metrics.n_bins < 1 or not 0 < cfg.metrics.reduced_vocab_mass <= 1:
        raise ConfigError("[metrics] n_bins must be >= 1 and reduced_vocab_mass in (0, 1]")

    ip = section("interpolate")
    kind = ip.get("kind", "both")
    kinds = ("primal", "dual") if kind == "both" else (kind,)
    if any(k not in ("primal", "dual") for k in kinds):
        raise ConfigError("[interpolate] kind must be primal, dual or both")
    cfg.interpolate = InterpolateConfig(
        lambda0=ip.vector("lambda0"),
        lambda1=ip.vector("lambda1"),
        kinds=kinds,
        steps=ip.int("steps", 21),
        top=ip.int("top", 5),
        tol=ip.float("tol", 1e-10),
    )
    if cfg.interpolate.steps < 2 or cfg.interpolate.top < 1:
        raise ConfigError("[interpolate] needs steps >= 2 and top >= 1")
    return cfg
