"""Command-line front end: ``dualsteer <subcommand> <config.ini>``.

Subcommands:

``synthesize``   write a factorizable model, its scheme, the exact probe and start points
``interpolate``  primal and/or dual interpolation traces with top-k item probabilities
``steer``        steering sweep over start points for each method, traces and binned summaries
``diagnose``     per-step dual cosine and probe-assumption columns for both methods
``metrics``      recompute trace metrics from an existing trace

Exit codes: 0 success, 1 numerical failure, 2 configuration error,
3 partial sweep (some runs failed, see ``manifest.json``), 4 I/O error.
Set ``DUALSTEER_WORKERS`` to override the worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concepts import (
    ConceptScheme,
    FactorizableModelSpec,
    factorize_probs,
    load_scheme,
    random_factorizable_spec,
    save_scheme,
    synthesize_factorizable,
)
from .config import RunConfig, load_points, read_config
from .errors import (
    ConfigError,
    DegenerateProbe,
    DimensionMismatch,
    DistributionCollapsed,
    DualSteerError,
    InvalidScheme,
    ModelFormatError,
)
from .geometry import softmax_probs
from .interpolation import e_interpolate, m_interpolate, uniform_ts
from .metrics import METRIC_NAMES, StepMetrics, bin_and_summarize, path_metrics, reduced_vocabulary
from .model import SoftmaxModel, load_model, save_model
from .probes import (
    LinearProbe,
    dual_mean_difference,
    fit_logistic_probe,
    load_probe,
    primal_mean_difference,
    save_probe,
)
from .reporting import (
    DIAGNOSTIC_COLUMNS,
    atomic_write_text,
    csv_text,
    fmt,
    parse_lambda_cell,
    read_trace,
    write_json,
    write_summary_csv,
    write_trace,
)
from .steering import SteeringPath, steer

log = logging.getLogger("dualsteer")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3, 4


# -- assembling inputs --------------------------------------------------------


def synthesis_spec(cfg: RunConfig) -> FactorizableModelSpec:
    s = cfg.synthesis
    if s is None:
        raise ConfigError("no [synthesis] section")
    try:
        if s.concept_dir is not None:
            if s.shared_dirs is None:
                raise ConfigError("[synthesis] concept_dir needs shared_dirs")
            nd = s.neutral_dirs if s.neutral_dirs is not None else np.zeros((0, len(s.concept_dir)))
            return FactorizableModelSpec(s.shared_dirs, s.concept_dir, nd)
        rng = np.random.default_rng([cfg.seed, 0])
        return random_factorizable_spec(
            rng, s.n_pairs, s.n_neutral, s.d, s.concept_scale, s.indicator_scale, s.free_scale, s.shear
        )
    except (ValueError, DualSteerError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid synthesis spec: {exc}") from None


def synthesized_starts(cfg: RunConfig, d: int) -> np.ndarray:
    s = cfg.synthesis
    rng = np.random.default_rng([cfg.seed, 1])
    return s.start_scale * rng.standard_normal((s.n_starts, d))


@dataclass
class Inputs:
    model: SoftmaxModel
    scheme: ConceptScheme | None
    probe: LinearProbe | None
    starts: np.ndarray | None


def load_inputs(cfg: RunConfig, need_scheme: bool = True, need_probe: bool = True, need_starts: bool = True) -> Inputs:
    exact_probe = scheme = None
    if cfg.model_path is not None:
        model = load_model(cfg.model_path)
    elif cfg.synthesis is not None:
        model, scheme, exact_probe = synthesize_factorizable(synthesis_spec(cfg))
    else:
        raise ConfigError("need [model] path or a [synthesis] section")
    if cfg.temperature != 1.0:
        model = model.scaled(cfg.temperature)

    if cfg.scheme_path is not None:
        scheme = load_scheme(cfg.scheme_path)
    if need_scheme:
        if scheme is None:
            raise ConfigError("need [scheme] path")
        scheme.slot_index(model.V)

    probe = build_probe(cfg, model, exact_probe) if need_probe else None

    starts = None
    if need_starts:
        if cfg.starts_path is not None:
            starts = load_points(cfg.starts_path)
        elif cfg.synthesis is not None:
            starts = synthesized_starts(cfg, model.d)
        else:
            raise ConfigError("need [steering] starts")
        if starts.size == 0:
            starts = np.zeros((0, model.d))
        if starts.shape[1] != model.d:
            raise ConfigError(f"start points have dimension {starts.shape[1]}, model has d={model.d}")
    return Inputs(model, scheme, probe, starts)


def build_probe(cfg: RunConfig, model: SoftmaxModel, exact: LinearProbe | None) -> LinearProbe:
    p = cfg.probe
    if p.kind == "file":
        if p.path is not None:
            probe = load_probe(p.path)
        elif exact is not None:
            probe = exact
        else:
            raise ConfigError("[probe] kind=file needs path")
    elif p.kind == "vector":
        if p.vector is None:
            raise ConfigError("[probe] kind=vector needs vector")
        probe = LinearProbe(p.vector, p.offset, "primal")
    elif p.kind in ("primal-md", "dual-md"):
        if p.base_points is None or p.target_points is None:
            raise ConfigError(f"[probe] kind={p.kind} needs base_points and target_points")
        base, target = load_points(p.base_points), load_points(p.target_points)
        if p.kind == "primal-md":
            probe = primal_mean_difference(base, target)
        else:
            probe = dual_mean_difference(model, base, target)
    else:
        if p.labeled_points is None:
            raise ConfigError("[probe] kind=logistic needs labeled_points (last column is the 0/1 label)")
        data = load_points(p.labeled_points)
        probe = fit_logistic_probe([(row[:-1], int(row[-1])) for row in data], iters=p.iters, lr=p.lr)
    if probe.beta.shape[0] != model.d:
        raise ConfigError(f"probe has dimension {probe.beta.shape[0]}, model has d={model.d}")
    return probe


# -- synthesize ---------------------------------------------------------------


def cmd_synthesize(cfg: RunConfig) -> int:
    spec = synthesis_spec(cfg)
    model, scheme, probe = synthesize_factorizable(spec)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.sgm")
    save_scheme(scheme, out / "scheme.json")
    save_probe(probe, out / "probe.json")
    written = ["model.sgm", "scheme.json", "probe.json"]
    if cfg.synthesis.n_starts > 0:
        starts = synthesized_starts(cfg, model.d)
        atomic_write_text(out / "starts.txt", "".join(" ".join(fmt(x) for x in row) + "\n" for row in starts))
        written.append("starts.txt")
    log.info("wrote %s to %s", ", ".join(written), out)
    return EXIT_OK


# -- interpolate --------------------------------------------------------------


def interpolation_rows(model: SoftmaxModel, path, top: int) -> tuple[list[str], list[list]]:
    k = min(top, model.V)
    header = ["t"] + [c for j in range(1, k + 1) for c in (f"item{j}", f"prob{j}")] + ["others"]
    rows = []
    for t, lam in zip(path.ts, path.points):
        p = softmax_probs(model, lam)
        order = np.argsort(-p, kind="stable")[:k]
        row = [float(t)]
        for i in order:
            row += [model.labels[i], float(p[i])]
        row.append(float(max(0.0, 1.0 - p[order].sum())))
        rows.append(row)
    return header, rows


def cmd_interpolate(cfg: RunConfig) -> int:
    ip = cfg.interpolate
    inputs = load_inputs(cfg, need_scheme=False, need_probe=False, need_starts=False)
    model = inputs.model
    if ip.lambda0 is None or ip.lambda1 is None:
        raise ConfigError("[interpolate] needs lambda0 and lambda1")
    for name, lam in (("lambda0", ip.lambda0), ("lambda1", ip.lambda1)):
        if lam.shape != (model.d,):
            raise ConfigError(f"[interpolate] {name} has {lam.size} entries, model has d={model.d}")
    ts = uniform_ts(ip.steps)
    for kind in ip.kinds:
        if kind == "primal":
            path = e_interpolate(model, ip.lambda0, ip.lambda1, ts)
        else:
            path = m_interpolate(model, ip.lambda0, ip.lambda1, ts, tol=ip.tol)
        header, rows = interpolation_rows(model, path, ip.top)
        atomic_write_text(cfg.output_dir / f"interpolate_{kind}.csv", csv_text(header, rows))
    return EXIT_OK


# -- steering sweeps ----------------------------------------------------------


@dataclass
class RunResult:
    index: int
    method: str
    path: SteeringPath | None
    error: str | None = None
    message: str = ""


def _run_one(task, inputs: Inputs, cfg: RunConfig) -> RunResult:
    index, method = task
    try:
        path = steer(method, inputs.model, inputs.starts[index], inputs.probe, cfg.steering, inputs.scheme)
        err, msg = None, ""
    except DistributionCollapsed as exc:
        path, err, msg = exc.path, type(exc).__name__, str(exc)
    except (DualSteerError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return RunResult(index, method, None, type(exc).__name__, str(exc))
    if path is not None and cfg.metrics.reduce_ranks:
        views = [factorize_probs(inputs.scheme, softmax_probs(inputs.model, x)) for x in path.points]
        vocab = reduced_vocabulary(views, cfg.metrics.reduced_vocab_mass)
        path.per_step = path_metrics(
            inputs.model, inputs.scheme, inputs.probe, path.points, path.recorded, cfg.metrics.kl_floor, vocab
        )
    return RunResult(index, method, path, err, msg)


def run_sweep(cfg: RunConfig, inputs: Inputs) -> list[RunResult]:
    """All (start, method) runs, ordered by task index regardless of worker count."""
    tasks = [(i, m) for i in range(len(inputs.starts)) for m in cfg.methods]
    if cfg.workers == 1:
        return [_run_one(t, inputs, cfg) for t in tasks]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(lambda t: _run_one(t, inputs, cfg), tasks))


def _manifest(cfg: RunConfig, inputs: Inputs, results: list[RunResult]) -> dict:
    runs = []
    for r in results:
        entry = {"start": r.index, "method": r.method, "status": "ok" if r.error is None else "error"}
        if r.path is not None:
            entry.update(steps=r.path.n_steps, stop_reason=r.path.stop_reason, rank_deficient=r.path.rank_deficient)
            entry["eta"] = r.path.config.eta
        if r.error is not None:
            entry.update(error=r.error, message=r.message)
        runs.append(entry)
    st = cfg.steering
    return {
        "seed": cfg.seed,
        "model": {"V": inputs.model.V, "d": inputs.model.d},
        "steering": {
            "alpha": st.alpha,
            "eta": st.eta,
            "max_steps": st.max_steps,
            "terminate_at": st.terminate_at,
            "top_k": st.top_k,
            "record_every": st.record_every,
            "normalize": st.normalize,
        },
        "metrics": {"kl_floor": cfg.metrics.kl_floor, "n_bins": cfg.metrics.n_bins},
        "n_failed": sum(r.error is not None for r in results),
        "runs": runs,
    }


def _save_npy(path: Path, arr: np.ndarray) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        np.save(fh, np.asarray(arr, dtype="<f8"))
    tmp.replace(path)


def cmd_steer(cfg: RunConfig) -> int:
    inputs = load_inputs(cfg)
    results = run_sweep(cfg, inputs)
    out = cfg.output_dir
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "summary").mkdir(parents=True, exist_ok=True)
    for r in results:
        if r.path is None:
            continue
        stem = out / "traces" / f"{r.method}_{r.index:04d}"
        write_trace(stem.with_suffix(".csv"), r.path.points, r.path.recorded, r.path.per_step)
        _save_npy(stem.with_suffix(".npy"), r.path.points)
    for method in cfg.methods:
        runs = [r.path.per_step for r in results if r.method == method and r.error is None and r.path.per_step]
        if not runs:
            continue
        summary = bin_and_summarize(runs, cfg.metrics.n_bins)
        for metric in METRIC_NAMES:
            write_summary_csv(out / "summary" / f"{method}_{metric}.csv", summary, metric)
        write_json(out / "summary" / f"{method}.json", summary.to_json())
    manifest = _manifest(cfg, inputs, results)
    write_json(out / "manifest.json", manifest)
    if manifest["n_failed"]:
        log.warning("%d of %d runs failed, see %s", manifest["n_failed"], len(results), out / "manifest.json")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig) -> int:
    inputs = load_inputs(cfg)
    results = run_sweep(cfg, inputs)
    rows = []
    for r in results:
        if r.path is None:
            continue
        for i, m in zip(r.path.recorded, r.path.per_step):
            rows.append([r.index, r.method, i, m.target_prob, m.dual_cosine, m.projection, m.logit])
    out = cfg.output_dir
    atomic_write_text(out / "diagnostics.csv", csv_text(DIAGNOSTIC_COLUMNS, rows))
    for method in cfg.methods:
        runs = [r.path.per_step for r in results if r.method == method and r.error is None and r.path.per_step]
        if runs:
            summary = bin_and_summarize(runs, cfg.metrics.n_bins, ("dual_cosine",))
            write_summary_csv(out / f"diagnostics_cosine_{method}.csv", summary)
    manifest = _manifest(cfg, inputs, results)
    write_json(out / "diagnostics_manifest.json", manifest)
    return EXIT_PARTIAL if manifest["n_failed"] else EXIT_OK


def cmd_metrics(cfg: RunConfig) -> int:
    trace = cfg.metrics.trace
    if trace is None:
        raise ConfigError("[metrics] needs trace = <trace csv>")
    if not trace.exists():
        raise ConfigError(f"[metrics] trace: file not found: {trace}")
    inputs = load_inputs(cfg, need_starts=False)
    try:
        steps, cells, _ = read_trace(trace)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sidecar = trace.with_suffix(".npy")
    if sidecar.exists():
        points = np.load(sidecar)
        indices = steps
    else:
        parsed = [parse_lambda_cell(c) for c in cells]
        if any(p is None for p in parsed):
            raise ConfigError(f"{trace} stores hashed points and has no {sidecar.name}")
        points = np.array(parsed).reshape(len(parsed), -1) if parsed else np.zeros((0, inputs.model.d))
        indices = list(range(len(points)))
    if len(points) == 0:
        metrics: list[StepMetrics] = []
    else:
        vocab = None
        if cfg.metrics.reduce_ranks:
            views = [factorize_probs(inputs.scheme, softmax_probs(inputs.model, x)) for x in points]
            vocab = reduced_vocabulary(views, cfg.metrics.reduced_vocab_mass)
        metrics = path_metrics(
            inputs.model, inputs.scheme, inputs.probe, points, indices, cfg.metrics.kl_floor, vocab
        )
    write_trace(cfg.output_dir / f"metrics_{trace.stem}.csv", points, steps, metrics)
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "interpolate": cmd_interpolate,
    "steer": cmd_steer,
    "diagnose": cmd_diagnose,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualsteer", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        p.add_argument("config", type=Path, help="INI run configuration")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config entry (repeatable)",
        )
    return parser


def _overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = read_config(args.config, _overrides(args.set))
        return COMMANDS[args.command](cfg)
    except (ConfigError, ModelFormatError, InvalidScheme, DegenerateProbe, DimensionMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DualSteerError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
