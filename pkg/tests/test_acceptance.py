"""End-to-end acceptance checks, one test per criterion.

Each test asserts its own tolerance and wall-clock budget; the terminal
summary prints one PASS/FAIL line per criterion.
"""

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from dualsteer import (
    LinearProbe,
    SteeringConfig,
    bin_and_summarize,
    dual_map,
    dual_projection_target,
    dual_steer,
    e_interpolate,
    euclidean_steer,
    factorize,
    hessian,
    kl,
    load_model,
    log_normalizer,
    m_interpolate,
    make_model,
    random_factorizable_spec,
    save_model,
    softmax_probs,
    synthesize_factorizable,
)
from dualsteer.cli import EXIT_OK, main
from dualsteer.config import read_config
from dualsteer.interpolation import weighted_reverse_kl
from dualsteer.metrics import kl_decomposition
from dualsteer.oracle import constrained_min_kl, direct_kl, finite_diff_gradient, finite_diff_jacobian
from dualsteer.probes import probe_assumption_trace

criterion = pytest.mark.criterion


@contextmanager
def budget(seconds: float):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"took {elapsed:.1f}s, budget {seconds}s"


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@criterion(1, "Bregman KL equals direct KL (1000 instances, 1e-10, <5s)")
def test_c1_bregman_identity():
    r = np.random.default_rng(101)
    worst = 0.0
    with budget(5.0):
        for _ in range(1000):
            V, d = int(r.integers(2, 51)), int(r.integers(1, 9))
            m = make_model(r.standard_normal((V, d)))
            a, b = r.standard_normal(d), r.standard_normal(d)
            worst = max(worst, abs(kl(m, a, b) - direct_kl(m, a, b)))
    assert worst < 1e-10


@criterion(2, "dual map and Hessian match finite differences (200 instances, <10s)")
def test_c2_derivatives():
    r = np.random.default_rng(202)
    with budget(10.0):
        for _ in range(200):
            V, d = int(r.integers(2, 51)), int(r.integers(1, 9))
            m = make_model(r.standard_normal((V, d)))
            lam = r.standard_normal(d)
            phi = dual_map(m, lam)
            fd = finite_diff_gradient(lambda x: log_normalizer(m, x), lam)
            assert np.linalg.norm(phi - fd) / max(np.linalg.norm(phi), 1e-12) < 1e-6
            J = finite_diff_jacobian(lambda x: dual_map(m, x), lam)
            assert np.max(np.abs(hessian(m, lam) - J)) < 1e-5


@criterion(3, "e-midpoint beats a 41x41 grid and the reverse gap identity holds (<30s)")
def test_c3_reverse_interpolation():
    r = np.random.default_rng(303)
    axis = np.linspace(-4.0, 4.0, 41)
    grid = [np.array([x, y]) for x in axis for y in axis]
    worst_gap = 0.0
    with budget(30.0):
        for _ in range(5):
            m = make_model(r.standard_normal((3, 2)))
            lam0, lam1 = r.standard_normal(2), r.standard_normal(2)
            for t in (0.25, 0.5, 0.75):
                lam_t = e_interpolate(m, lam0, lam1, [t]).points[0]
                f_t = weighted_reverse_kl(m, lam_t, lam0, lam1, t)
                for x in grid:
                    f_x = weighted_reverse_kl(m, x, lam0, lam1, t)
                    assert f_t <= f_x + 1e-12
                    worst_gap = max(worst_gap, abs((f_x - f_t) - kl(m, x, lam_t)))
    assert worst_gap < 1e-10


@criterion(4, "m-path is affine in the mean and full-rank midpoints are mixtures (1e-8)")
def test_c4_forward_interpolation():
    r = np.random.default_rng(404)
    ts = np.linspace(0.0, 1.0, 11)
    for _ in range(20):
        V, d = int(r.integers(3, 12)), int(r.integers(2, 5))
        m = make_model(r.standard_normal((V, d)))
        lam0, lam1 = r.standard_normal(d), r.standard_normal(d)
        path = m_interpolate(m, lam0, lam1, ts)
        phi0, phi1 = dual_map(m, lam0), dual_map(m, lam1)
        for t, lam in zip(ts, path.points):
            assert np.max(np.abs(dual_map(m, lam) - ((1 - t) * phi0 + t * phi1))) < 1e-8
    for _ in range(20):
        d = int(r.integers(2, 6))
        m = make_model(r.standard_normal((d + 1, d)))
        lam0, lam1 = r.standard_normal(d), r.standard_normal(d)
        mid = m_interpolate(m, lam0, lam1, [0.5]).points[0]
        mixture = 0.5 * (softmax_probs(m, lam0) + softmax_probs(m, lam1))
        assert 0.5 * np.abs(softmax_probs(m, mid) - mixture).sum() < 1e-8


@criterion(5, "hyperplane KL projection agrees with the oracle and is collinear (100 instances)")
def test_c5_projection_collinearity():
    r = np.random.default_rng(505)
    worst_gap = worst_sine = 0.0
    for _ in range(100):
        d = int(r.integers(2, 5))
        m = make_model(r.standard_normal((int(r.integers(d + 1, 10)), d)))
        probe = LinearProbe(r.standard_normal(d))
        lam0 = 0.5 * r.standard_normal(d)
        c = float(probe.beta @ lam0 + 0.3 * r.standard_normal())
        target = dual_projection_target(m, lam0, probe, c)
        oracle = constrained_min_kl(m, lam0, probe, c)
        worst_gap = max(worst_gap, abs(kl(m, lam0, target) - kl(m, lam0, oracle)))
        disp = dual_map(m, target) - dual_map(m, lam0)
        cos = abs(disp @ probe.beta) / (np.linalg.norm(disp) * probe.norm)
        worst_sine = max(worst_sine, math.sqrt(max(0.0, 1.0 - cos * cos)))
    assert worst_gap < 1e-6
    assert worst_sine < 1e-4


@criterion(6, "dual steering preserves the off-target marginal, Euclidean does not (20 seeds, <60s)")
def test_c6_offtarget_preservation():
    cfg = SteeringConfig(eta=0.01, terminate_at=0.9999)
    euclid_breaks = 0
    worst_dual = 0.0
    with budget(60.0):
        for seed in range(20):
            r = np.random.default_rng(seed)
            n_pairs, n_neutral, d = int(r.choice([2, 4])), int(r.integers(1, 4)), int(r.choice([3, 5]))
            model, scheme, probe = synthesize_factorizable(random_factorizable_spec(r, n_pairs, n_neutral, d))
            lam0 = 0.025 * r.standard_normal(d)
            dual = dual_steer(model, lam0, probe, cfg, scheme)
            euc = euclidean_steer(model, lam0, probe, cfg, scheme)
            assert dual.stop_reason == "terminated"
            worst_dual = max(worst_dual, max(s.offtarget_kl for s in dual.per_step))
            euclid_breaks += max(s.offtarget_kl for s in euc.per_step) > 1e-2
    assert worst_dual < 1e-3
    assert euclid_breaks >= 16


@criterion(7, "forward and reverse KL decompositions hold on factorizable pairs (500 checks, 1e-10)")
def test_c7_kl_decompositions():
    r = np.random.default_rng(707)
    worst = 0.0
    for i in range(500):
        d = int(r.integers(2, 6))
        spec = random_factorizable_spec(r, int(r.integers(1, 5)), int(r.integers(0, 4)), d)
        model, scheme, _ = synthesize_factorizable(spec)
        a, b = 0.3 * r.standard_normal(d), 0.3 * r.standard_normal(d)
        direction = ("forward", "reverse")[i % 2]
        weight, concept, off, total = kl_decomposition(model, scheme, a, b, direction)
        first, second = (a, b) if direction == "forward" else (b, a)
        v1, v2 = factorize(model, scheme, first), factorize(model, scheme, second)
        assert weight == pytest.approx(float(v1.pz[: scheme.n_pairs].sum()), abs=1e-12)
        expected_concept = float(np.sum(v1.pw * np.log(v1.pw / v2.pw)))
        expected_off = float(np.sum(v1.pz * np.log(v1.pz / v2.pz)))
        reference = direct_kl(model, first, second)
        worst = max(
            worst,
            abs(weight * expected_concept + expected_off - reference),
            abs(concept - expected_concept),
            abs(off - expected_off),
            abs(total - reference),
        )
    assert worst < 1e-10


SWEEP = """
[run]
output_dir = out
seed = 8

[synthesis]
n_pairs = 2
n_neutral = 2
d = 4
n_starts = 10

[steering]
eta = 0.01
"""


@criterion(8, "default alpha and terminate_at drive the sweep; Top-K covariance keeps the direction (<120s)")
def test_c8_default_constants(tmp_path):
    with budget(120.0):
        cfg_path = tmp_path / "run.ini"
        cfg_path.write_text(SWEEP, encoding="utf-8")
        cfg = read_config(cfg_path)
        assert cfg.steering.alpha == 5e-3 and cfg.steering.terminate_at == 0.9999
        assert main(["steer", str(cfg_path)]) == EXIT_OK
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["steering"]["alpha"] == 5e-3
        assert manifest["steering"]["terminate_at"] == 0.9999
        assert all(run["stop_reason"] == "terminated" for run in manifest["runs"])

        r = np.random.default_rng(808)
        model = make_model(r.standard_normal((30000, 16)))
        lam0 = r.standard_normal(16)
        probe = LinearProbe(r.standard_normal(16))
        steps = {}
        for name, top_k in (("top", 20000), ("full", 0)):
            path = dual_steer(model, lam0, probe, SteeringConfig(eta=0.01, max_steps=1, top_k=top_k))
            steps[name] = path.points[1] - path.points[0]
        a, b = steps["top"], steps["full"]
        assert not np.array_equal(a, b)
        assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) > 0.999


@criterion(9, "dual steps keep a higher dual cosine in every bin; exact-probe trace is affine")
def test_c9_diagnostics_ordering():
    r = np.random.default_rng(909)
    spec = random_factorizable_spec(r, 3, 2, 4, shear=0.5)
    model, scheme, probe = synthesize_factorizable(spec)
    starts = 0.025 * r.standard_normal((20, 4))
    cfg = SteeringConfig(eta=0.01)
    means = {}
    paths = []
    for method, fn in (("dual", dual_steer), ("euclidean", euclidean_steer)):
        runs = []
        for lam0 in starts:
            path = fn(model, lam0, probe, cfg, scheme)
            runs.append(path.per_step)
            paths.append(path)
        mean, _, count = bin_and_summarize(runs, 20, ("dual_cosine",)).column("dual_cosine")
        means[method] = (mean, count)
    (dual_mean, dual_count), (euc_mean, euc_count) = means["dual"], means["euclidean"]
    populated = (dual_count > 0) & (euc_count > 0)
    assert populated.sum() >= 3
    assert np.all(dual_mean[populated] > euc_mean[populated])

    for path in paths:
        trace = probe_assumption_trace(probe, model, path, scheme)
        residual = trace[:, 1] - (probe.norm * trace[:, 0] + probe.offset)
        assert np.max(np.abs(residual)) < 1e-8


@criterion(10, "SGM round-trip is bit-exact and sweeps are byte-identical on rerun")
def test_c10_determinism(tmp_path):
    r = np.random.default_rng(1010)
    gamma = r.standard_normal((50, 6)) * np.exp(r.uniform(-30, 30, (50, 6)))
    model = make_model(gamma, [f"tok{i}" for i in range(50)])
    save_model(model, tmp_path / "m.sgm")
    back = load_model(tmp_path / "m.sgm")
    assert back.gamma.tobytes() == model.gamma.tobytes() and back.labels == model.labels
    save_model(back, tmp_path / "again.sgm")
    assert (tmp_path / "again.sgm").read_bytes() == (tmp_path / "m.sgm").read_bytes()

    cfg_path = tmp_path / "run.ini"
    cfg_path.write_text(SWEEP, encoding="utf-8")
    for command in ("steer", "diagnose"):
        assert main([command, str(cfg_path)]) == EXIT_OK
    first = tree_bytes(tmp_path / "out")
    for command in ("steer", "diagnose"):
        assert main([command, str(cfg_path), "--set", "run.workers=3"]) == EXIT_OK
    assert tree_bytes(tmp_path / "out") == first
