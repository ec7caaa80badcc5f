"""End-to-end acceptance checks.

The Monte Carlo cells run 50 repetitions each and take about a quarter of
an hour on one core. Every criterion prints a PASS/FAIL line in the
terminal summary.
"""

import json
import math
import os
from functools import lru_cache

import numpy as np
import pytest
from scipy import integrate

from conftest import random_pairs
from oracles import brute_select_ell, brute_select_h
from nwpco import bench
from nwpco.bench import ExperimentConfig
from nwpco.diffusion import ModelKind, ModelSpec, simulate_ensemble
from nwpco.estimators import EvalGrid, estimate_s
from nwpco.kernels import BandwidthGrid, kernel_conv, kernel_scaled
from nwpco.pco import PcoConfig, SelfPairHistogram, pen_dagger, select_ell, select_h
from nwpco.truth import cir_transition, transition_density

pytestmark = pytest.mark.slow

REPS = 50
WORKERS = os.cpu_count() or 1
MODELS = {1: ModelKind.OU, 2: ModelKind.TANH_OU, 3: ModelKind.CIR}

# 100*MISE mean, 100*std, mean h, mean ell per (model, N)
REFERENCE = {
    (1, 100): (0.979, 0.535, 0.275, 0.288), (1, 400): (0.244, 0.129, 0.180, 0.165),
    (1, 1000): (0.140, 0.107, 0.120, 0.140),
    (2, 100): (0.479, 0.191, 0.098, 0.097), (2, 400): (0.116, 0.057, 0.06, 0.06),
    (2, 1000): (0.055, 0.030, 0.042, 0.04),
    (3, 100): (1.052, 2.374, 0.251, 0.262), (3, 400): (0.343, 0.506, 0.127, 0.107),
    (3, 1000): (0.177, 0.414, 0.164, 0.1468),
}


@lru_cache(maxsize=None)
def cell(model: int, n: int, reps: int = REPS, seed: int = 2024):
    cfg = ExperimentConfig(model=ModelSpec.default(MODELS[model]), N=n, repetitions=reps,
                           seed=seed)
    return bench.run_experiment(cfg, workers=WORKERS)


def describe(model, n, rep):
    return (f"model {model} N={n}: 100*MISE {100 * rep.mean_mise:.3f} "
            f"(std {100 * rep.std_mise:.3f}, median {100 * rep.median_mise:.3f}), "
            f"mean h {rep.mean_h:.3f}, mean ell {rep.mean_ell:.3f}, failed {rep.n_failed}")


# 1: reference cells at N = 100, 400

@pytest.mark.parametrize("model,n", [(m, n) for m in (1, 2, 3) for n in (100, 400)])
def test_criterion_1_reference_cell(model, n, record_property):
    rep = cell(model, n)
    mean, std = REFERENCE[model, n][:2]
    got = 100 * rep.mean_mise
    record_property("detail", f"{describe(model, n, rep)}; target {mean} +- {2 * std:.3f}")
    assert abs(got - mean) <= 2 * std


# 2: MISE strictly decreasing in N

@pytest.mark.parametrize("model", [1, 2, 3])
def test_criterion_2_rate_trend(model, record_property):
    vals = [cell(model, n).mean_mise for n in (100, 400, 1000)]
    record_property("detail", f"model {model}: 100*MISE at N=100/400/1000 "
                    + " > ".join(f"{100 * v:.3f}" for v in vals))
    assert vals[0] > vals[1] > vals[2]


# 3: bandwidth means

@pytest.mark.parametrize("model,n,tol", [(2, 1000, 0.02), (1, 400, 0.05)])
def test_criterion_3_bandwidth_means(model, n, tol, record_property):
    rep = cell(model, n)
    h_ref, ell_ref = REFERENCE[model, n][2:]
    record_property("detail", f"model {model} N={n}: mean h {rep.mean_h:.3f} (target {h_ref}), "
                    f"mean ell {rep.mean_ell:.3f} (target {ell_ref}), tol {tol}")
    assert abs(rep.mean_h - h_ref) <= tol
    assert abs(rep.mean_ell - ell_ref) <= tol


# 4: single-run spot checks at N = 200

@pytest.mark.parametrize("model,ref", [(1, 0.22), (3, 0.18)])
def test_criterion_4_single_runs(model, ref, record_property):
    rep = cell(model, 200, reps=20, seed=7)
    recs = [r for r in rep.records if not r.failed]
    med = 100 * rep.median_mise
    near = sum(abs(r.h - ref) <= 0.04 + 1e-9 and abs(r.ell - ref) <= 0.04 + 1e-9 for r in recs)
    record_property("detail", f"model {model} N=200: median 100*MISE {med:.3f} in [0.1, 0.6]; "
                    f"{near}/{len(recs)} seeds with h and ell within 0.04 of {ref}")
    assert 0.1 <= med <= 0.6
    assert near > len(recs) / 2


# 5: oracle equivalence

def test_criterion_5_pco_vs_brute_force(record_property):
    worst = 0.0
    for seed, n_copies, n_time, cands in [(0, 3, 5, (0.2, 0.5)), (1, 2, 4, (0.15, 0.3)),
                                          (2, 3, 3, (0.25, 0.35)), (3, 1, 5, (0.1, 0.2, 0.4))]:
        pairs = random_pairs(n_copies, n_time, seed)
        g = BandwidthGrid(cands)
        cfg = PcoConfig(grid_h=g, grid_ell=g)
        l1, p1, a1 = brute_select_ell(pairs.start, cands)
        l2, p2, a2 = brute_select_h(pairs.start, pairs.end, cands)
        se, sh = select_ell(pairs, cfg), select_h(pairs, cfg)
        worst = max(worst, np.max(np.abs(se.totals - (l1 + p1))),
                    np.max(np.abs(sh.totals - (l2 + p2))))
        np.testing.assert_allclose(se.l2_terms, l1, atol=1e-5)
        np.testing.assert_allclose(se.penalties, p1, atol=1e-5)
        np.testing.assert_allclose(sh.l2_terms, l2, atol=1e-5)
        np.testing.assert_allclose(sh.penalties, p2, atol=1e-5)
        assert se.chosen == a1 and sh.chosen == (a2, a2)
    record_property("detail", f"max criterion deviation {worst:.2e} (tol 1e-5), argmins equal")


def test_criterion_5_matrix_path(record_property):
    pairs = random_pairs(3, 5, seed=4)
    g = EvalGrid(np.linspace(-2, 2, 6), np.linspace(-1.5, 2.5, 5))
    h1, h2 = 0.3, 0.45
    ref = np.zeros((6, 5))
    for j, x in enumerate(g.x):
        for k, y in enumerate(g.y):
            acc = 0.0
            for i in range(pairs.n_copies):
                for s in range(pairs.n_time):
                    acc += (kernel_scaled(h1, x - pairs.start[i, s])
                            * kernel_scaled(h2, y - pairs.end[i, s]))
            ref[j, k] = acc / (pairs.n_copies * pairs.n_time)
    got = estimate_s(pairs, (h1, h2), g).values
    rel = np.max(np.abs(got - ref) / np.abs(ref))
    record_property("detail", f"matrix path vs triple loop: max rel error {rel:.1e} (tol 1e-12)")
    assert rel <= 1e-12


# 6: analytic identities

def test_criterion_6_gaussian_convolution(record_property):
    worst = 0.0
    for h1, h2 in [(0.02, 0.02), (0.1, 0.3), (0.6, 1.0)]:
        for x in (0.0, 0.05, 0.4, 1.3):
            num, _ = integrate.quad(lambda z: kernel_scaled(h1, z) * kernel_scaled(h2, x - z),
                                    x / 2 - 12, x / 2 + 12, points=[0.0, x],
                                    epsabs=1e-12, epsrel=1e-12, limit=400)
            worst = max(worst, abs(kernel_conv(h1, h2, x) - num))
    record_property("detail", f"convolution vs quadrature: max abs error {worst:.1e} (tol 1e-6)")
    assert worst <= 1e-6


def test_criterion_6_pen_dagger_constant_path(record_property):
    from nwpco.diffusion import PairSample
    worst = 0.0
    for ell, h0 in [(0.1, 0.02), (0.6, 0.02), (0.3, 0.3)]:
        pairs = PairSample(np.full((1, 7), 0.3), np.full((1, 7), -0.2), 0.0, 1.5, 1.0, 0.25)
        ref = 2 / math.sqrt(2 * math.pi * (ell**2 + h0**2))
        for val in (pen_dagger(pairs, ell, h0), SelfPairHistogram.build(pairs, h0).pen_dagger(ell, h0)):
            worst = max(worst, abs(val - ref) / ref)
    record_property("detail", f"pen_dagger constant path: max rel error {worst:.1e} (tol 1e-12)")
    assert worst <= 1e-12


def test_criterion_6_normalization(record_property):
    worst = 0.0
    cases = {ModelKind.OU: ((-1.5, 0.0, 1.2), -np.inf, np.inf),
             ModelKind.TANH_OU: ((-0.8, 0.0, 0.6), -1.0, 1.0),
             ModelKind.CIR: ((0.3, 1.5, 4.0), 0.0, np.inf)}
    for kind, (xs, lo, hi) in cases.items():
        model = ModelSpec.default(kind)
        for x in xs:
            f = lambda y: float(transition_density(model, 1.0, x, y))
            if kind is ModelKind.TANH_OU:
                mass, _ = integrate.quad(f, lo + 1e-15, hi - 1e-15, epsabs=1e-12, limit=400)
            else:
                mass, _ = integrate.quad(f, lo, hi, epsabs=1e-12, limit=400)
            worst = max(worst, abs(mass - 1.0))
    record_property("detail", f"truth densities: max |mass - 1| {worst:.1e} (tol 1e-7)")
    assert worst <= 1e-7


def test_criterion_6_chapman_kolmogorov(record_property):
    worst = 0.0
    for x, y, s, t in [(1.0, 1.0, 0.5, 0.5), (0.4, 2.5, 0.3, 0.9), (3.0, 0.8, 1.0, 0.5)]:
        val, _ = integrate.quad(lambda z: cir_transition(6, 1, 1, s, x, z)
                                * cir_transition(6, 1, 1, t, z, y), 0, 50,
                                epsabs=1e-13, limit=400)
        worst = max(worst, abs(val - cir_transition(6, 1, 1, s + t, x, y)))
    record_property("detail", f"CIR Chapman-Kolmogorov: max abs error {worst:.1e} (tol 1e-5)")
    assert worst <= 1e-5


# 7: simulation exactness

def test_criterion_7_ou_autocovariance(record_property):
    n, delta = 10**5, 0.02
    model = ModelSpec.default("ou")
    ens = simulate_ensemble(model, n, 100, delta, seed=99)
    var = model.params.stationary_variance
    zs = []
    for k in (1, 10, 50):
        rho = math.exp(-model.params.r * k * delta / 2)
        a, b = ens.values[:, 0], ens.values[:, k]
        est = np.mean(a * b)
        sigma = var * math.sqrt((1 + rho**2) / n)
        zs.append(abs(est - var * rho) / sigma)
    record_property("detail", "OU autocovariance lags 1/10/50: |z| "
                    + ", ".join(f"{z:.2f}" for z in zs) + " (tol 4)")
    assert max(zs) <= 4


def test_criterion_7_cir_stationary_mean(record_property):
    n = 10**5
    model = ModelSpec.default("cir")
    ens = simulate_ensemble(model, n, 50, 0.02, seed=98)
    p = model.params
    mean = p.d * p.gamma**2 / (4 * p.r)
    # stationary law Gamma(d/2, scale gamma^2/(2r))
    sd = math.sqrt(p.d / 2) * p.gamma**2 / (2 * p.r)
    zs = [abs(ens.values[:, k].mean() - mean) / (sd / math.sqrt(n)) for k in (0, 25, 50)]
    record_property("detail", f"CIR mean at steps 0/25/50: |z| "
                    + ", ".join(f"{z:.2f}" for z in zs) + " (tol 4)")
    assert max(zs) <= 4


# 8: determinism across worker counts

def test_criterion_8_determinism(record_property):
    cfg = ExperimentConfig(model=ModelSpec.default("cir"), N=100, T=5.0, repetitions=4, seed=5)
    one = json.dumps(bench.run_experiment(cfg, workers=1).to_dict(), sort_keys=True)
    many = json.dumps(bench.run_experiment(cfg, workers=3).to_dict(), sort_keys=True)
    record_property("detail", f"1 vs 3 workers: reports {'identical' if one == many else 'differ'}")
    assert one == many


# bench invariants on the same runs

@pytest.mark.parametrize("model", [1, 2, 3])
@pytest.mark.parametrize("n", [100, 400, 1000])
def test_median_same_order_as_mean(model, n):
    rep = cell(model, n)
    assert 0.3 <= rep.median_mise / rep.mean_mise <= 1.5


@pytest.mark.parametrize("model", [1, 2, 3])
def test_bandwidths_weakly_decrease(model):
    a, b = cell(model, 100), cell(model, 400)
    assert b.mean_h <= a.mean_h and b.mean_ell <= a.mean_ell
