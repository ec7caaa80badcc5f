import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import random_pairs
from nwpco.diffusion import PairSample
from nwpco.errors import ConfigError, DomainError
from nwpco.estimators import (EstimatorGrid, EvalGrid, TruncationSpec, estimate_f, estimate_m,
                              estimate_p, estimate_p_at, estimate_s)
from nwpco.pco import PcoConfig, select_ell, select_h


def naive_s(pairs, h1, h2, xs, ys):
    out = np.zeros((xs.size, ys.size))
    n = pairs.n_copies * pairs.n_time
    for j, x in enumerate(xs):
        for k, y in enumerate(ys):
            acc = 0.0
            for i in range(pairs.n_copies):
                for s in range(pairs.n_time):
                    a = (pairs.start[i, s] - x) / h1
                    b = (pairs.end[i, s] - y) / h2
                    acc += math.exp(-0.5 * a * a) / (h1 * math.sqrt(2 * math.pi)) \
                        * math.exp(-0.5 * b * b) / (h2 * math.sqrt(2 * math.pi))
            out[j, k] = acc / n
    return out


def constant_pairs(c, n_time=7, d=0.3):
    return PairSample(np.full((1, n_time), c), np.full((1, n_time), d), 0.0, 1.0, 0.5, 1 / 6)


def test_constant_path_marginal():
    f = estimate_f(constant_pairs(0.4), 0.25, EvalGrid(np.array([0.4])))
    assert f.values[0] == pytest.approx(1 / (0.25 * math.sqrt(2 * math.pi)), rel=1e-15)


def test_single_point_joint():
    p = PairSample(np.array([[0.3]]), np.array([[-0.2]]), 0.0, 1.0, 1.0, 1.0)
    g = EvalGrid(np.array([0.0, 0.5]), np.array([-1.0, 0.1, 0.2]))
    s = estimate_s(p, (0.2, 0.4), g)
    ref = stats.norm.pdf(0.3, g.x[:, None], 0.2) * stats.norm.pdf(-0.2, g.y[None, :], 0.4)
    np.testing.assert_allclose(s.values, ref, rtol=1e-13)


def test_matrix_path_matches_triple_loop():
    pairs = random_pairs(3, 5, seed=1)
    g = EvalGrid(np.linspace(-2, 2, 4), np.linspace(-1.5, 2.5, 3))
    s = estimate_s(pairs, (0.3, 0.5), g)
    np.testing.assert_allclose(s.values, naive_s(pairs, 0.3, 0.5, g.x, g.y), rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10**6),
       st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_matrix_path_property(n_copies, n_time, m, seed, h1, h2):
    pairs = random_pairs(n_copies, n_time, seed)
    g = EvalGrid(np.linspace(-1, 1, m) if m > 1 else np.zeros(1), np.linspace(-2, 0.5, m + 1))
    s = estimate_s(pairs, (h1, h2), g)
    np.testing.assert_allclose(s.values, naive_s(pairs, h1, h2, g.x, g.y), rtol=1e-12)


def test_linearity_in_copies():
    a, b = random_pairs(3, 6, 4), random_pairs(5, 6, 5)
    both = PairSample(np.vstack([a.start, b.start]), np.vstack([a.end, b.end]), 0, 1, 1, 0.25)
    g = EvalGrid(np.linspace(-2, 2, 9), np.linspace(-2, 2, 7))
    sa, sb, sab = (estimate_s(p, 0.3, g).values for p in (a, b, both))
    np.testing.assert_allclose(sab, (3 * sa + 5 * sb) / 8, rtol=1e-12)
    fa, fb, fab = (estimate_f(p, 0.3, EvalGrid(g.x)).values for p in (a, b, both))
    np.testing.assert_allclose(fab, (3 * fa + 5 * fb) / 8, rtol=1e-12)


def test_marginal_mass_and_accuracy(ou_pairs_1000):
    g = EvalGrid(np.linspace(-6, 6, 1201))
    f = estimate_f(ou_pairs_1000, 0.2, g)
    assert np.sum(f.values) * 0.01 == pytest.approx(1.0, abs=1e-3)
    inner = np.abs(g.x) <= 2
    err = np.max(np.abs(f.values[inner] - stats.norm.pdf(g.x[inner], scale=math.sqrt(0.5))))
    assert err <= 0.05


def test_joint_mass(ou_pairs_1000):
    g = EvalGrid.linspace(-5, 5, 201, -5, 5, 201)
    s = estimate_s(ou_pairs_1000, (0.2, 0.2), g)
    assert s.values.sum() * 0.05**2 == pytest.approx(1.0, abs=1e-2)
    assert np.all(s.values >= 0)


def test_estimate_m(ou_pairs_1000):
    g = EvalGrid(np.linspace(-1.5, 1.5, 61))
    flat = EstimatorGrid(g, np.full(61, 0.37))
    assert estimate_m(flat, (-1, 1)) == 0.37
    mono = EstimatorGrid(g, np.linspace(1, 2, 61))
    assert estimate_m(mono, (-1, 1)) == pytest.approx(mono.values[g.x >= -1 - 1e-12][0])
    f = estimate_f(ou_pairs_1000, 0.2, g)
    assert estimate_m(f, (-1, 1)) == pytest.approx(stats.norm.pdf(1, scale=math.sqrt(0.5)),
                                                   abs=0.05)
    with pytest.raises(DomainError):
        estimate_m(f, (3, 4))


def test_ratio_truncation():
    g = EvalGrid(np.linspace(0, 1, 4), np.linspace(0, 1, 3))
    fvals = np.array([0.5, 1.0, 2.0, 0.1])
    gvals = np.array([0.2, 0.3, 0.5])
    s = EstimatorGrid(g, np.outer(fvals, gvals))
    f = EstimatorGrid(EvalGrid(g.x), fvals)
    p = estimate_p(s, f, TruncationSpec(m=0.4))
    np.testing.assert_allclose(p.values[:3], np.tile(gvals, (3, 1)), rtol=1e-15)
    assert np.all(p.values[3] == 0)
    assert np.all(estimate_p(s, f, TruncationSpec(m=5.0)).values == 0)
    p = estimate_p(s, f, TruncationSpec.plugin(0.0, 0.7))
    assert p.meta["m"] == 0.5 and np.all(p.values[3] == 0)


def test_ratio_grid_mismatch():
    s = EstimatorGrid(EvalGrid(np.arange(3.0), np.arange(2.0)), np.ones((3, 2)))
    f = EstimatorGrid(EvalGrid(np.arange(3.0) + 0.1), np.ones(3))
    with pytest.raises(DomainError):
        estimate_p(s, f, TruncationSpec(m=0.1))


def test_truncation_spec_validation():
    with pytest.raises(ConfigError):
        TruncationSpec(m=0.0)
    with pytest.raises(ConfigError):
        TruncationSpec.plugin(1.0, 1.0)


def test_grid_validation():
    with pytest.raises(DomainError):
        EvalGrid(np.array([0.0, 0.0]))
    with pytest.raises(DomainError):
        EvalGrid(np.array([0.0, np.nan]))


def test_conditional_density_row_integrates_to_one(ou_pairs_1000):
    cfg = PcoConfig()
    ell = select_ell(ou_pairs_1000, cfg).chosen
    h = select_h(ou_pairs_1000, cfg).chosen
    sd = math.sqrt((1 - math.exp(-2)) / 2)
    ys = np.linspace(-4 * sd, 4 * sd, 401)
    g = EvalGrid(np.array([-0.5, 0.0, 0.5]), ys)
    p = estimate_p(estimate_s(ou_pairs_1000, h, g), estimate_f(ou_pairs_1000, ell, EvalGrid(g.x)),
                   TruncationSpec(m=0.1))
    mass = p.values[1].sum() * (ys[1] - ys[0])
    assert 0.9 <= mass <= 1.1


def test_pointwise_wrapper(ou_pairs_1000):
    g = EvalGrid(np.array([0.2]), np.array([0.1]))
    s = estimate_s(ou_pairs_1000, 0.2, g).values[0, 0]
    f = estimate_f(ou_pairs_1000, 0.15, EvalGrid(g.x)).values[0]
    assert estimate_p_at(ou_pairs_1000, 0.2, 0.15, TruncationSpec(m=0.1), 0.2, 0.1) == \
        pytest.approx(s / f, rel=1e-14)


def test_overfitting_direction(ou_pairs_1000):
    g = EvalGrid(np.linspace(-2.5, 2.5, 501))
    tv = [np.abs(np.diff(estimate_f(ou_pairs_1000, ell, g).values)).sum()
          for ell in (0.6, 0.3, 0.1, 0.05)]
    assert all(a < b for a, b in zip(tv, tv[1:]))


@pytest.mark.parametrize("two_d", [False, True])
def test_grid_csv_roundtrip(tmp_path, two_d):
    rng = np.random.default_rng(0)
    g = EvalGrid(np.sort(rng.normal(size=5)), np.sort(rng.normal(size=4)) if two_d else None)
    est = EstimatorGrid(g, rng.random(g.shape), {"h1": 0.1, "N": 3})
    back = EstimatorGrid.from_csv(est.to_csv(tmp_path / "g.csv"))
    assert np.array_equal(back.values, est.values)
    assert back.grid.same_as(g)
    assert back.meta == {"h1": "0.1", "N": "3"}
