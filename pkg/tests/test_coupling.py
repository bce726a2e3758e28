import numpy as np
import pytest
from scipy import stats

from apmlmc.coupling import (COMBINED, TERM_BY_TERM, CoupledPair, CouplingConfig, FineStepRecord,
                             coarse_collision, coarse_velocity, coarse_xi_combined, coarse_xi_term_by_term,
                             new_pair, pair_params, paired_coarse_step, simulate_pairs, simulate_single,
                             substituted_velocity_sum)
from apmlmc.scheme import ParticleState, SchemeParams
from apmlmc.variance import optimal_theta, var_velocity_sum
from apmlmc.velocity import GAUSSIAN, TWO_SPEED, VelocityModel

from oracles import brute_velocity_sum_variance

TWO = VelocityModel(TWO_SPEED)
GAUSS = VelocityModel(GAUSSIAN)
THETA = optimal_theta(pair_params(0.1, 0.01, 50))


def rec(xi=0.0, u=0.5, vbar=1.0, collided=False, after=None):
    return FineStepRecord(xi, u, vbar, collided, after)


def position(x, v):
    return x


def velocity(x, v):
    return v


def test_term_by_term_examples():
    assert coarse_xi_term_by_term([rec(xi=0.37)]) == 0.37
    assert coarse_xi_term_by_term([rec(xi=0.0)] * 5) == 0.0
    assert coarse_xi_term_by_term([rec(xi=1.0)] * 4) == pytest.approx(2.0)


def test_term_by_term_unit_variance():
    # 10^6 coarse increments from the engine with theta = 1 (the term-by-term rule)
    out = []
    simulate_pairs(0.1, 0.01, CouplingConfig(4, TERM_BY_TERM), 1, 10**6, TWO, np.random.default_rng(1),
                   coarse_xi_out=out)
    xi = out[0]
    assert abs(xi.var() - 1) < 4 * np.sqrt(2 / 10**6)
    # and the scalar rule on the same kind of input
    rng = np.random.default_rng(2)
    vals = [coarse_xi_term_by_term([rec(xi=x) for x in rng.standard_normal(4)]) for _ in range(20000)]
    assert abs(np.var(vals) - 1) < 4 * np.sqrt(2 / 20000)


def test_coarse_collision_examples():
    cp = SchemeParams(0.1, 0.5)
    assert coarse_collision([rec(u=0.0)] * 7, cp) == (False, 0.0)
    for u in (0.001, 0.3, 0.99):
        hit, uc = coarse_collision([rec(u=u)], cp)
        assert uc == u and hit == (u >= cp.p_nc)


def test_coarse_uniform_is_uniform():
    M, n = 50, 10**6
    u = np.random.default_rng(3).random((n, M))
    uc = u.max(axis=1) ** M
    assert stats.kstest(uc, "uniform").pvalue > 0.01
    cp = SchemeParams(0.1, 0.5)
    for row in u[:200]:
        _, v = coarse_collision([rec(u=x) for x in row], cp)
        assert v == row.max() ** M


def test_coarse_velocity_examples():
    records = [rec(), rec(vbar=-1.0, collided=True, after=1.0)]
    assert coarse_velocity(records, False, -1.0) == -1.0
    assert coarse_velocity(records, True, -1.0) == 1.0


def test_coarse_velocity_after_collision_statistics():
    # coarse velocity right after one coarse step, conditional on a coarse collision
    n = 10**6
    v = simulate_pairs(0.1, 0.01, CouplingConfig(50, COMBINED, THETA), 1, n, GAUSS, np.random.default_rng(4),
                       qoi=velocity)[1]
    cp = SchemeParams(0.1, 0.5)
    vbar = v / cp.v_scaled
    # without a collision the initial draw is kept, which has the same law; use all draws
    assert abs(vbar.mean()) < 4 / np.sqrt(n)
    assert abs(vbar.var() - 1) < 4 * np.sqrt(2 / n)


def test_substitution_rule():
    M = 6
    flags = [False, True, False, False, True, False]
    vbars = [9.0, 9.0, 2.0, 3.0, 4.0, 7.0]
    records = [rec(vbar=v, collided=c) for v, c in zip(vbars, flags)]
    # sub-steps 0, 1 precede the first collision's effect, 5 follows the last collision
    assert substituted_velocity_sum(records, 10.0, 100.0) == 2.0 + 3.0 + 4.0 + 2 * 10.0 + 1 * 100.0
    # a collision in the last sub-step leaves nothing after it
    records[-1] = rec(vbar=7.0, collided=True)
    assert substituted_velocity_sum(records, 10.0, 100.0) == 2.0 + 3.0 + 4.0 + 7.0 + 20.0
    # no collision: one run, one fresh draw
    assert substituted_velocity_sum([rec(vbar=5.0)] * M, 10.0, 100.0) == M * 10.0


def test_combined_theta_one_is_term_by_term():
    rng = np.random.default_rng(5)
    records = [rec(xi=x, u=u, vbar=1.0, collided=u >= 0.5) for x, u in zip(rng.standard_normal(8), rng.random(8))]
    fp, cp = SchemeParams(0.1, 0.01), SchemeParams(0.1, 0.08)
    assert coarse_xi_combined(records, fp, cp, 1.0, TWO, rng) == coarse_xi_term_by_term(records)
    with pytest.raises(ValueError):
        coarse_xi_combined(records, fp, cp, 1.5, TWO, rng)


def test_combined_theta_zero_all_collisions_gaussian():
    # dt >> eps^2: every sub-step collides and the transport sum is a sum of M normals
    eps, dt, M = 1e-4, 1.0, 20
    fp, cp = SchemeParams(eps, dt), SchemeParams(eps, M * dt)
    rng = np.random.default_rng(6)
    out = []
    for _ in range(20000):
        records = [rec(xi=0.0, u=0.999999, vbar=v, collided=True) for v in rng.standard_normal(M)]
        out.append(coarse_xi_combined(records, fp, cp, 0.0, GAUSS, rng))
    assert stats.kstest(out, "norm").pvalue > 0.01


def test_combined_moments_two_speed():
    n = 10**6
    out = []
    simulate_pairs(0.1, 0.01, CouplingConfig(50, COMBINED, THETA), 1, n, TWO, np.random.default_rng(7),
                   coarse_xi_out=out)
    xi = out[0]
    assert abs(xi.mean()) < 4 / np.sqrt(n)
    kurt = stats.kurtosis(xi, fisher=False)
    assert abs(xi.var() - 1) < 4 * np.sqrt((kurt - 1) / n)
    assert abs(np.mean(xi**3)) < 4 * np.sqrt(15 / n)


def test_engine_matches_scalar_reference():
    """The vectorized engine and the record-based step agree on the same draws, pair by pair."""
    eps, dt, M = 0.1, 0.01, 7
    for mode, theta in ((COMBINED, 0.4), (TERM_BY_TERM, 1.0), (COMBINED, 1.0)):
        cfg = CouplingConfig(M, mode, theta)
        for seed in range(30):
            rng = np.random.default_rng(seed)
            pair = new_pair(eps, dt, cfg, TWO, rng)
            for _ in range(3):
                pair = paired_coarse_step(pair, TWO, rng)
            xf, xc = simulate_pairs(eps, dt, cfg, 3, 1, TWO, np.random.default_rng(seed), qoi=position)
            assert xf[0] == pytest.approx(pair.fine.x, abs=1e-12)
            assert xc[0] == pytest.approx(pair.coarse.x, abs=1e-12)


def test_scalar_step_records():
    cfg = CouplingConfig(5, COMBINED, 0.5)
    rng = np.random.default_rng(8)
    pair, records = paired_coarse_step(new_pair(0.1, 0.01, cfg, TWO, rng), TWO, rng, return_records=True)
    assert len(records) == 5
    assert all(0 <= r.u < 1 for r in records)
    assert abs(pair.coarse.v) == pytest.approx(pair.coarse_params.v_scaled)


def test_m1_theta1_identical_positions():
    cfg = CouplingConfig(1, TERM_BY_TERM)
    rng = np.random.default_rng(9)
    pair = paired_coarse_step(new_pair(0.1, 0.5, cfg, TWO, rng), TWO, rng)
    assert pair.fine.x == pair.coarse.x
    xf, xc = simulate_pairs(0.1, 0.5, cfg, 4, 1000, TWO, rng, qoi=position)
    assert np.array_equal(xf, xc)


def test_validation():
    with pytest.raises(ValueError):
        CouplingConfig(0)
    with pytest.raises(ValueError):
        CouplingConfig(4, "antithetic")
    with pytest.raises(ValueError):
        CouplingConfig(4, COMBINED, -0.1)
    assert CouplingConfig(4, TERM_BY_TERM, 0.3).effective_theta == 1.0
    with pytest.raises(ValueError):
        rec(u=1.0)
    with pytest.raises(ValueError):
        rec(xi=np.inf)
    s = ParticleState(0.0, 0.0)
    with pytest.raises(ValueError):
        CoupledPair(s, s, SchemeParams(0.1, 0.01), SchemeParams(0.1, 0.3), CouplingConfig(50))


@pytest.mark.parametrize("mode, theta", [(COMBINED, THETA), (TERM_BY_TERM, 1.0)])
def test_fine_marginal_preserved(mode, theta):
    n = 10**5
    xf, _ = simulate_pairs(0.1, 0.01, CouplingConfig(50, mode, theta), 1, n, TWO, np.random.default_rng(10),
                           qoi=position)
    ref = simulate_single(0.1, 0.01, 50, n, TWO, np.random.default_rng(11), qoi=position)
    assert stats.ks_2samp(xf, ref).pvalue > 0.01


@pytest.mark.parametrize("model, theta", [(GAUSS, THETA), (TWO, 1.0)])
def test_coarse_marginal_preserved(model, theta):
    n = 10**5
    _, xc = simulate_pairs(0.1, 0.01, CouplingConfig(50, COMBINED, theta), 1, n, model,
                           np.random.default_rng(12), qoi=position)
    ref = simulate_single(0.1, 0.5, 1, n, model, np.random.default_rng(13), qoi=position)
    assert stats.ks_2samp(xc, ref).pvalue > 0.01


def test_coarse_xi_uncorrelated_with_coarse_velocity():
    n = 10**6
    out = []
    v = simulate_pairs(0.1, 0.01, CouplingConfig(50, COMBINED, THETA), 1, n, TWO, np.random.default_rng(14),
                       qoi=velocity, coarse_xi_out=out)[1]
    r = np.corrcoef(out[0], v)[0, 1]
    assert abs(r) < 4 / np.sqrt(n)


LEVEL1 = [(0.1, 0.01, 50), (0.1, 0.005, 100), (0.5, 0.25, 2), (0.5, 0.05, 10), (0.05, 0.0025, 200)]


@pytest.mark.parametrize("eps, dt_f, M", LEVEL1)
def test_combined_beats_term_by_term(eps, dt_f, M):
    th = optimal_theta(pair_params(eps, dt_f, M))
    n_coarse = int(round(0.5 / (M * dt_f)))
    var = {}
    for mode, theta in ((COMBINED, th), (TERM_BY_TERM, 1.0)):
        f, c = simulate_pairs(eps, dt_f, CouplingConfig(M, mode, theta), n_coarse, 20000, TWO,
                              np.random.default_rng(15))
        var[mode] = np.var(f - c, ddof=1)
    assert var[COMBINED] < var[TERM_BY_TERM]


@pytest.mark.parametrize("model", [TWO, GAUSS])
def test_level1_variances(model):
    n = 10**5
    f, c = simulate_pairs(0.1, 0.01, CouplingConfig(50, TERM_BY_TERM), 1, n, model, np.random.default_rng(16))
    assert 1.35 <= np.var(f - c, ddof=1) <= 1.55
    f, c = simulate_pairs(0.1, 0.01, CouplingConfig(50, COMBINED, THETA), 1, n, model, np.random.default_rng(17))
    d = f - c
    assert 0.155 <= np.var(d, ddof=1) <= 0.175
    assert d.mean() == pytest.approx(-0.125, abs=4 * d.std() / np.sqrt(n) + 0.005)


def test_trace_decomposition_and_layout():
    trace = []
    simulate_pairs(0.1, 0.01, CouplingConfig(100, COMBINED, 0.5), 1, 3, TWO, np.random.default_rng(18),
                   trace=trace)
    fine = [r for r in trace if r[0] == "fine"]
    coarse = [r for r in trace if r[0] == "coarse"]
    assert len(fine) == 101 and len(coarse) == 2
    for _, t, x, xd, xt in trace:
        assert abs(xd + xt - x) <= 1e-12
    assert fine[-1][1] == pytest.approx(1.0) and coarse[-1][1] == pytest.approx(1.0)


def test_var_sum_normalization_is_exact_for_substituted_sum():
    """E[S'^2] = V[sum Vbar]: the transport part alone has unit variance (theta = 0)."""
    n = 10**6
    out = []
    simulate_pairs(0.1, 0.01, CouplingConfig(50, COMBINED, 0.0), 1, n, TWO, np.random.default_rng(19),
                   coarse_xi_out=out)
    xi = out[0]
    kurt = stats.kurtosis(xi, fisher=False)
    assert abs(xi.var() - 1) < 4 * np.sqrt((kurt - 1) / n)
    assert var_velocity_sum(0.5, 50) == pytest.approx(brute_velocity_sum_variance(0.5, 50), rel=1e-12)
