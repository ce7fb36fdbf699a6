import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from aloha_backoff import analytic as an
from aloha_backoff.params import (
    INFINITE,
    DomainError,
    FixedPointError,
    InfeasibleLoadError,
    SystemParams,
)

E = math.e
nodes = st.one_of(st.integers(2, 500), st.just(INFINITE))
backoffs = st.floats(1.02, 10.0)


# ---------------------------------------------------------------- global analysis

def test_collision_prob_examples():
    assert an.collision_prob_from_attempt(0.0, 7) == 0.0
    assert an.collision_prob_from_attempt(1.0, 2) == 1.0
    assert an.collision_prob_from_attempt(math.log(2), INFINITE) == pytest.approx(0.5, abs=1e-15)
    assert an.collision_prob_from_rate(math.log(2)) == pytest.approx(0.5, abs=1e-15)
    assert an.collision_prob_from_attempt(0.1, 3) == pytest.approx(1 - 0.9 ** 2)


@pytest.mark.parametrize("p_t", [-0.1, 1.1])
def test_collision_prob_domain(p_t):
    with pytest.raises(DomainError):
        an.collision_prob_from_attempt(p_t, 10)


def test_throughput_examples():
    assert an.throughput_at(1.0, INFINITE) == pytest.approx(1 / E, abs=1e-15)
    assert round(an.throughput_at(1.0, INFINITE), 4) == 0.3679
    assert an.throughput_at(0.0, 30) == 0.0
    with mpmath.workdps(40):
        oracle = float(mpmath.power(mpmath.mpf(29) / 30, 29))
    assert an.throughput_at(1.0, 30) == pytest.approx(oracle, rel=1e-14)
    assert round(an.throughput_at(1.0, 30), 4) == 0.3741


@pytest.mark.parametrize("g, n", [(-0.1, 30), (31.0, 30), (-1.0, INFINITE)])
def test_throughput_domain(g, n):
    with pytest.raises(DomainError):
        an.throughput_at(g, n)


@given(n=nodes, g=st.floats(0.0, 1.0))
def test_throughput_unimodal_at_one(n, g):
    # derivative (1 - g/n)^(n-2) (1 - g) has the sign of 1 - g
    peak = an.throughput_at(1.0, n)
    assert an.throughput_at(g, n) <= peak + 1e-15
    if g < 0.999:
        assert an.throughput_at(g, n) < an.throughput_at(min(1.0, g + 1e-3), n)
    hi = 1.0 + g * (min(float(n) if n is not INFINITE else 20.0, 20.0) - 1.0)
    if hi > 1.001:
        assert an.throughput_at(hi, n) < an.throughput_at(hi - 1e-3, n) + 1e-15


def test_operating_point_near_peak():
    op = an.solve_operating_point(1 / E - 1e-9, INFINITE)
    assert op.g == pytest.approx(1.0, abs=1e-3)
    assert op.branch == an.LEFT


def test_operating_point_paper_value():
    op = an.solve_operating_point(0.3466, INFINITE)
    assert op.g == pytest.approx(math.log(2), abs=2e-3)


def test_operating_point_grid_oracle():
    # oracle: exhaustive scan of the curve over [0, 1] at step 1e-6
    g = np.linspace(0.0, 1.0, 1_000_001)
    s = g * (1 - g / 30) ** 29
    first = g[np.argmax(s >= 0.30)]
    op = an.solve_operating_point(0.30, 30)
    assert first - 1e-6 <= op.g <= first + 1e-12
    assert op.p_t == pytest.approx(op.g / 30)
    assert op.p_c == pytest.approx(1 - 0.30 / op.g)


def test_operating_point_errors():
    with pytest.raises(InfeasibleLoadError):
        an.solve_operating_point(0.3742, 30)
    with pytest.raises(InfeasibleLoadError):
        an.solve_operating_point(1 / E, INFINITE)
    with pytest.raises(DomainError):
        an.solve_operating_point(0.0, 30)


def test_right_branch_is_opt_in():
    left = an.solve_operating_point(0.3, INFINITE)
    right = an.solve_operating_point(0.3, INFINITE, right_branch=True)
    assert left.g < 1 < right.g
    assert right.branch == an.RIGHT
    assert an.throughput_at(right.g, INFINITE) == pytest.approx(0.3, abs=1e-10)


@given(n=nodes, frac=st.floats(0.001, 0.999))
def test_operating_point_invariants(n, frac):
    s_o = frac * an.peak_throughput(n)
    op = an.solve_operating_point(s_o, n)
    assert op.g < 1
    assert abs(an.throughput_at(op.g, n) - s_o) < 1e-10
    assert 0 <= op.p_c < 1


# ---------------------------------------------------------------- saturation

@pytest.mark.parametrize("r, s", [(2.0, 0.3466), (E / (E - 1), 0.3679), (1.3757, 0.3545)])
def test_saturation_asymptotic_paper(r, s):
    sat = an.saturation_asymptotic(r)
    assert sat.s == pytest.approx(s, abs=5e-4)
    assert sat.p_c == pytest.approx(1 / r)
    assert sat.g == pytest.approx(math.log(r / (r - 1)))


def test_saturation_asymptotic_domain():
    with pytest.raises(DomainError):
        an.saturation_asymptotic(1.0)


@pytest.mark.parametrize("r, s", [(1.582, 0.3675), (1.2, 0.3561)])
def test_saturation_finite_paper(r, s):
    sat = an.saturation_finite(r, 10, 30)
    assert sat.s == pytest.approx(s, abs=1e-3)


def test_saturation_finite_large_n():
    assert an.saturation_finite(2.0, 10, 10_000).s == pytest.approx(an.saturation_asymptotic(2.0).s, abs=1e-3)


@given(r=st.floats(1.05, 4.0), r0=st.floats(1.0, 64.0), n=st.integers(2, 2000))
def test_saturation_fixed_point_invariants(r, r0, n):
    try:
        sat = an.saturation_finite(r, r0, n)
    except (FixedPointError, an.ModelViolationError):
        # tiny systems with r0 close to 1 can have no interior fixed point
        assume(False)
    assert sat.p_c < 1 / r
    assert abs(an.saturation_fixed_point_residual(sat.p_c, r, r0, n)) < 1e-10
    # both displayed forms of the finite-N saturation equations hold as residuals
    g, s = sat.g, sat.s
    assert (1 - g / n) ** (n - 1) * (r - r0 * g / n) == pytest.approx(r - 1, abs=1e-8)
    lhs = n * math.log1p(r0 / (r - 1) * s / n)
    rhs = math.log(r / (r - 1)) + (n - 1) * math.log1p((r0 - r) / (r - 1) * s / n)
    assert lhs == pytest.approx(rhs, abs=1e-8)
    assert s == pytest.approx(an.throughput_at(g, n), rel=1e-8)


@pytest.mark.parametrize("r", [1.2, 1.582, 2.0, 3.0])
def test_saturation_converges_with_n(r):
    target = an.saturation_asymptotic(r)
    gaps = [abs(an.saturation_finite(r, 10, n).s - target.s) for n in (100, 1000, 10_000)]
    assert gaps[0] > gaps[1] > gaps[2]
    gaps_pc = [abs(an.saturation_finite(r, 10, n).p_c - target.p_c) for n in (100, 1000, 10_000)]
    assert gaps_pc[0] > gaps_pc[1] > gaps_pc[2]


def test_saturation_finite_errors():
    with pytest.raises(DomainError):
        an.saturation_finite(1.0, 10, 30)
    with pytest.raises(DomainError):
        an.saturation_finite(2.0, 10, INFINITE)


def test_saturation_dispatch():
    assert an.saturation(SystemParams(r=2.0)) == an.saturation_asymptotic(2.0)
    assert an.saturation(SystemParams(r=2.0, n=30)) == an.saturation_finite(2.0, 10, 30)


# ---------------------------------------------------------------- BBMD / SBMD

@pytest.mark.parametrize("r, s", [(2.0, 0.2158), (1.582, 0.3063), (1.3757, 0.3545)])
def test_bbmd_asymptotic_paper(r, s):
    assert an.bbmd_asymptotic(r).s == pytest.approx(s, abs=5e-4)


def test_bbmd_asymptotic_closed_form():
    assert an.bbmd_asymptotic(2.0).s == pytest.approx(0.75 * math.log(4 / 3), rel=1e-14)


@pytest.mark.parametrize("r, s", [(2.0, 0.2221), (1.582, 0.3140)])
def test_bbmd_finite_paper(r, s):
    assert an.bbmd_finite(r, 30).s == pytest.approx(s, abs=1e-3)


def test_bbmd_finite_grid_oracle():
    # brute force: first g on the 30-node curve where 1 - S/G reaches 1/r^2
    r = 1.2
    g = np.linspace(1e-6, 2.0, 2_000_000)
    p_c = 1 - (1 - g / 30) ** 29
    g_star = g[np.argmax(p_c >= 1 / r ** 2)]
    bb = an.bbmd_finite(r, 30)
    assert bb.g == pytest.approx(g_star, abs=2e-6)
    assert bb.s == pytest.approx(g_star * (1 - g_star / 30) ** 29, abs=2e-6)
    assert bb.s == pytest.approx(0.3671, abs=5e-4)
    assert bb.s < an.peak_throughput(30)


def test_bbmd_finite_large_n():
    assert an.bbmd_finite(2.0, 100_000).s == pytest.approx(an.bbmd_asymptotic(2.0).s, abs=1e-4)


def test_bbmd_on_curve():
    for r in (1.2, 1.582, 2.0):
        bb = an.bbmd_finite(r, 30)
        assert an.throughput_at(bb.g, 30) == pytest.approx(bb.s, rel=1e-12)
        assert (1 - bb.s / bb.g) * r * r == pytest.approx(1.0, rel=1e-12)


def test_sbmd_examples():
    lim = an.sbmd(SystemParams(r=2.0))
    assert lim.s_sbmd == pytest.approx(0.2158, abs=5e-4)
    assert lim.binding == an.BBMD_BINDING
    assert an.sbmd(SystemParams(r=1.3757)).s_sbmd == pytest.approx(0.3545, abs=5e-4)
    lim = an.sbmd(SystemParams(r=1.2))
    oracle = min((0.2 / 1.2) * math.log(6.0), (0.44 / 1.44) * math.log(1.44 / 0.44))
    assert lim.s_sbmd == pytest.approx(oracle, rel=1e-12)
    assert lim.s_sbmd == pytest.approx(0.2986, abs=5e-4)
    assert lim.binding == an.SATURATION_BINDING


def test_sbmd_finite_overtake_rule():
    # r = 1.2, N = 20: the BBMD point sits right of saturation, so S_s is safe
    lim = an.sbmd(SystemParams(r0=10, r=1.2, n=20))
    assert lim.g_bbmd > lim.g_sat
    assert lim.s_bbmd < lim.s_sat
    assert lim.s_sbmd == lim.s_sat
    assert lim.binding == an.SATURATION_BINDING
    # N = 30: both points right of the peak with BBMD still left of saturation
    lim = an.sbmd(SystemParams(r0=10, r=1.2, n=30))
    assert lim.g_bbmd < lim.g_sat and lim.s_sbmd == lim.s_sat
    lim = an.sbmd(SystemParams(r0=10, r=2.0, n=30))
    assert lim.g_bbmd < lim.g_sat
    assert lim.s_sbmd == lim.s_bbmd
    assert lim.binding == an.BBMD_BINDING


@given(r=backoffs, n=nodes)
def test_sbmd_bounds(r, n):
    lim = an.sbmd(SystemParams(r0=10, r=r, n=n))
    assert lim.s_sbmd <= max(lim.s_sat, lim.s_bbmd)
    if n is INFINITE:
        assert lim.s_sbmd == min(lim.s_sat, lim.s_bbmd)
        assert lim.s_sbmd <= lim.s_sat


@given(r=st.floats(1.0001, 10.0))
def test_bbmd_rate_below_saturation_rate(r):
    assert an.bbmd_asymptotic(r).g < an.saturation_asymptotic(r).g


# ---------------------------------------------------------------- optimum

def test_optimal_backoff():
    r_star = an.optimal_backoff_asymptotic()
    assert r_star == pytest.approx(1.3757, abs=1e-3)
    assert an.sbmd_asymptotic(r_star) == pytest.approx(0.3545, abs=1e-3)
    diff = lambda r: an.bbmd_asymptotic(r).s - an.saturation_asymptotic(r).s
    assert diff(1.3) > 0 > diff(1.5)
    assert abs(diff(r_star)) < 1e-6


# ---------------------------------------------------------------- critical N

def _n_star_oracle(r, r0):
    with mpmath.workdps(50):
        r, r0 = mpmath.mpf(r), mpmath.mpf(r0)
        c = 1 + 1 / r - 1 / r0
        return (mpmath.log(r / (r - 1)) - mpmath.log(c)) / (mpmath.log((r + 1) / r) - mpmath.log(c))


def test_critical_node_count_examples():
    n12 = an.critical_node_count(1.2, 10)
    assert 15 < n12 < 30
    assert n12 == pytest.approx(float(_n_star_oracle(1.2, 10)), abs=1e-9)
    assert round(n12, 1) == 22.1
    n1582 = an.critical_node_count(1.582, 10)
    assert n1582 == pytest.approx(float(_n_star_oracle(1.582, 10)), abs=1e-9)
    assert round(n1582, 1) == 9.1 and n1582 < 15


def test_critical_node_count_domain():
    with pytest.raises(DomainError):
        an.critical_node_count(1.0, 10)
    with pytest.raises(DomainError):
        an.critical_node_count(2.0, 0.5)


def test_critical_n_is_the_boundary():
    # at N_s* the saturation collision probability sits on p_c r^2 = 1
    r, r0 = 1.2, 10
    n_star = an.critical_node_count(r, r0)
    assert an.saturated_node_count(1 / r ** 2, r, r0) == pytest.approx(n_star, rel=1e-12)
    assert an.saturation_finite(r, r0, 22).p_c * r * r < 1 < an.saturation_finite(r, r0, 23).p_c * r * r


@given(r0=st.floats(2.0, 99.0), r=st.floats(1.05, 4.0), dr0=st.floats(0.5, 20.0), dr=st.floats(0.01, 1.0))
def test_critical_n_monotone(r0, r, dr0, dr):
    base = an.critical_node_count(r, r0)
    assert an.critical_node_count(r, min(r0 + dr0, 100.0)) >= base
    assert an.critical_node_count(min(r + dr, 4.0), r0) <= base
