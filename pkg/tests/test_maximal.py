import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmlab import cubes, maximal as M
from mmlab import space as S
from mmlab.errors import InputError

from conftest import brute_radii


def brute_centered(sp, f, s, delta):
    D, mu = sp.dist, sp.measure
    up = sp.effective_radius(delta)
    out = np.zeros(sp.n)
    for x in range(sp.n):
        for r in brute_radii(D, x, up):
            if r >= up:
                continue
            B = D[x] < r
            out[x] = max(out[x], r ** s * (np.abs(f[B]) * mu[B]).sum() / mu[B].sum())
    return out


def brute_ball_family(sp, f, score, upper, inclusive):
    """Double loop: every ball (center, critical radius) and every member."""
    D, mu = sp.dist, sp.measure
    out = np.zeros(sp.n)
    for z in range(sp.n):
        for r in brute_radii(D, z, upper):
            if not inclusive and r >= upper:
                continue
            B = np.flatnonzero(D[z] < r)
            val = score(z, r, B, (np.abs(f[B]) * mu[B]).sum())
            out[B] = np.maximum(out[B], val)
    return out


def spaces():
    return st.builds(lambda n, seed, kind: S.random_space(n, seed, kind),
                     st.integers(2, 20), st.integers(0, 10 ** 6), st.sampled_from(["euclidean", "graph"]))


def test_fractional_constant():
    sp = S.random_space(15, 3)
    np.testing.assert_allclose(M.fractional_maximal(sp, np.ones(15)).values, 1.0, rtol=1e-15)


def test_fractional_radius_cap():
    sp = S.path(101)
    res = M.fractional_maximal(sp, np.ones(101), 1.0, 5.5)
    # critical radii below 5.5 are 0.5, 1, 1.5, ..., 5, 5.25; the largest wins
    assert res.values[50] == 5.25
    with pytest.raises(InputError):
        M.fractional_maximal(sp, np.ones(101), -1.0)


@pytest.mark.parametrize("y", [0, 7, 20])
def test_point_mass(y):
    sp = S.path(21, 0.5)
    f = np.zeros(21)
    f[y] = 1.0 / sp.measure[y]
    res = M.centered_maximal(sp, f).values
    for x in range(21):
        d = sp.distance(x, y)
        closed = sp.measure[sp.dist[x] <= d].sum()
        assert res[x] == pytest.approx(1.0 / closed, rel=1e-14)


@given(spaces(), st.floats(0.0, 2.0), st.floats(0.3, 15.0), st.integers(0, 10 ** 6))
def test_fractional_brute(sp, s, delta, seed):
    f = np.random.default_rng(seed).standard_normal(sp.n)
    np.testing.assert_allclose(M.fractional_maximal(sp, f, s, delta).values, brute_centered(sp, f, s, delta),
                               rtol=1e-12, atol=0)


@given(spaces(), st.integers(0, 10 ** 6))
def test_fractional_monotone(sp, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(sp.n)
    g = np.abs(f) + rng.random(sp.n)
    prev = np.zeros(sp.n)
    for delta in (0.5, 2.0, 5.0, math.inf):
        cur = M.fractional_maximal(sp, f, 0.5, delta).values
        assert np.all(cur >= prev)
        assert np.all(M.fractional_maximal(sp, g, 0.5, delta).values >= cur)
        prev = cur


def test_uncentered_examples():
    sp = S.path(31)
    np.testing.assert_allclose(M.uncentered_maximal(sp, np.ones(31), 4.0).values, 1.0, rtol=1e-15)


@given(spaces(), st.floats(0.3, 8.0), st.integers(0, 10 ** 6))
def test_uncentered_sandwich(sp, R, seed):
    f = np.random.default_rng(seed).standard_normal(sp.n)
    Mt = M.uncentered_maximal(sp, f, R).values
    oracle = brute_ball_family(sp, f, lambda z, r, B, tot: tot / sp.measure[B].sum(), R, True)
    np.testing.assert_allclose(Mt, oracle, rtol=1e-12, atol=0)
    assert np.all(M.centered_maximal(sp, f, R).values <= Mt * (1 + 1e-13))
    C = S.doubling_profile(sp, 2 * R).A ** 2
    assert np.all(Mt <= C * M.centered_maximal(sp, f, 2 * R).values * (1 + 1e-12))


def test_phi_maximal_examples():
    sp = S.path(51)
    rng = np.random.default_rng(4)
    f = rng.standard_normal(51)
    inv = lambda B: 1.0 / sp.measure[B.members].sum()  # noqa: E731
    np.testing.assert_allclose(M.phi_maximal(sp, inv, f, 6.0).values,
                               brute_ball_family(sp, f, lambda z, r, B, t: t / sp.measure[B].sum(), 6.0, False),
                               rtol=1e-13)
    assert np.all(M.phi_maximal(sp, inv, np.zeros(51), 6.0).values == 0)
    rphi = lambda B: B.radius / sp.measure[B.members].sum()  # noqa: E731
    np.testing.assert_allclose(M.phi_maximal(sp, rphi, f, 9.0).values,
                               brute_ball_family(sp, f, lambda z, r, B, t: r * t / sp.measure[B].sum(), 9.0, False),
                               rtol=1e-13)
    with pytest.raises(InputError):
        M.phi_maximal(sp, rphi, f, 0.0)


# -- Morrey ------------------------------------------------------------------------
def test_morrey_examples():
    sp = S.path(51)
    assert M.morrey_norm(sp, np.zeros(51), 2.0, 5.0) == 0.0
    # V constant: every average is c, sup at the largest critical radius below R (4.5)
    assert M.morrey_norm(sp, np.full(51, 0.3), 2.0, 5.0) == pytest.approx(0.3 * 4.5 ** 2, rel=1e-14)
    with pytest.raises(InputError):
        M.morrey_norm(sp, -np.ones(51), 2.0)
    with pytest.raises(InputError):
        M.morrey_norm(sp, np.ones(51), 0.0)


@given(spaces(), st.integers(0, 10 ** 6), st.floats(0.5, 10.0))
def test_morrey_properties(sp, seed, R):
    V = np.random.default_rng(seed).random(sp.n)
    N = M.morrey_norm(sp, V, 2.0, R)
    assert M.morrey_norm(sp, 3.7 * V, 2.0, R) == pytest.approx(3.7 * N, rel=1e-12)
    ps = (1.0, 1.5, 2.0, 3.0)
    up = min(R, sp.diameter + 0.5 * sp.min_distance)  # radii past the cap only repeat the whole space
    # with the r^2 weight inside, N grows with p through the power mean of V
    vals = []
    for p in ps:
        oracle = max((r ** (2 * p) * ((V[B] ** p) * sp.measure[B]).sum() / sp.measure[B].sum()) ** (1 / p)
                     for x in range(sp.n) for r in brute_radii(sp.dist, x, up) if r < up
                     for B in [sp.dist[x] < r])
        val = M.morrey_norm(sp, V, p, R)
        assert val == pytest.approx(oracle, rel=1e-12)
        vals.append(val)
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    assert M.morrey_norm(sp, V, 2.0, 2 * R) >= N


def test_morrey_product_comparability():
    base = S.path(15)
    rng = np.random.default_rng(2)
    for _ in range(3):
        V = rng.random(15)
        out = M.product_morrey_check(base, V, 9, 1.0, 2.0, 4.0)
        assert out["upper_ok"] and out["lower_ok"]


# -- operator norms ----------------------------------------------------------------
def test_opnorm_identity():
    sp = S.path(31)
    assert M.empirical_lp_opnorm(sp, lambda f: f, 2.0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InputError):
        M.empirical_lp_opnorm(sp, lambda f: f, 1.0)


def test_opnorm_centered_marcinkiewicz():
    sp = S.path(201)
    val = M.empirical_lp_opnorm(sp, lambda f: M.centered_maximal(sp, f).values, 2.0)
    A = S.doubling_profile(sp, sp.diameter).A
    assert 1.0 <= val <= M.marcinkiewicz_bound(A ** 2, 2.0)


def test_opnorm_dyadic_stable():
    sp = S.path(201)
    H = cubes.build_hierarchy(sp)
    op = lambda f: cubes.dyadic_maximal(H, f, space=sp)  # noqa: E731
    v0 = M.empirical_lp_opnorm(sp, op, 2.0, seed=0)
    v1 = M.empirical_lp_opnorm(sp, op, 2.0, seed=1)
    assert abs(v1 / v0 - 1) <= 0.05
    assert v0 <= M.marcinkiewicz_bound(1.0, 2.0)


def test_function_io(tmp_path):
    f = tmp_path / "f.csv"
    M.save_function([0.5, 1.5, 2.0], str(f))
    np.testing.assert_array_equal(M.load_function(str(f), 3), [0.5, 1.5, 2.0])
    g = tmp_path / "g.csv"
    g.write_text("0.25\n0.75\n")
    np.testing.assert_array_equal(M.load_function(str(g), 2), [0.25, 0.75])
    with pytest.raises(InputError):
        M.load_function(str(g), 1)
    j = tmp_path / "v.json"
    j.write_text("[1, 2]")
    np.testing.assert_array_equal(M.load_function(str(j)), [1.0, 2.0])
