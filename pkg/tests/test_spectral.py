import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from mmlab import linalg, maximal, spectral as SP
from mmlab import space as S
from mmlab.errors import InputError

from conftest import brute_radii, dense_laplacian, path_stiffness


def dense_L(op):
    """M^{-1} K on the domain, from explicit edge loops over the space."""
    sp = op.space
    K, _ = dense_laplacian(sp.n, sp.edges, sp.conductances, sp.measure)
    idx = op.ids
    return K[np.ix_(idx, idx)], K[np.ix_(idx, idx)] / sp.measure[idx][:, None]


def expm_heat(op, t):
    """p_t(x,y) = (exp(-tL))(x,y) / mu_y via a dense matrix exponential."""
    _, L = dense_L(op)
    return sla.expm(-t * L) / op.mu[None, :]


# -- operator ---------------------------------------------------------------------
def test_path3_spectrum():
    op = SP.DirichletOperator(S.path(3))
    np.testing.assert_allclose(np.sort(op.spectral().lam), [0.0, 1.0, 3.0], atol=1e-14)
    _, L = dense_L(op)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(L).real), [0.0, 1.0, 3.0], atol=1e-14)


@given(st.integers(3, 40), st.integers(0, 10 ** 6))
def test_free_bottom_and_symmetry(n, seed):
    sp = S.random_space(n, seed, "graph")
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.2, 3.0, len(sp.edges))
    op = SP.DirichletOperator(sp, conductances=w)
    lam = op.spectral().lam
    assert abs(lam.min()) < 1e-10 * max(lam.max(), 1)
    f, g = rng.standard_normal((2, n))
    lhs = (op.apply(f) * g * op.mu).sum()
    rhs = (f * op.apply(g) * op.mu).sum()
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1)
    assert op.energy(f) >= 0
    Q = 0.5 * sum(w_ * (f[u] - f[v]) ** 2 for (u, v), w_ in zip(sp.edges, w)) * 2
    assert op.energy(f) == pytest.approx(Q, rel=1e-12)
    with pytest.raises(InputError):
        SP.DirichletOperator(sp, conductances=-w)


def test_dirichlet_path_continuum():
    op = SP.DirichletOperator(S.path(201), mode="dirichlet")
    lam1 = SP.lambda1(op)
    assert lam1 == pytest.approx(2 - 2 * math.cos(math.pi / 200), rel=1e-10)
    assert abs(lam1 / (math.pi ** 2 / 200 ** 2) - 1) < 0.05


def test_lambda1_examples():
    op = SP.DirichletOperator(S.path(201))
    assert SP.lambda1(op, [7]) == 2.0
    U = op.space.ball_members(100, 10.5)
    assert len(U) == 21
    # 21x21 restriction is tridiag(-1, 2, -1)
    assert SP.lambda1(op, U) == pytest.approx(2 - 2 * math.cos(math.pi / 22), rel=1e-10)
    assert SP.lambda1(op) == 0.0
    with pytest.raises(InputError):
        SP.lambda1(op, [])


def test_lambda1_monotone_nested():
    sp = S.random_space(60, 5, "graph")
    op = SP.DirichletOperator(sp)
    rng = np.random.default_rng(1)
    for _ in range(100):
        big = np.flatnonzero(rng.random(60) < rng.uniform(0.3, 0.9))
        if big.size < 2:
            continue
        small = big[rng.random(big.size) < 0.6]
        if small.size == 0:
            small = big[:1]
        assert SP.lambda1(op, small) >= SP.lambda1(op, big) - 1e-10


def test_schrodinger_examples():
    op = SP.DirichletOperator(S.path(101))
    assert abs(SP.schrodinger_lambda1(op, np.zeros(101))) < 1e-12
    dop = SP.DirichletOperator(S.path(101), mode="dirichlet")
    assert SP.schrodinger_lambda1(dop, np.full(101, 0.3)) == pytest.approx(SP.lambda1(dop) - 0.3, abs=1e-12)
    V = np.random.default_rng(3).random(101)
    oracle = np.linalg.eigvalsh(path_stiffness(101) - np.diag(V))[0]
    assert SP.schrodinger_lambda1(op, V) == pytest.approx(oracle, abs=1e-9)


# -- Faber-Krahn ---------------------------------------------------------------------
def test_fk_ball_contributes():
    sp = S.path(61)
    op = SP.DirichletOperator(sp)
    b, rep = SP.faber_krahn_fit(sp, op, 6.0, samples=20, seed=0)
    balls = [w for w in rep.witnesses if w["kind"] == "ball"]
    for w in balls:
        U = sp.ball_members(w["center"], w["radius"])
        assert w["value"] == pytest.approx(SP.lambda1(op, U) * w["radius"] ** 2, rel=1e-12)
    assert b > 0
    with pytest.raises(InputError):
        SP.faber_krahn_fit(sp, op, 6.0, samples=0)


def test_fk_stable_on_path():
    sp = S.path(401)
    op = SP.DirichletOperator(sp)
    b1, _ = SP.faber_krahn_fit(sp, op, 40.0, samples=200)
    b2, _ = SP.faber_krahn_fit(sp, op, 40.0, samples=800)
    assert b1 > 0 and abs(b2 / b1 - 1) <= 0.2


def test_fk_tree_collapses():
    sp = S.binary_tree(10)
    op = SP.DirichletOperator(sp)
    bs = [SP.faber_krahn_fit(sp, op, R, samples=200)[0] for R in (2.0, 4.0, 8.0)]
    assert bs[2] < bs[0]
    assert bs[2] < 0.5 * bs[0]


# -- heat kernel -------------------------------------------------------------------------
def test_heat_matches_expm_and_invariants():
    sp = S.grid(2, 7)
    for mode in ("free", "dirichlet"):
        op = SP.DirichletOperator(sp, mode=mode)
        hk = SP.heat_kernel(op, [0.05, 1.0, 3.0])
        for t in hk.times:
            P = hk.matrix(t)
            np.testing.assert_allclose(P, expm_heat(op, t), atol=1e-12)
            np.testing.assert_allclose(P, P.T, atol=1e-12)
            rows = (P * op.mu[None, :]).sum(axis=1)
            assert np.all(rows <= 1 + 1e-10)
            if mode == "free":
                np.testing.assert_allclose(rows, 1.0, atol=1e-10)
            assert P.min() >= -1e-10


def test_heat_large_time_limit():
    sp = S.path(21)
    hk = SP.heat_kernel(SP.DirichletOperator(sp), [1e5])
    np.testing.assert_allclose(hk.matrix(1e5), 1.0 / sp.total_measure, atol=1e-12)


def test_semigroup_path51():
    op = SP.DirichletOperator(S.path(51))
    hk = SP.heat_kernel(op, [0.5, 1.0])
    P = hk.matrix(0.5)
    err = np.abs((P * op.mu[None, :]) @ P - hk.matrix(1.0)).max()
    assert err < 1e-8


def test_kronecker_route_matches_dense():
    sp = S.grid(2, 12)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    assert isinstance(op.spectral(), SP.KronSpectral)
    dense = SP.DenseSpectral.from_operator(op)
    for t in (0.3, 2.0):
        hk = SP.heat_kernel(op, [t]).matrix(t)
        np.testing.assert_allclose(hk, dense.matrix(lambda lam: np.exp(-t * lam)), atol=1e-13)
    np.testing.assert_allclose(np.sort(op.spectral().lam), np.sort(dense.lam), atol=1e-12)


def test_heat_export_roundtrip(tmp_path):
    hk = SP.heat_kernel(SP.DirichletOperator(S.path(9)), [0.7])
    f = tmp_path / "p.bin"
    hk.export(0.7, str(f))
    raw = f.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 9 and len(raw) == 8 + 81 * 8
    np.testing.assert_array_equal(SP.read_heat_matrix(str(f)), hk.matrix(0.7))


def test_gaussian_fit_brute():
    sp = S.grid(2, 9)
    op = SP.DirichletOperator(sp)
    times = [0.25, 1.0, 4.0, 9.0, 25.0]
    R, c = 2.5, 5.0
    fit = SP.gaussian_bound_fit(sp, SP.heat_kernel(op, times), R, c)
    D, mu = sp.dist, sp.measure
    vol = lambda x, r: mu[D[x] < r].sum()  # noqa: E731
    best = {"small": 0.0, "large": 0.0}
    diag = 0.0
    for t in times:
        P = expm_heat(op, t)
        rad = math.sqrt(t) if t <= R * R else R
        key = "small" if t <= R * R else "large"
        lim = max(math.sqrt(t), t / 1.0)
        for x in range(sp.n):
            for y in range(sp.n):
                if D[x, y] <= lim:
                    v = P[x, y] * math.sqrt(vol(x, rad) * vol(y, rad)) * math.exp(D[x, y] ** 2 / (c * t))
                    best[key] = max(best[key], v)
            if key == "small":
                diag = max(diag, P[x, x] * vol(x, math.sqrt(t)))
    assert fit["C_small"] == pytest.approx(best["small"], rel=1e-10)
    assert fit["C_large"] == pytest.approx(best["large"], rel=1e-10)
    assert fit["C_small"] >= diag * (1 - 1e-12)
    with pytest.raises(InputError):
        SP.gaussian_bound_fit(sp, SP.heat_kernel(op, [0.5, 1.0]), R, c)
    with pytest.raises(InputError):
        SP.gaussian_bound_fit(sp, SP.heat_kernel(op, times), R, 4.0)


def test_gaussian_lambda_variant():
    sp = S.grid(2, 9)
    op = SP.DirichletOperator(sp)
    fit = SP.gaussian_bound_fit(sp, SP.heat_kernel(op, [0.25, 1.0, 16.0]), 2.0, 5.0, lam=0.5, gamma=0.5)
    assert math.isfinite(fit["C_lambda"]) and fit["C_lambda"] > 0


# -- Riesz / Bessel --------------------------------------------------------------------
def test_riesz_two_is_inverse():
    for sp in (S.path(30), S.grid(2, 9)):
        op = SP.DirichletOperator(sp, mode="dirichlet")
        Kd, L = dense_L(op)
        i2 = SP.riesz_kernel(op, 2.0).values
        np.testing.assert_allclose(i2 @ Kd, np.eye(op.n), atol=1e-9)
        np.testing.assert_allclose(i2, np.linalg.inv(Kd), atol=1e-9)


def test_riesz_rejects_zero_mode():
    with pytest.raises(InputError):
        SP.riesz_kernel(SP.DirichletOperator(S.path(10)), 1.0)


def test_bessel_large_lambda():
    op = SP.DirichletOperator(S.path(21))
    g = SP.bessel_kernel(op, 1.0, 1e3).values
    off = g - np.diag(np.diag(g))
    assert np.abs(off).max() < 1e-6 * np.diag(g).min()
    np.testing.assert_allclose(np.diag(g), 1e-3 / op.mu, rtol=1e-5)


def test_bessel_coefficients_decrease_in_lambda():
    lam = SP.DirichletOperator(S.path(15)).spectral().lam
    prev = None
    for L_ in (0.1, 0.5, 1.0, 4.0):
        coef = (lam + L_ ** 2) ** -0.5
        if prev is not None:
            assert np.all(coef < prev)
        prev = coef


def test_bessel_separation():
    sp = S.path(101)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    g = SP.bessel_kernel(op, 1.0, 0.5)
    rep = SP.bessel_separation_check(sp, g, 1.0, 0.5, [0.0, 0.1, 0.3, 0.6, 1.0])
    assert rep.passed
    fits = rep.constants["fits"]
    assert math.isfinite(fits[0]["C"])
    assert all(a["C"] <= b["C"] for a, b in zip(fits, fits[1:]))
    # near part by pair scan
    ids = g.ids
    near = 0.0
    for i, x in enumerate(ids):
        for j, y in enumerate(ids):
            d = sp.distance(x, y)
            if x != y and 0.5 * d <= 1:
                near = max(near, g.values[i, j] / (d / sp.ball_measure(x, d)))
    assert rep.constants["near_C0"] == pytest.approx(near, rel=1e-12)


def test_riesz_bound_fit_small():
    sp = S.grid(3, 7)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    fit = SP.riesz_bound_fit(sp, op, 1.0)
    i1 = SP.riesz_kernel(op, 1.0).values
    best = 0.0
    for a, x in enumerate(op.ids):
        for b, y in enumerate(op.ids):
            if x != y:
                d = sp.distance(x, y)
                best = max(best, i1[a, b] * sp.ball_measure(x, d) / d)
    assert fit["C"] == pytest.approx(best, rel=1e-12)


# -- Fefferman-Phong ----------------------------------------------------------------------
def test_fp_constant_potential():
    sp = S.path(31)
    op = SP.DirichletOperator(sp)
    c, R = 0.4, 4.0
    N = maximal.morrey_norm(sp, np.full(31, c), 2.0, R)
    assert N == pytest.approx(c * 3.5 ** 2, rel=1e-14)
    C = SP.fefferman_phong_constant(op, np.full(31, c), 2.0, R)
    assert C == pytest.approx(c * R ** 2 / N, rel=1e-10)


@given(st.integers(0, 10 ** 6), st.floats(1.5, 20.0))
def test_fp_homogeneity(seed, R):
    sp = S.path(40)
    op = SP.DirichletOperator(sp)
    V = np.random.default_rng(seed).random(40)
    a = SP.fefferman_phong_constant(op, V, 2.0, R)
    b = SP.fefferman_phong_constant(op, 3.0 * V, 2.0, R)
    assert b == pytest.approx(a, rel=1e-10)


def test_fp_errors():
    sp = S.path(20)
    with pytest.raises(InputError):
        SP.fefferman_phong_constant(SP.DirichletOperator(sp), np.ones(20), 2.0)  # R = inf, free
    with pytest.raises(InputError):
        SP.fefferman_phong_constant(SP.DirichletOperator(sp), np.zeros(20), 2.0, 3.0)


def test_fp_hardy_grid():
    sp = S.grid(3, 21)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    o = sp.with_coords_center()
    C = SP.fefferman_phong_constant(op, SP.hardy_potential(sp, o), 1.2)
    assert math.isfinite(C) and C > 0


def test_lanczos_against_dense():
    rng = np.random.default_rng(0)
    n = 400
    X = rng.standard_normal((n, n))
    A = X @ X.T / n
    res = linalg.lanczos_largest(lambda v: A @ v, n)
    assert res.value == pytest.approx(np.linalg.eigvalsh(A)[-1], rel=1e-10)
    # the solve-based pencil route used above the exact limit
    K = path_stiffness(n) + np.diag(np.full(n, 0.01))
    w = rng.random(n)
    solve = linalg.factorized(K)
    sw = np.sqrt(w)
    it = linalg.lanczos_largest(lambda x: sw * solve(sw * x), n, tol=1e-13).value
    ex, _ = linalg.dense_generalized_largest(np.diag(w), K)
    assert it == pytest.approx(ex, rel=1e-10)


# -- spectrum bracket ------------------------------------------------------------------------
def test_bracket_zero_potential():
    sp = S.path(41)
    op = SP.DirichletOperator(sp)
    r = SP.spectrum_bounds(sp, op, np.zeros(41), 2.0, Cp=1.0)
    assert r.lower <= -r.exact
    assert r.lower == pytest.approx(-sp.diameter ** -2, rel=1e-12)


def test_tent_rayleigh_upper_bounds_lambda1():
    sp = S.grid(2, 15)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    V = np.random.default_rng(1).random(sp.n)
    tw = SP.tent_witnesses(op, V)
    assert tw["tent_rayleigh_min"] >= SP.lambda1(op) - 1e-12
    assert tw["tent_lower"] <= -SP.schrodinger_lambda1(op, V) + 1e-12


def test_bracket_path201_defaults():
    sp = S.path(201)
    op = SP.DirichletOperator(sp)
    cal = SP.calibrate_cp(op, 2.0, seed=0)
    C1, _ = SP.default_c1(sp)
    for i in range(20):
        V = np.random.default_rng([7, i]).random(201) * 10 ** np.random.default_rng([8, i]).uniform(-2, 0)
        r = SP.spectrum_bounds(sp, op, V, 2.0, C1, cal["Cp"], tents=False)
        assert r.holds, r.to_dict()


# -- positivity --------------------------------------------------------------------------------
def test_positivity_constant_potential():
    sp = S.path(101)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    c, R = 0.01, 5.0
    lam1 = SP.lambda1(op)
    rep = SP.positivity_checks(op, np.full(101, c), 2.0, R)
    assert rep.passed
    assert rep.constants["theta_plus"] == pytest.approx(c / (1.5 * lam1), rel=1e-9)
    assert rep.constants["theta_minus"] == pytest.approx(2 * c / lam1, rel=1e-9)
    sweep = rep.constants["lambda_sweep"]
    for s in sweep:
        assert s["theta"] == pytest.approx(c / (lam1 + s["lambda"] ** 2), rel=1e-9)


def test_positivity_zero_potential():
    op = SP.DirichletOperator(S.path(41), mode="dirichlet")
    rep = SP.positivity_checks(op, np.zeros(41), 2.0, 4.0)
    assert rep.passed and rep.constants["theta_plus"] == 0.0
    with pytest.raises(InputError):
        SP.positivity_checks(SP.DirichletOperator(S.path(41)), np.ones(41), 2.0, 4.0)


@given(st.integers(0, 10 ** 6))
def test_positivity_sweep_monotone(seed):
    op = SP.DirichletOperator(S.path(60), mode="dirichlet")
    V = np.random.default_rng(seed).random(60)
    rep = SP.positivity_checks(op, V, 2.0, 6.0, lambdas=[0.05, 0.1, 0.3, 1.0, 3.0])
    assert rep.check("sweep_theta_nonincreasing").passed
    assert rep.check("statement_form").passed and rep.check("proof_form").passed


# -- Hardy -----------------------------------------------------------------------------------------
def test_hardy_dense_agreement_and_Kp():
    sp = S.grid(3, 9)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    o = sp.with_coords_center()
    rep = SP.hardy_check(sp, op, o, 1.4, dense_check=True)
    assert rep.passed, rep.to_dict()
    hc = SP.hardy_constant(op, o, reference=True)
    assert hc["reference_rel_diff"] < 1e-8
    # K_p brute force: sup over centers and critical radii
    V = SP.hardy_potential(sp, o)
    D, mu = sp.dist, sp.measure
    best = 0.0
    up = sp.diameter + 0.5 * sp.min_distance
    for x in range(sp.n):
        radii = [r for r in brute_radii(D, x, up) if r < up]
        for r in radii:
            B = D[x] < r
            best = max(best, r ** 2 * ((V[B] ** 1.4 * mu[B]).sum() / mu[B].sum()) ** (1 / 1.4))
    assert rep.constants["K_p"] == pytest.approx(best, rel=1e-12)


def test_hardy_grid21_finite():
    sp = S.grid(3, 21)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    rep = SP.hardy_check(sp, op, sp.with_coords_center(), 1.4)
    assert rep.check("K_p_finite").passed and rep.check("C_H_finite").passed
    assert rep.constants["route"] == "kronecker"


def test_hardy_tree_volume_growth():
    sp = S.binary_tree(8)
    op = SP.DirichletOperator(sp, mode="dirichlet")
    rep = SP.hardy_check(sp, op, 0, 2.0, witness_radii=[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)])
    assert rep.check("C_H_finite").passed
    nus = [w["nu_effective"] for w in rep.witnesses]
    assert nus[0] < nus[1] < nus[2]


def test_hardy_errors():
    sp = S.path(9)
    with pytest.raises(InputError):
        SP.hardy_constant(SP.DirichletOperator(sp), 4)
    with pytest.raises(InputError):
        SP.hardy_check(sp, SP.DirichletOperator(sp, mode="dirichlet"), 0, 2.0)


# -- product ------------------------------------------------------------------------------------
def test_product_zero_potential_and_additivity():
    base = S.path(5)
    op = SP.DirichletOperator(base)
    rep = SP.product_identity_check(base, op, np.zeros(5), 5)
    assert rep.passed
    assert abs(rep.constants["lambda1_base"]) < 1e-12 and abs(rep.constants["lambda1_product"]) < 1e-12
    assert rep.check("spectrum_additivity").passed


def test_product_identity_random():
    base = S.path(15)
    op = SP.DirichletOperator(base)
    V = np.random.default_rng(0).random(15)
    rep = SP.product_identity_check(base, op, V, 11)
    assert rep.passed, rep.to_dict()
    assert rep.constants["lambda1_diff"] < 1e-9
    assert rep.constants["heat_max_abs_error"] < 1e-8
