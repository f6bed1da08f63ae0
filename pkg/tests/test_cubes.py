import copy
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmlab import cubes, maximal
from mmlab import space as S
from mmlab.errors import InputError


def chain_oracle(H, sp, f, lmax=math.inf):
    """Max of cube averages over the chain of cubes containing each point, via Python sets."""
    out = np.zeros(sp.n)
    for L in H.levels:
        if H.rho ** L.k > lmax:
            continue
        for mem in L.members:
            mem = list(mem)
            avg = sum(abs(f[y]) * sp.measure[y] for y in mem) / sum(sp.measure[y] for y in mem)
            for y in mem:
                out[y] = max(out[y], avg)
    return out


def test_single_point():
    sp = S.explicit([[0.0]], [1.0])
    H = cubes.build_hierarchy(sp, rho=8)
    assert all(len(L.members) == 1 for L in H.levels)
    assert cubes.verify_hierarchy(sp, H).passed


def test_path65_levels():
    sp = S.path(65)
    H = cubes.build_hierarchy(sp, 0, 8.0)
    assert [H.length(L.k) for L in H.levels] == [1.0, 8.0, 64.0]
    for L in H.levels:
        assert sorted(np.concatenate(L.members).tolist()) == list(range(65))
    rep = cubes.verify_hierarchy(sp, H)
    assert rep.passed, rep.to_dict()


def test_grid33_nesting():
    sp = S.grid(2, 33)
    H = cubes.build_hierarchy(sp, rho=8.0)
    L8 = next(L for L in H.levels if H.length(L.k) == 8.0)
    L64 = next(L for L in H.levels if H.length(L.k) == 64.0)
    big = [set(m.tolist()) for m in L64.members]
    for m in L8.members:
        assert sum(set(m.tolist()) <= b for b in big) == 1
    assert cubes.verify_hierarchy(sp, H).passed


@given(st.integers(2, 60), st.integers(0, 10 ** 6), st.sampled_from(["euclidean", "graph"]))
def test_random_spaces_verify(n, seed, kind):
    sp = S.random_space(n, seed, kind)
    H = cubes.build_hierarchy(sp, rho=8.0)
    rep = cubes.verify_hierarchy(sp, H)
    assert rep.passed, rep.to_dict()
    assert H.rho ** H.m <= sp.min_distance
    assert H.rho ** (H.K + 1) > sp.diameter


def test_rho_errors():
    with pytest.raises(InputError):
        cubes.build_hierarchy(S.path(5), rho=1.0)


def test_mutation_move_point():
    sp = S.path(65)
    H = cubes.build_hierarchy(sp, 0, 8.0)
    d = H.to_dict()
    lvl = d["levels"][1]  # length 8
    a, b = lvl["cubes"][0], lvl["cubes"][1]
    y = a["center"] + 1 if a["center"] + 1 in a["members"] else a["center"] - 1
    a["members"].remove(y)
    b["members"].append(y)
    rep = cubes.verify_hierarchy(sp, cubes.hierarchy_from_dict(d, sp))
    assert rep.check("partition").passed
    assert not (rep.check("nesting").passed and rep.check("sandwich").passed)
    assert rep.check("sandwich").worst_case["center"] in (a["center"], b["center"])


def test_mutation_swap_center():
    sp = S.path(65)
    H = cubes.build_hierarchy(sp, 0, 8.0)
    d = copy.deepcopy(H.to_dict())
    cube = d["levels"][1]["cubes"][0]
    far = max(cube["members"], key=lambda v: abs(v - cube["center"]))
    cube["center"] = far
    rep = cubes.verify_hierarchy(sp, cubes.hierarchy_from_dict(d, sp))
    assert not rep.check("sandwich").passed
    assert rep.check("sandwich").worst_case["center"] == far


def test_roundtrip(tmp_path):
    sp = S.grid(2, 9)
    H = cubes.build_hierarchy(sp)
    f = tmp_path / "h.json"
    H.save(str(f))
    H2 = cubes.load_hierarchy(str(f), sp)
    assert H2.to_dict() == H.to_dict()


# -- dyadic maximal --------------------------------------------------------------
def test_dyadic_constant():
    sp = S.grid(2, 17)
    H = cubes.build_hierarchy(sp)
    np.testing.assert_allclose(cubes.dyadic_maximal(H, np.full(sp.n, -2.5), space=sp), 2.5, rtol=1e-15)


@pytest.mark.parametrize("y", [0, 17, 32, 64])
def test_dyadic_point_indicator(y):
    sp = S.path(65)
    H = cubes.build_hierarchy(sp, 0, 8.0)
    f = np.zeros(65)
    f[y] = 1.0
    np.testing.assert_array_equal(cubes.dyadic_maximal(H, f, space=sp), chain_oracle(H, sp, f))


@given(st.integers(0, 10 ** 6))
def test_dyadic_weak11_and_oracle(seed):
    rng = np.random.default_rng(seed)
    sp = S.random_space(int(rng.integers(5, 50)), int(rng.integers(10 ** 6)))
    H = cubes.build_hierarchy(sp)
    f = rng.standard_normal(sp.n) * (rng.random(sp.n) < 0.5)
    Mf = cubes.dyadic_maximal(H, f, space=sp)
    np.testing.assert_allclose(Mf, chain_oracle(H, sp, f), rtol=1e-13, atol=0)
    ok, w = maximal.weak11_check(sp, Mf, f)
    assert ok, w


@given(st.integers(0, 10 ** 6))
def test_dyadic_sublinear_and_monotone(seed):
    rng = np.random.default_rng(seed)
    sp = S.path(40)
    H = cubes.build_hierarchy(sp)
    f, g = rng.standard_normal((2, sp.n))
    Mf, Mg = (cubes.dyadic_maximal(H, v, space=sp) for v in (f, g))
    assert np.all(cubes.dyadic_maximal(H, f + g, space=sp) <= Mf + Mg + 1e-12)
    prev = np.zeros(sp.n)
    for lmax in (1.0, 8.0, 64.0, math.inf):
        cur = cubes.dyadic_maximal(H, f, lmax, sp)
        assert np.all(cur >= prev)
        prev = cur
