"""Acceptance battery shared by the test suite and ``mmlab suite acceptance``.

Each criterion returns a plain dict: id, name, passed and the numbers behind
the verdict.  Nothing time-dependent goes into the dicts, so two runs with the
same seed serialize to the same bytes.
"""
from __future__ import annotations

import math

import numpy as np

from . import cubes, kernels, maximal, spectral
from .space import binary_tree, doubling_profile, grid, path, random_space

GAUSS_TIMES = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 100.0, 200.0)

SCALES = {
    "full": {
        "random_spaces": 50, "random_n": (20, 300), "cube_generators": (201, 41, 10),
        "weak_f": 100, "weak_spaces": (201, 41),
        "product_base": 31, "product_line": 31, "product_V": 20,
        "bracket_spaces": (201, 41), "bracket_calib": 20, "bracket_heldout": 50,
        "hardy_sides": (21, 31, 41),
        "riesz_sides": (17, 25),
        "gauss_sides": (41, 81), "gauss_R": 8.0,
        "domination_n": (101, 201), "domination_delta": 8.0, "domination_trials": 30,
        "tree_depth": 10, "tree_R": (2.0, 8.0), "fk_samples": 200,
    },
    "small": {
        "random_spaces": 8, "random_n": (20, 80), "cube_generators": (65, 17, 6),
        "weak_f": 10, "weak_spaces": (65, 17),
        "product_base": 9, "product_line": 7, "product_V": 3,
        "bracket_spaces": (41, 11), "bracket_calib": 4, "bracket_heldout": 5,
        "hardy_sides": (9, 11, 13),
        "riesz_sides": (7, 9),
        "gauss_sides": (15, 21), "gauss_R": 3.0,
        "domination_n": (41, 61), "domination_delta": 4.0, "domination_trials": 6,
        "tree_depth": 7, "tree_R": (2.0, 6.0), "fk_samples": 30,
    },
}


def _result(cid: int, name: str, passed: bool, **details) -> dict:
    return {"id": cid, "name": name, "passed": bool(passed), "details": details}


def criterion_1(cfg: dict, seed: int = 0) -> dict:
    """Cube hierarchies on random spaces and on generators."""
    lo, hi = cfg["random_n"]
    failures = []
    count = 0
    for i in range(cfg["random_spaces"]):
        rng = np.random.default_rng([seed, 1, i])
        n = int(rng.integers(lo, hi + 1))
        kind = "euclidean" if i % 2 == 0 else "graph"
        sp = random_space(n, seed=int(rng.integers(2 ** 31)), kind=kind)
        rep = _cube_report(sp)
        count += 1
        if not rep.passed:
            failures.append({"space": f"random:{kind}:{n}:{i}", "checks": rep.to_dict()["checks"]})
    npath, side, depth = cfg["cube_generators"]
    for name, sp in (("path", path(npath)), ("grid", grid(2, side)), ("tree", binary_tree(depth))):
        rep = _cube_report(sp)
        count += 1
        if not rep.passed:
            failures.append({"space": name, "checks": rep.to_dict()["checks"]})
    return _result(1, "cube hierarchy exactness", not failures, spaces=count, failures=failures)


def _cube_report(sp):
    H = cubes.build_hierarchy(sp, rho=8.0, verify=False)
    return cubes.verify_hierarchy(sp, H)


def criterion_2(cfg: dict, seed: int = 0) -> dict:
    """Exact weak (1,1) bound with constant 1 for the dyadic maximal function."""
    npath, side = cfg["weak_spaces"]
    bad = []
    checked = 0
    for name, sp in (("path", path(npath)), ("grid", grid(2, side))):
        H = cubes.build_hierarchy(sp, rho=8.0)
        for i in range(cfg["weak_f"]):
            rng = np.random.default_rng([seed, 2, i])
            f = rng.standard_normal(sp.n) * (rng.random(sp.n) < rng.uniform(0.05, 1.0))
            Mf = cubes.dyadic_maximal(H, f, space=sp)
            ok, w = maximal.weak11_check(sp, Mf, f)
            checked += 1
            if not ok:
                bad.append({"space": name, "f": i, "witness": w})
    return _result(2, "dyadic weak-(1,1) constant 1", not bad, functions=checked, failures=bad)


def criterion_3(cfg: dict, seed: int = 0) -> dict:
    base = path(cfg["product_base"])
    op = spectral.DirichletOperator(base)
    worst_l, worst_h = 0.0, 0.0
    ok = True
    for i in range(cfg["product_V"]):
        rng = np.random.default_rng([seed, 3, i])
        V = rng.uniform(0.0, 1.0, base.n)
        rep = spectral.product_identity_check(base, op, V, cfg["product_line"], 1.0,
                                              times=(0.1, 1.0, 10.0) if i == 0 else ())
        worst_l = max(worst_l, rep.constants["lambda1_diff"])
        if i == 0:
            worst_h = rep.constants["heat_max_abs_error"]
        ok &= rep.check("lambda1_identity").passed
    ok = ok and worst_l < 1e-9 and worst_h < 1e-8
    return _result(3, "product identity", ok, max_lambda1_diff=worst_l, heat_max_abs_error=worst_h,
                   potentials=cfg["product_V"])


def criterion_4(cfg: dict, seed: int = 0) -> dict:
    npath, side = cfg["bracket_spaces"]
    per_space = []
    ok = True
    for name, sp in (("path", path(npath)), ("grid", grid(2, side))):
        op = spectral.DirichletOperator(sp)
        calib = spectral.potential_family(sp, cfg["bracket_calib"], seed, tag=1)
        cal = spectral.calibrate_cp(op, 2.0, potentials=calib, seed=seed)
        C1, info = spectral.default_c1(sp)
        held = spectral.potential_family(sp, cfg["bracket_heldout"], seed, tag=2)
        fails = []
        for i, V in enumerate(held):
            r = spectral.spectrum_bounds(sp, op, V, 2.0, C1, cal["Cp"], tents=False)
            if not r.holds:
                fails.append({"potential": i, "lower": r.lower, "minus_lambda1": -r.exact, "upper": r.upper,
                              "witnesses": r.witnesses})
        ok &= not fails
        per_space.append({"space": name, "n": sp.n, "C1": C1, "A": info["A"], "eta": info["eta"],
                          "Cp": cal["Cp"], "calibration_witness": cal["witness"],
                          "held_out": len(held), "passed": len(held) - len(fails), "failures": fails})
    return _result(4, "spectrum bracket", ok, spaces=per_space)


def criterion_5(cfg: dict, seed: int = 0) -> dict:
    sides = cfg["hardy_sides"]
    inv = []
    ref = None
    for k, s in enumerate(sides):
        sp = grid(3, s)
        op = spectral.DirichletOperator(sp, mode="dirichlet")
        o = sp.with_coords_center()
        hc = spectral.hardy_constant(op, o, seed=seed, reference=(k == 0))
        inv.append(hc["inverse"])
        if k == 0:
            ref = hc["reference_rel_diff"]
    gaps = [abs(v - 0.25) for v in inv]
    rel = gaps[-1] / 0.25
    mono = all(gaps[i + 1] < gaps[i] for i in range(len(gaps) - 1))
    ok = rel <= 0.25 and mono and ref < 1e-8
    return _result(5, "Hardy constant convergence", ok, sides=list(sides), inverse_C_H=inv, gaps=gaps,
                   relative_gap_last=rel, gaps_decreasing=mono, cross_check_rel_diff=ref)


def criterion_6(cfg: dict, seed: int = 0) -> dict:
    fits = []
    for s in cfg["riesz_sides"]:
        sp = grid(3, s)
        op = spectral.DirichletOperator(sp, mode="dirichlet")
        fits.append(spectral.riesz_bound_fit(sp, op, 1.0))
    C = [f["C"] for f in fits]
    ratio = max(C) / min(C)
    ok = all(math.isfinite(c) and c > 0 for c in C) and ratio < 2.0
    return _result(6, "Riesz potential bound", ok, sides=list(cfg["riesz_sides"]), C=C, ratio=ratio,
                   witnesses=[f["witness"] for f in fits])


def criterion_7(cfg: dict, seed: int = 0) -> dict:
    R = cfg["gauss_R"]
    C = []
    wits = []
    for s in cfg["gauss_sides"]:
        sp = grid(2, s)
        op = spectral.DirichletOperator(sp)
        hk = spectral.heat_kernel(op, GAUSS_TIMES)
        fit = spectral.gaussian_bound_fit(sp, hk, R, 5.0)
        C.append(fit["C_small"])
        wits.append(fit["witness_small"])
    ratio = max(C) / min(C)
    ok = all(math.isfinite(c) and c > 0 for c in C) and ratio < 2.0
    return _result(7, "Gaussian heat kernel bound", ok, sides=list(cfg["gauss_sides"]), R=R, c=5.0,
                   C_small=C, ratio=ratio, witnesses=wits)


def criterion_8(cfg: dict, seed: int = 0) -> dict:
    C = []
    finite = True
    for n in cfg["domination_n"]:
        sp = path(n)
        K = kernels.riesz_form_kernel(sp, 1.0)
        c, rep = kernels.domination_check(sp, K, cfg["domination_delta"], 2.0, trials=cfg["domination_trials"],
                                          seed=seed, hypotheses=False)
        C.append(c)
        finite &= rep.check("ratios_finite").passed
    ratio = max(C) / min(C)
    ok = finite and ratio < 2.0
    return _result(8, "domination by the phi maximal function", ok, sizes=list(cfg["domination_n"]),
                   C_emp=C, ratio=ratio, all_ratios_finite=finite)


def criterion_9(cfg: dict, seed: int = 0) -> dict:
    sp = binary_tree(cfg["tree_depth"])
    r0, r1 = cfg["tree_R"]
    A0 = doubling_profile(sp, r0).A
    A1 = doubling_profile(sp, r1).A
    op = spectral.DirichletOperator(sp)
    b0, rep0 = spectral.faber_krahn_fit(sp, op, r0, samples=cfg["fk_samples"], seed=seed)
    b1, rep1 = spectral.faber_krahn_fit(sp, op, r1, samples=cfg["fk_samples"], seed=seed)
    ok = A1 > 1.5 * A0 and b1 < 0.5 * b0
    return _result(9, "non-doubling negative control", ok, R=[r0, r1], A=[A0, A1], b=[b0, b1],
                   eta=[rep0.constants["eta"], rep1.constants["eta"]],
                   fk_witness=[rep0.witnesses[0], rep1.witnesses[0]])


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def run_suite(scale: str = "small", seed: int = 0, only=None) -> dict:
    """Criteria 1-9 at the given scale (criterion 10 compares two runs of this function)."""
    cfg = SCALES[scale]
    ids = sorted(CRITERIA) if only is None else sorted(only)
    results = [CRITERIA[i](cfg, seed) for i in ids]
    return {"suite": "acceptance", "scale": scale, "seed": seed, "criteria": results,
            "passed": all(r["passed"] for r in results)}


def summary_line(res: dict) -> str:
    return f"criterion {res['id']}: {'PASS' if res['passed'] else 'FAIL'} ({res['name']})"
