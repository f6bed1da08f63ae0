"""Kernel condition (K), the phi functional and truncated kernel operators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .maximal import lp_norm, phi_maximal, trial_functions
from .report import VerificationReport
from .space import Ball, MetricMeasureSpace, doubling_profile, radius_grid

DENSE_KERNEL_LIMIT = 2000


@dataclass
class KernelMatrix:
    """Dense kernel values; the diagonal is never used."""
    values: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InputError("kernel must be a square matrix")
        np.fill_diagonal(v, np.nan)
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def off_diagonal(self) -> np.ndarray:
        v = self.values.copy()
        np.fill_diagonal(v, 0.0)
        return v


def _dense_guard(space: MetricMeasureSpace):
    if space.n > DENSE_KERNEL_LIMIT:
        raise InputError(f"dense kernels are limited to n <= {DENSE_KERNEL_LIMIT}")


def open_ball_volumes(space: MetricMeasureSpace) -> np.ndarray:
    """W[x, y] = mu(B(x, d(x,y))) with the open ball."""
    W = np.empty((space.n, space.n))
    for idx, sd, order in space.iter_sorted():
        cm = np.cumsum(space.measure[order], axis=1)
        d = space.rows(idx)
        for j, x in enumerate(idx):
            k = np.searchsorted(sd[j], d[j], side="left")
            W[x] = np.where(k > 0, cm[j, np.maximum(k - 1, 0)], 0.0)
    return W


def riesz_form_kernel(space: MetricMeasureSpace, s: float) -> KernelMatrix:
    """K(x,y) = d(x,y)^s / mu(B(x, d(x,y)))."""
    _dense_guard(space)
    d = space.dist
    W = open_ball_volumes(space)
    with np.errstate(divide="ignore", invalid="ignore"):
        K = d ** s / W
    return KernelMatrix(K, "riesz", {"s": s})


def bessel_form_kernel(space: MetricMeasureSpace, s: float, lam: float) -> KernelMatrix:
    """Near/far envelope: d^s/V(x,d) when lam*d <= 1, lam^-s/V(x,1/lam) beyond."""
    _dense_guard(space)
    d = space.dist
    env = bessel_envelope(space, s, lam, np.arange(space.n), d)
    return KernelMatrix(env, "bessel", {"s": s, "lambda": lam})


def bessel_envelope(space, s, lam, rows_idx, d):
    """Envelope values for the given rows (distance block d)."""
    from .space import ball_measures
    rows_idx = np.asarray(rows_idx)
    W = np.empty_like(d)
    sd, order = space.sorted_rows(rows_idx)
    cm = np.cumsum(space.measure[order], axis=1)
    for j in range(len(rows_idx)):
        k = np.searchsorted(sd[j], d[j], side="left")
        W[j] = np.where(k > 0, cm[j, np.maximum(k - 1, 0)], np.inf)
    far = ball_measures(space, rows_idx, np.full(len(rows_idx), 1.0 / lam))
    with np.errstate(divide="ignore", invalid="ignore"):
        near = d ** s / W
        env = np.where(lam * d <= 1.0, near, lam ** (-s) / far[:, None])
    return env


def power_kernel(space: MetricMeasureSpace, exponent: float) -> KernelMatrix:
    _dense_guard(space)
    with np.errstate(divide="ignore"):
        return KernelMatrix(space.dist ** exponent, "power", {"exponent": exponent})


def constant_kernel(space: MetricMeasureSpace, c: float = 1.0) -> KernelMatrix:
    return KernelMatrix(np.full((space.n, space.n), float(c)), "constant", {"c": c})


def kernel_from_spec(space: MetricMeasureSpace, spec: dict) -> KernelMatrix:
    t = spec.get("type")
    if t == "riesz":
        return riesz_form_kernel(space, float(spec.get("s", 1.0)))
    if t == "bessel":
        return bessel_form_kernel(space, float(spec.get("s", 1.0)), float(spec["lambda"]))
    if t == "power":
        return power_kernel(space, float(spec["exponent"]))
    if t == "constant":
        return constant_kernel(space, float(spec.get("c", 1.0)))
    if t == "matrix":
        M = np.loadtxt(spec["path"], delimiter=",") if str(spec["path"]).endswith(".csv") else np.load(spec["path"])
        return KernelMatrix(M, "custom", {"path": spec["path"]})
    raise InputError(f"unknown kernel type {t!r}")


def kernel_condition_check(space: MetricMeasureSpace, K: KernelMatrix, C2: float, dmax: float = math.inf):
    """Smallest C1 with K(x,y) <= C1 K(x',y) whenever d(x',y) <= C2 d(x,y), and the same in y.

    Only pairs with d(x,y) <= dmax are constrained.  Returns (C1, witness)
    where the witness is (x, y, x') for the first condition or (x, y, y') for
    the second.  C1 is inf when K vanishes where a comparison is demanded.
    """
    if not C2 > 1:
        raise InputError("C2 must exceed 1")
    Kv = K.values
    d = space.dist
    n = space.n
    off = ~np.eye(n, dtype=bool)
    if np.any(Kv[off] < 0):
        raise InputError("kernel has negative entries")
    best, wit = 1.0, None
    for which in ("x", "y"):
        # condition on the first argument: columns of K; on the second: rows
        M = Kv.T if which == "x" else Kv          # M[y, x] = K(x,y)  /  M[x, y] = K(x,y)
        for a in range(n):
            da = d[a].copy()
            da[a] = np.inf                        # exclude the diagonal partner
            order = np.argsort(da, kind="stable")[: n - 1]
            ds = da[order]
            vals = M[a, order]
            pmin = np.minimum.accumulate(vals)
            pidx = np.zeros(len(vals), dtype=np.int64)
            cur = 0
            for i in range(1, len(vals)):
                if vals[i] < vals[cur]:
                    cur = i
                pidx[i] = cur
            sel = np.flatnonzero(ds <= dmax)
            if sel.size == 0:
                continue
            lim = np.searchsorted(ds, C2 * ds[sel], side="right") - 1
            num = vals[sel]
            den = pmin[lim]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(den > 0, num / den, np.where(num > 0, np.inf, 1.0))
            t = int(np.argmax(ratio))
            if ratio[t] > best:
                best = float(ratio[t])
                other = int(order[sel[t]])
                prime = int(order[pidx[lim[t]]])
                wit = (other, a, prime) if which == "x" else (a, other, prime)
                wit = {"condition": which, "x": wit[0], "y": wit[1], "prime": wit[2]}
    return best, wit


def phi_functional(space: MetricMeasureSpace, K: KernelMatrix, ball: Ball, rho: float = 8.0,
                   with_flag: bool = False):
    """phi(B) = max K(x,y) over x != y in B with d(x,y) >= r(B)/(2 rho); 0 if there is no such pair."""
    m = np.asarray(ball.members)
    if m.size < 2:
        return (0.0, False) if with_flag else 0.0
    D = space.dist[np.ix_(m, m)]
    V = K.values[np.ix_(m, m)]
    ok = (D >= ball.radius / (2.0 * rho)) & (D > 0)
    if not ok.any():
        return (0.0, False) if with_flag else 0.0
    v = float(V[ok].max())
    return (v, True) if with_flag else v


class _PhiCache:
    """Memoized phi over (center, radius) for maximal-function sweeps."""

    def __init__(self, space, K, rho):
        self.space, self.K, self.rho = space, K, rho
        self.cache = {}

    def __call__(self, ball: Ball) -> float:
        key = (ball.center, ball.radius)
        v = self.cache.get(key)
        if v is None:
            v = phi_functional(self.space, self.K, ball, self.rho)
            self.cache[key] = v
        return v


def _ball_table(space, K, cap, rho):
    """All balls at critical radii <= cap with phi, mass and member data."""
    table = []
    for idx, sd, order in space.iter_sorted():
        for j, x in enumerate(idx):
            radii = radius_grid(sd[j], cap, True)
            ks = np.searchsorted(sd[j], radii, side="left")
            for r, k in zip(radii, ks):
                mem = np.sort(order[j, :k])
                ph, ok = phi_functional(space, K, Ball(int(x), float(r), mem), rho, with_flag=True)
                table.append((int(x), float(r), mem, ph, ok, float(space.measure[mem].sum())))
    return table


def _nested_scan(space, table, score1, score2, reduce_max=True):
    """max over nested pairs B1 in B2 of score1(B1) * score2(B2).

    For a fixed B2 and a center c1 inside it, B(c1, r1) lies in B2 exactly
    when r1 <= dist(c1, complement of B2), so a prefix reduction over the
    radii of c1 answers all candidates at once.
    """
    n = space.n
    by_center: dict = {}
    for i, row in enumerate(table):
        by_center.setdefault(row[0], []).append(i)
    pref = {}
    for c, ids in by_center.items():
        radii = np.array([table[i][1] for i in ids])
        s1 = np.array([score1(table[i]) for i in ids])
        acc = np.maximum.accumulate(s1)
        arg = np.zeros(len(ids), dtype=np.int64)
        cur = 0
        for t in range(1, len(ids)):
            if s1[t] > s1[cur]:
                cur = t
            arg[t] = cur
        pref[c] = (radii, acc, arg, ids)
    best, wit = -np.inf, None
    d = space.dist
    for i2, row in enumerate(table):
        s2 = score2(row)
        if not np.isfinite(s2) and s2 != np.inf:
            continue
        mem = row[2]
        mask = np.zeros(n, dtype=bool)
        mask[mem] = True
        if mask.all():
            gap = np.full(len(mem), np.inf)
        else:
            gap = d[np.ix_(mem, ~mask)].min(axis=1)
        for c1, g in zip(mem, gap):
            radii, acc, arg, ids = pref[int(c1)]
            k = np.searchsorted(radii, g, side="right") - 1
            if k < 0:
                continue
            if acc[k] == -np.inf:
                continue
            with np.errstate(invalid="ignore", over="ignore"):
                val = acc[k] * s2
            if np.isnan(val):
                continue
            if val > best:
                best = float(val)
                j1 = ids[arg[k]]
                wit = {"B1": [table[j1][0], table[j1][1]], "B2": [row[0], row[1]]}
    return best, wit


def phi_growth_constant(space: MetricMeasureSpace, K: KernelMatrix, eps: float, delta_cap: float,
                        rho: float = 8.0, growth_tol: float = 1.5):
    """Smallest L in phi(B1) mu(B1) <= L (r1/r2)^eps phi(B2) mu(B2) over nested balls of radius <= delta_cap.

    On a finite space L is always finite, so the pass flag also requires the
    constant to be scale stable: L(delta_cap) <= growth_tol * L(delta_cap/2).
    Returns (L, pass, info).
    """
    if not eps > 0:
        raise InputError("eps must be positive")

    def run(cap):
        table = _ball_table(space, K, cap, rho)

        def s1(row):
            return row[3] * row[5] / row[1] ** eps if row[4] else -np.inf

        def s2(row):
            if not row[4] or row[3] == 0:
                return np.inf
            return row[1] ** eps / (row[3] * row[5])

        return _nested_scan(space, table, s1, s2)

    L, wit = run(delta_cap)
    L_half, _ = run(0.5 * delta_cap)
    L = max(L, 0.0)
    ok = bool(np.isfinite(L) and L <= growth_tol * max(L_half, 1e-300))
    return L, ok, {"L_half": L_half, "witness": wit, "delta_cap": delta_cap}


def phi_antitone_constant(space: MetricMeasureSpace, K: KernelMatrix, delta_cap: float, rho: float = 8.0):
    """alpha = max phi(B')/phi(B) over nested B in B' (balls with an empty sup are skipped as B)."""
    table = _ball_table(space, K, delta_cap, rho)

    def s1(row):
        return 1.0 / row[3] if (row[4] and row[3] > 0) else -np.inf

    def s2(row):
        return row[3] if row[4] else 0.0

    return _nested_scan(space, table, s1, s2)


def truncated_apply(space: MetricMeasureSpace, K: KernelMatrix, delta: float, f) -> np.ndarray:
    """T_delta f(x) = sum over y != x with d(x,y) < delta of K(x,y) f(y) mu_y."""
    if not delta > 0:
        raise InputError("delta must be positive")
    f = np.asarray(f, dtype=float)
    mask = space.dist < delta
    np.fill_diagonal(mask, False)
    Kt = np.where(mask, K.values, 0.0)
    return Kt @ (f * space.measure)


def domination_check(space: MetricMeasureSpace, K: KernelMatrix, delta: float, p: float,
                     trials: int = 30, seed: int = 0, rho: float = 8.0, hypotheses: bool = True):
    """C_emp = max over nonnegative trial f of ||T_delta f||_p / ||M_{phi,delta} f||_p."""
    if not p > 1:
        raise InputError("p must exceed 1")
    phi = _PhiCache(space, K, rho)
    rep = VerificationReport("domination", {"delta": delta, "p": p, "rho": rho, "trials": trials, "seed": seed})
    ratios = []
    best, wit = 0.0, None
    violation = None
    for name, f in trial_functions(space, trials, seed, nonnegative=True):
        Tf = truncated_apply(space, K, delta, f)
        Mf = phi_maximal(space, phi, f, delta).values
        nt, nm = lp_norm(space, Tf, p), lp_norm(space, Mf, p)
        if nm == 0:
            if nt == 0:
                continue  # 0/0 skipped
            violation = {"trial": name, "T_norm": nt}
            r = math.inf
        else:
            r = nt / nm
        ratios.append({"trial": name, "ratio": r})
        if r > best:
            best, wit = r, name
    rep.constants["C_emp"] = best
    rep.constants["per_trial"] = ratios
    rep.witnesses.append({"worst_trial": wit})
    rep.add("ratios_finite", violation is None and all(math.isfinite(t["ratio"]) for t in ratios), violation)
    if hypotheses:
        scale = 2.0 * (6.0 * rho + 1.0) * delta
        A = doubling_profile(space, scale).A
        C1, kw = kernel_condition_check(space, K, 1.0 + 8.0 * rho, 4.0 * (6.0 * rho + 1.0) * delta)
        L, okL, info = phi_growth_constant(space, K, float(K.params.get("s", 1.0)) or 1.0, 2.0 * delta, rho)
        rep.constants["hypotheses"] = {
            "doubling_scale": scale, "A": A,
            "kernel_condition": {"C2": 1.0 + 8.0 * rho, "dmax": 4.0 * (6.0 * rho + 1.0) * delta, "C1": C1,
                                 "witness": kw},
            "phi_growth": {"delta_cap": 2.0 * delta, "L": L, "scale_stable": okL},
        }
    return best, rep
