"""Centered, uncentered, fractional and phi maximal functions; Morrey norms."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError
from .space import Ball, MetricMeasureSpace, _masses, doubling_profile, radius_grid


@dataclass
class MaximalResult:
    values: np.ndarray
    operator: str
    params: dict = field(default_factory=dict)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_id", "value"])
            for i, v in enumerate(self.values):
                w.writerow([i, repr(float(v))])


def _as_function(space: MetricMeasureSpace, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (space.n,):
        raise InputError(f"function must have {space.n} values")
    if not np.all(np.isfinite(f)):
        raise InputError("function values must be finite")
    return f


def check_potential(space: MetricMeasureSpace, V) -> np.ndarray:
    V = _as_function(space, V)
    if np.any(V < 0):
        raise InputError("potential must be nonnegative")
    return V


def _centered_sweep(space, g, s, upper, inclusive=False):
    """Per-center max of r^s * (mu-average of g over B(x,r)), plus argmax radius."""
    wg = g * space.measure
    vals = np.zeros(space.n)
    arg = np.zeros(space.n)
    for idx, sd, order in space.iter_sorted():
        cg = np.cumsum(wg[order], axis=1)
        cm = np.cumsum(space.measure[order], axis=1)
        for j, x in enumerate(idx):
            radii = radius_grid(sd[j], upper, inclusive)
            k = np.searchsorted(sd[j], radii, side="left")
            avg = cg[j, k - 1] / cm[j, k - 1]
            val = avg if s == 0 else radii ** s * avg
            t = int(np.argmax(val))
            vals[x] = val[t]
            arg[x] = radii[t]
    return vals, arg


def fractional_maximal(space: MetricMeasureSpace, f, s: float = 0.0, delta: float = math.inf) -> MaximalResult:
    """M_{s,delta} f(x) = max over critical radii r < delta of r^s times the average of |f| on B(x,r)."""
    if s < 0:
        raise InputError("s must be nonnegative")
    if not delta > 0:
        raise InputError("delta must be positive")
    g = np.abs(_as_function(space, f))
    vals, arg = _centered_sweep(space, g, s, space.effective_radius(delta))
    return MaximalResult(vals, "fractional" if s else "centered", {"s": s, "delta": delta, "radius": arg})


def centered_maximal(space: MetricMeasureSpace, f, R: float = math.inf) -> MaximalResult:
    return fractional_maximal(space, f, 0.0, R)


def uncentered_maximal(space: MetricMeasureSpace, f, R: float) -> MaximalResult:
    """Sup of ball averages of |f| over every ball containing x with radius <= R."""
    if not R > 0:
        raise InputError("R must be positive")
    g = np.abs(_as_function(space, f))
    return MaximalResult(_ball_family_max(space, g, None, space.effective_radius(R), True),
                         "uncentered", {"R": R})


def phi_maximal(space: MetricMeasureSpace, phi: Callable, f, delta: float) -> MaximalResult:
    """M_{phi,delta} f(x) = sup over balls B containing x with r(B) < delta of phi(B) * integral of |f| on B.

    ``phi`` is called as phi(Ball) and must return a nonnegative real.
    """
    if not delta > 0:
        raise InputError("delta must be positive")
    g = np.abs(_as_function(space, f))
    return MaximalResult(_ball_family_max(space, g, phi, space.effective_radius(delta), False),
                         "phi", {"delta": delta})


def _ball_family_max(space, g, phi, upper, inclusive):
    """Max over the ball family of a ball score, assigned to every member.

    Balls around one center are nested, so a suffix max over radii gives the
    best ball containing each sorted position.
    """
    wg = g * space.measure
    out = np.zeros(space.n)
    for idx, sd, order in space.iter_sorted():
        cg = np.cumsum(wg[order], axis=1)
        cm = np.cumsum(space.measure[order], axis=1)
        for j, x in enumerate(idx):
            radii = radius_grid(sd[j], upper, inclusive)
            k = np.searchsorted(sd[j], radii, side="left")
            if phi is None:
                score = cg[j, k - 1] / cm[j, k - 1]
            else:
                ph = np.array([phi(Ball(int(x), float(r), np.sort(order[j, :kk]))) for r, kk in zip(radii, k)])
                score = ph * cg[j, k - 1]
            suf = np.maximum.accumulate(score[::-1])[::-1]
            kmax = int(k[-1])
            pos = np.arange(kmax)
            first = np.searchsorted(k, pos, side="right")
            pts = order[j, :kmax]
            np.maximum.at(out, pts, suf[first])
    return out


def morrey_norm(space: MetricMeasureSpace, V, p: float, R: float = math.inf, witness: bool = False):
    """N_{p,R}(V) = max over x and critical r < R of (r^{2p} * average of V^p on B(x,r))^{1/p}."""
    if not p > 0:
        raise InputError("p must be positive")
    if not R > 0:
        raise InputError("R must be positive")
    V = check_potential(space, V)
    g = V ** p
    vals, arg = _centered_sweep(space, g, 2.0 * p, space.effective_radius(R))
    k = int(np.argmax(vals))
    Np = float(vals[k])
    # same quantity through the fractional maximal function of V^p
    alt = float(fractional_maximal(space, g, 2.0 * p, R).values.max())
    if alt != Np:
        raise AssertionError("Morrey norm disagrees with sup of M_{2p,R}(V^p)")
    N = Np ** (1.0 / p)
    if witness:
        return N, (k, float(arg[k]))
    return N


def morrey_table(space: MetricMeasureSpace, V, p: float):
    """Sorted per-center data for evaluating N_{p,R}(V) at many R cheaply."""
    V = check_potential(space, V)
    g = V ** p
    rows = []
    for idx, sd, order in space.iter_sorted():
        cg = np.cumsum((g * space.measure)[order], axis=1)
        cm = np.cumsum(space.measure[order], axis=1)
        for j in range(len(idx)):
            radii = radius_grid(sd[j], space.radius_cap(), False)
            k = np.searchsorted(sd[j], radii, side="left")
            rows.append((radii, radii ** (2 * p) * cg[j, k - 1] / cm[j, k - 1]))
    return rows


def trial_functions(space: MetricMeasureSpace, trials: int, seed: int, nonnegative: bool = False):
    """Fixed test corpus: constant, then point masses, ball indicators and Gaussians in turn.

    Trial t draws from its own generator seeded by (seed, t), so the corpus does
    not depend on evaluation order.
    """
    yield "constant", np.ones(space.n)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        kind = t % 3
        if kind == 0:
            y = int(rng.integers(space.n))
            f = np.zeros(space.n)
            f[y] = 1.0 / space.measure[y]
            yield f"point:{y}", f
        elif kind == 1:
            x = int(rng.integers(space.n))
            r = float(rng.uniform(0.5, 1.0)) * max(space.diameter, 1.0) * float(rng.uniform(0.02, 0.5))
            f = np.zeros(space.n)
            f[space.ball_members(x, max(r, 1e-12))] = 1.0
            yield f"ball:{x}:{r:.6g}", f
        else:
            f = rng.standard_normal(space.n)
            yield "gaussian", np.abs(f) if nonnegative else f


def lp_norm(space: MetricMeasureSpace, f, p: float) -> float:
    f = np.abs(np.asarray(f, dtype=float))
    if math.isinf(p):
        return float(f.max())
    return float((f ** p * space.measure).sum() ** (1.0 / p))


def empirical_lp_opnorm(space: MetricMeasureSpace, apply: Callable, p: float, trials: int = 30,
                        seed: int = 0, details: bool = False):
    """Lower bound on the L^p(mu) operator norm from the fixed trial corpus."""
    if not p > 1:
        raise InputError("p must exceed 1")
    if trials < 1:
        raise InputError("trials must be >= 1")
    best = 0.0
    ratios = []
    for name, f in trial_functions(space, trials, seed):
        nf = lp_norm(space, f, p)
        if nf == 0:
            continue
        r = lp_norm(space, apply(f), p) / nf
        ratios.append((name, r))
        best = max(best, r)
    return (best, ratios) if details else best


def marcinkiewicz_bound(weak_constant: float, p: float) -> float:
    """L^p bound 2 (C p/(p-1))^{1/p} for a sublinear operator of weak type (1,1) C and L^inf bound 1."""
    if math.isinf(p):
        return 1.0
    return 2.0 * (weak_constant * p / (p - 1.0)) ** (1.0 / p)


def weak11_check(space: MetricMeasureSpace, Mf, f) -> tuple[bool, dict | None]:
    """Check mu{Mf > lam} <= ||f||_1 / lam over all distinct values lam of Mf, in exact rationals."""
    from fractions import Fraction
    mu = [Fraction(float(w)) for w in space.measure]
    l1 = sum((Fraction(abs(float(v))) * w for v, w in zip(f, mu)), Fraction(0))
    vals = np.asarray(Mf, dtype=float)
    order = np.argsort(-vals, kind="stable")
    levels = np.unique(vals)
    # mass strictly above each level, accumulated from the top
    sorted_vals = vals[order]
    acc = Fraction(0)
    pos = 0
    for lam in levels[::-1]:
        while pos < len(order) and sorted_vals[pos] > lam:
            acc += mu[order[pos]]
            pos += 1
        if lam <= 0:
            continue
        if acc * Fraction(float(lam)) > l1:
            return False, {"lambda": float(lam), "mass_above": float(acc), "l1": float(l1)}
    return True, None


def load_function(path: str, n: int | None = None) -> np.ndarray:
    """Read a function from CSV (point_id,value rows, or one value per row) or a JSON array."""
    try:
        if path.endswith(".json"):
            with open(path) as fh:
                data = json.load(fh)
            vals = np.asarray(data.get("values", data) if isinstance(data, dict) else data, dtype=float)
        else:
            ids, vals_ = [], []
            with open(path, newline="") as fh:
                for row in csv.reader(fh):
                    row = [c for c in row if c.strip()]
                    if not row or row[0].strip().startswith("#"):
                        continue
                    try:
                        if len(row) == 1:  # bare value column, ids implicit
                            vals_.append(float(row[0]))
                            ids.append(len(ids))
                        else:
                            ids.append(int(row[0]))
                            vals_.append(float(row[1]))
                    except ValueError:
                        if ids:
                            raise
                        continue  # header line
            if not ids:
                raise ValueError("no data rows")
            size = n if n is not None else (max(ids) + 1 if ids else 0)
            vals = np.zeros(size)
            for i, v in zip(ids, vals_):
                if i < 0 or i >= size:
                    raise InputError(f"point id {i} out of range")
                vals[i] = v
    except (OSError, ValueError, IndexError) as exc:
        raise InputError(f"cannot read function file {path}: {exc}") from None
    if n is not None and vals.size != n:
        raise InputError(f"function file has {vals.size} values, space has {n}")
    if not np.all(np.isfinite(vals)):
        raise InputError("function values must be finite")
    return vals


def save_function(values, path: str) -> None:
    MaximalResult(np.asarray(values, dtype=float), "custom").to_csv(path)


def product_morrey_check(space: MetricMeasureSpace, V, n_line: int, h: float, p: float, R: float,
                         product=None) -> dict:
    """Compare N_{p,R}(V) with the product-space norm of V(s,m) = V(m).

    The upper constant is the product-space one, C = 4A; the lower constant
    is taken as c = 1/(4A), with A the base doubling constant at scale R.
    """
    from .space import product_space
    prod = product if product is not None else product_space(space, n_line, h)
    N = morrey_norm(space, V, p, R)
    Nt = morrey_norm(prod, np.tile(np.asarray(V, dtype=float), n_line), p, R)
    A = doubling_profile(space, R).A
    C = 4.0 * A
    c = 1.0 / (4.0 * A)
    return {"N": N, "N_product": Nt, "A": A, "C": C, "c": c,
            "upper_ok": Nt <= C * N, "lower_ok": c * N <= Nt}
