"""Dyadic cube hierarchies and the dyadic maximal function.

Construction: nested nets X^K subset ... subset X^m, where X^K is one point,
X^m is the whole space and X^k (m < k < K) is a greedy maximal
s*rho^k-separated set grown from X^(k+1) in ascending id.  Every net point
is attached to its nearest point of the next net (ties to the lowest id) and
a cube is the set of level-m descendants of a net point.

With s <= rho - 1 the chain of parent links from y up to level k has length
< s*rho^(k+1)/(rho-1) <= rho^(k+1), giving the outer inclusion.  If y sits
in B(x_a, rho^k) but descends from x_b, nearest-parent assignment of y's
level-(k-1) ancestor gives d(x_a, x_b) < 2 rho^k (1 + s/(rho-1)), which
contradicts the separation s*rho^k as soon as 1 + s/(rho-1) <= s/2.  Both
constraints are compatible for rho > 5.  The result is always re-verified.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HierarchyError, InputError
from .report import VerificationReport
from .space import MetricMeasureSpace


@dataclass
class Level:
    k: int
    centers: np.ndarray          # center point id per cube
    members: list                # sorted member arrays per cube
    parent: np.ndarray | None = None  # cube index at level k+1

    def labels(self, n: int) -> np.ndarray:
        lab = np.full(n, -1, dtype=np.int64)
        for i, mem in enumerate(self.members):
            lab[mem] = i
        return lab


@dataclass
class CubeHierarchy:
    rho: float
    m: int
    levels: list
    space: MetricMeasureSpace | None = field(default=None, repr=False)
    separation: float | None = None

    @property
    def K(self) -> int:
        return self.levels[-1].k

    def level(self, k: int) -> Level:
        return self.levels[k - self.m]

    def length(self, k: int) -> float:
        return float(self.rho) ** k

    def to_dict(self) -> dict:
        return {"rho": float(self.rho), "m": int(self.m),
                "levels": [{"k": int(L.k), "cubes": [{"center": int(c), "members": [int(v) for v in mem]}
                                                    for c, mem in zip(L.centers, L.members)]}
                           for L in self.levels]}

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def hierarchy_from_dict(data: dict, space: MetricMeasureSpace | None = None) -> CubeHierarchy:
    try:
        levels = []
        for L in sorted(data["levels"], key=lambda L: L["k"]):
            centers = np.array([c["center"] for c in L["cubes"]], dtype=np.int64)
            members = [np.sort(np.asarray(c["members"], dtype=np.int64)) for c in L["cubes"]]
            levels.append(Level(int(L["k"]), centers, members))
        H = CubeHierarchy(float(data["rho"]), int(data["m"]), levels, space)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed hierarchy: {exc}") from None
    ks = [L.k for L in H.levels]
    if ks != list(range(H.m, H.m + len(ks))):
        raise InputError("hierarchy levels must be consecutive starting at m")
    return H


def load_hierarchy(path: str, space: MetricMeasureSpace | None = None) -> CubeHierarchy:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read hierarchy file {path}: {exc}") from None
    return hierarchy_from_dict(data, space)


def default_level(space: MetricMeasureSpace, rho: float) -> int:
    """Largest m with rho^m <= smallest positive distance."""
    if space.n == 1:
        return 0
    dmin = space.min_distance
    m = math.floor(math.log(dmin) / math.log(rho))
    while rho ** (m + 1) <= dmin:
        m += 1
    while rho ** m > dmin:
        m -= 1
    return m


def net_separation(rho: float) -> float:
    """Separation factor s for the nets (see module docstring)."""
    if rho > 5:
        lo = 2.0 * (rho - 1.0) / (rho - 3.0)
        return 0.5 * (lo + (rho - 1.0))
    return rho - 1.0


def build_hierarchy(space: MetricMeasureSpace, m: int | None = None, rho: float = 8.0,
                    verify: bool = True) -> CubeHierarchy:
    if not rho > 1:
        raise InputError("rho must exceed 1")
    if m is None:
        m = default_level(space, rho)
    m = int(m)
    if space.n > 1 and rho ** m > space.min_distance:
        raise InputError(f"rho^m = {rho ** m} exceeds the smallest distance {space.min_distance}")
    diam = space.diameter
    K = m
    while rho ** (K + 1) <= diam:
        K += 1
    s = net_separation(rho)
    n = space.n

    # nets from the top down
    nets = {K: np.array([0], dtype=np.int64)} if K > m else {}
    for k in range(K - 1, m, -1):
        sep = s * rho ** k
        net = list(nets[k + 1])
        near = np.zeros(n, dtype=bool)
        for c in net:
            near |= space.rows([c])[0] < sep
        for y in range(n):
            if not near[y]:
                net.append(y)
                near |= space.rows([y])[0] < sep
        nets[k] = np.sort(np.asarray(net, dtype=np.int64))
    nets[m] = np.arange(n, dtype=np.int64)

    # parent links: nearest point of the next net, ties to lowest id
    up = {}
    for k in range(m, K):
        src = nets[k]
        dst = nets[k + 1]
        d = space.rows(src)[:, dst]
        up[k] = dst[np.argmin(d, axis=1)]  # argmin returns the first (lowest id) minimizer

    # level-m labels are the points themselves; push ancestors upward
    anc = np.arange(n, dtype=np.int64)
    levels = []
    pos_prev = None
    for k in range(m, K + 1):
        centers = nets[k]
        pos = {int(c): i for i, c in enumerate(centers)}
        lab = np.array([pos[int(a)] for a in anc], dtype=np.int64)
        members = [np.flatnonzero(lab == i) for i in range(len(centers))]
        levels.append(Level(k, centers, members))
        if k < K:
            link = {int(c): int(p) for c, p in zip(nets[k], up[k])}
            anc = np.array([link[int(a)] for a in anc], dtype=np.int64)
        pos_prev = pos
    for i in range(len(levels) - 1):
        nxt = {int(c): j for j, c in enumerate(levels[i + 1].centers)}
        levels[i].parent = np.array([nxt[int(up[levels[i].k][np.searchsorted(nets[levels[i].k], c)])]
                                     for c in levels[i].centers], dtype=np.int64)
    H = CubeHierarchy(float(rho), m, levels, space, separation=s)
    if verify:
        rep = verify_hierarchy(space, H)
        if not rep.passed:
            bad = next(c for c in rep.checks if not c.passed)
            raise HierarchyError(f"cube construction failed ({bad.name}); rho={rho} too small for this space?",
                                 witness=bad.worst_case)
    return H


def verify_hierarchy(space: MetricMeasureSpace, H: CubeHierarchy) -> VerificationReport:
    """Exact partition, nesting and ball-sandwich checks with first counterexamples."""
    if H.space is not None and H.space is not space and H.space.n != space.n:
        raise InputError("hierarchy was built on a different space")
    n = space.n
    for L in H.levels:
        for mem in L.members:
            if len(mem) and (mem.min() < 0 or mem.max() >= n):
                raise InputError("hierarchy references points outside the space")
    rep = VerificationReport("cube-hierarchy", {"rho": H.rho, "m": H.m, "K": H.K,
                                                "levels": len(H.levels)})

    # partition
    bad = None
    for L in H.levels:
        count = np.zeros(n, dtype=np.int64)
        for mem in L.members:
            np.add.at(count, mem, 1)
        wrong = np.flatnonzero(count != 1)
        if wrong.size:
            bad = {"level": L.k, "point": int(wrong[0]), "cubes_containing": int(count[wrong[0]])}
            break
    rep.add("partition", bad is None, bad)

    # nesting: every cube inside exactly one cube of each higher level
    bad = None
    sets = [[set(mem.tolist()) for mem in L.members] for L in H.levels]
    for i, L in enumerate(H.levels):
        for a, mem in enumerate(sets[i]):
            for j in range(i + 1, len(H.levels)):
                hits = [b for b, big in enumerate(sets[j]) if mem <= big]
                if len(hits) != 1:
                    bad = {"level": L.k, "cube": a, "center": int(L.centers[a]), "upper_level": H.levels[j].k,
                           "containing_cubes": hits}
                    break
            if bad:
                break
        if bad:
            break
    rep.add("nesting", bad is None, bad)

    # sandwich B(x, rho^k) in E in B(x, rho^(k+1))
    bad = None
    for L in H.levels:
        r_in = H.rho ** L.k
        r_out = H.rho ** (L.k + 1)
        d = space.rows(L.centers)
        for a, mem in enumerate(L.members):
            inner = np.flatnonzero(d[a] < r_in)
            missing = np.setdiff1d(inner, mem)
            outside = mem[d[a, mem] >= r_out]
            if missing.size or outside.size:
                bad = {"level": L.k, "cube": a, "center": int(L.centers[a]),
                       "inner_ball_missing": missing[:5].tolist(), "outside_outer_ball": outside[:5].tolist()}
                break
        if bad:
            break
    rep.add("sandwich", bad is None, bad)
    return rep


def cube_tables(H: CubeHierarchy, space: MetricMeasureSpace):
    """Per-level labels and cube masses (bincount sums in point order)."""
    out = []
    for L in H.levels:
        lab = L.labels(space.n)
        mass = np.bincount(lab, weights=space.measure, minlength=len(L.centers))
        out.append((L.k, lab, mass))
    return out


def dyadic_maximal(H: CubeHierarchy, f, lmax: float = math.inf, space: MetricMeasureSpace | None = None) -> np.ndarray:
    """M_d f(x) = max over cubes Q containing x with rho^k <= lmax of the mu-average of |f| on Q."""
    space = space or H.space
    if space is None:
        raise InputError("a space is required")
    f = np.abs(np.asarray(f, dtype=float))
    if f.shape != (space.n,) or not np.all(np.isfinite(f)):
        raise InputError("f must be a finite vector on the points")
    out = np.zeros(space.n)
    wf = f * space.measure
    for k, lab, mass in cube_tables(H, space):
        if H.rho ** k > lmax:
            break
        tot = np.bincount(lab, weights=wf, minlength=len(mass))
        np.maximum(out, (tot / mass)[lab], out=out)
    return out
