"""Finite metric-measure spaces, open balls and doubling-type constants.

Every supremum over radii is taken over a finite set of critical radii: the
distinct distances seen from a center together with the midpoints between
consecutive ones.  On a finite space every open ball equals a ball at one of
those radii, so the sups are exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import InputError

# dense distance matrices are cached up to this size
DENSE_LIMIT = 4000
# per-center sorted distance tables are cached up to this size
INDEX_LIMIT = 2500
# exhaustive triangle check up to this size, sampled above
EXACT_CHECK_LIMIT = 500
TRIPLE_SAMPLES = 1_000_000


class MetricMeasureSpace:
    """Finite point set 0..n-1 with a metric and positive point masses.

    The metric comes from one of three sources: an explicit matrix, a
    weighted edge list (shortest path), or a closed-form evaluator supplied
    by a generator.  Edges and conductances, when present, feed the
    Dirichlet form in :mod:`mmlab.spectral`.
    """

    def __init__(
        self,
        measure,
        *,
        matrix=None,
        edges=None,
        lengths=None,
        conductances=None,
        coords=None,
        metric_fn: Callable | None = None,
        metric_type: str | None = None,
        boundary=None,
        factors: tuple | None = None,
        generator: dict | None = None,
        validate: bool = True,
        seed: int = 0,
    ):
        mu = np.asarray(measure, dtype=float).ravel()
        if mu.size == 0:
            raise InputError("space must have at least one point")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise InputError("measure weights must be finite and strictly positive")
        self.n = int(mu.size)
        self.measure = _frozen(mu)
        self.coords = None if coords is None else _frozen(np.asarray(coords, dtype=float).reshape(self.n, -1))
        self.generator = generator
        self.factors = factors
        self.boundary = None if boundary is None else _frozen(np.asarray(boundary, dtype=bool).ravel())

        self.edges = None
        self.lengths = None
        self.conductances = None
        if edges is not None:
            e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
            if e.size and (e.min() < 0 or e.max() >= self.n):
                raise InputError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise InputError("self loops are not allowed")
            ln = np.ones(len(e)) if lengths is None else np.asarray(lengths, dtype=float).ravel()
            if ln.size != len(e) or not np.all(np.isfinite(ln)) or np.any(ln <= 0):
                raise InputError("edge lengths must be positive")
            self.edges = _frozen(e)
            self.lengths = _frozen(ln)
            if conductances is not None:
                w = np.asarray(conductances, dtype=float).ravel()
                if w.size != len(e):
                    raise InputError("one conductance per edge required")
                if not np.all(np.isfinite(w)) or np.any(w <= 0):
                    raise InputError("conductances must be strictly positive")
                self.conductances = _frozen(w)

        self._dist = None
        self._metric_fn = metric_fn
        self._graph = None
        if matrix is not None:
            d = np.array(matrix, dtype=float)
            if d.shape != (self.n, self.n):
                raise InputError(f"metric matrix must be {self.n}x{self.n}")
            self._dist = _frozen(d)
            self.metric_type = "explicit"
        elif metric_fn is not None:
            self.metric_type = metric_type or "explicit"
        elif self.edges is not None:
            self.metric_type = "graph"
            self._graph = self._edge_graph()
            ncomp, _ = connected_components(self._graph, directed=False)
            if ncomp != 1:
                raise InputError("graph is disconnected")
        elif self.n == 1:
            self._dist = _frozen(np.zeros((1, 1)))
            self.metric_type = "explicit"
        else:
            raise InputError("a metric matrix, an edge list or a metric evaluator is required")

        self._diameter = None
        self._min_distance = None
        self._index = None
        if validate:
            check_metric(self, seed=seed)

    # -- distances -----------------------------------------------------
    def _edge_graph(self):
        e = self.edges
        g = coo_matrix((np.concatenate([self.lengths, self.lengths]),
                        (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
                       shape=(self.n, self.n))
        return g.tocsr()

    def rows(self, idx) -> np.ndarray:
        """Distances from each point in ``idx`` to every point, shape (len(idx), n)."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise InputError("unknown point id")
        if self._dist is not None:
            return self._dist[idx]
        if self._metric_fn is not None:
            return np.asarray(self._metric_fn(idx), dtype=float)
        if self._graph is None:
            self._graph = self._edge_graph()
        return dijkstra(self._graph, directed=False, indices=idx)

    def distance(self, x: int, y: int) -> float:
        return float(self.rows([x])[0, y])

    @property
    def dist(self) -> np.ndarray:
        """Dense distance matrix (cached; refused for very large spaces)."""
        if self._dist is None:
            if self.n > DENSE_LIMIT:
                raise InputError(f"dense distance matrix refused for n={self.n} > {DENSE_LIMIT}; use rows()")
            d = np.array(self.rows(np.arange(self.n)), dtype=float)
            if self.metric_type == "graph":
                d = np.minimum(d, d.T)  # remove last-bit asymmetry of path sums
            self._dist = _frozen(d)
        return self._dist

    def iter_rows(self, block: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (centers, distance rows) in blocks covering all points."""
        if block is None:
            block = max(1, min(self.n, 4_000_000 // max(self.n, 1)))
        for start in range(0, self.n, block):
            idx = np.arange(start, min(self.n, start + block))
            yield idx, self.rows(idx)

    @property
    def diameter(self) -> float:
        if self._diameter is None:
            self._scan_extremes()
        return self._diameter

    @property
    def min_distance(self) -> float:
        """Smallest positive distance (inf for a single point)."""
        if self._min_distance is None:
            self._scan_extremes()
        return self._min_distance

    def _scan_extremes(self):
        if self.n == 1:
            self._diameter, self._min_distance = 0.0, math.inf
            return
        dmax, dmin = 0.0, math.inf
        if self.edges is not None and self.metric_type == "graph":
            dmin = float(self.lengths.min())  # shortest edge realizes the min distance
            for _, r in self.iter_rows():
                dmax = max(dmax, float(r.max()))
        else:
            for _, r in self.iter_rows():
                dmax = max(dmax, float(r.max()))
                pos = r[r > 0]
                if pos.size:
                    dmin = min(dmin, float(pos.min()))
        self._diameter, self._min_distance = dmax, dmin

    def radius_cap(self) -> float:
        """Finite stand-in for an infinite radius bound.

        Any strict bound beyond the diameter realizes the whole space as a
        ball from every center; we use diameter + half the smallest distance.
        """
        if self.n == 1:
            return 1.0
        return self.diameter + 0.5 * self.min_distance

    def effective_radius(self, r: float) -> float:
        """Radius bounds beyond the cap only repeat the whole-space ball; clip them."""
        return min(float(r), self.radius_cap())

    # -- balls -----------------------------------------------------------
    def sorted_rows(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Per-center sorted distances and the matching point order."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if self._index is None and self.n <= INDEX_LIMIT:
            d = self.dist
            order = np.argsort(d, axis=1, kind="stable")
            self._index = (_frozen(np.take_along_axis(d, order, axis=1)), _frozen(order))
        if self._index is not None:
            return self._index[0][idx], self._index[1][idx]
        d = self.rows(idx)
        order = np.argsort(d, axis=1, kind="stable")
        return np.take_along_axis(d, order, axis=1), order

    def iter_sorted(self, block: int | None = None):
        """Yield (centers, sorted distances, order) blocks over all centers."""
        if block is None:
            block = max(1, min(self.n, 2_000_000 // max(self.n, 1)))
        for start in range(0, self.n, block):
            idx = np.arange(start, min(self.n, start + block))
            sd, order = self.sorted_rows(idx)
            yield idx, sd, order

    def ball_members(self, center: int, r: float) -> np.ndarray:
        if not r > 0:
            raise InputError("radius must be positive")
        row = self.rows([center])[0]
        return np.flatnonzero(row < r)

    def ball(self, center: int, r: float) -> "Ball":
        return Ball(int(center), float(r), self.ball_members(center, r))

    def ball_measure(self, center: int, r: float) -> float:
        return float(self.measure[self.ball_members(center, r)].sum())

    @property
    def total_measure(self) -> float:
        return float(self.measure.sum())

    def with_coords_center(self) -> int:
        """Point closest to the coordinate centroid (ties to lowest id)."""
        if self.coords is None:
            raise InputError("space has no coordinates")
        c = self.coords.mean(axis=0)
        return int(np.argmin(((self.coords - c) ** 2).sum(axis=1)))

    def __repr__(self):
        g = self.generator.get("type") if self.generator else self.metric_type
        return f"MetricMeasureSpace(n={self.n}, kind={g})"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float
    members: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError("ball radius must be positive")

    def contains(self, other: "Ball") -> bool:
        return bool(np.isin(other.members, self.members).all())

    def dilate(self, space: MetricMeasureSpace, c: float) -> "Ball":
        return space.ball(self.center, c * self.radius)


@dataclass
class DoublingProfile:
    A: float
    eta: float
    a: float
    nu: float
    R: float
    D: float
    witnesses: list = field(default_factory=list)

    def as_dict(self):
        return {"A": self.A, "eta": self.eta, "a": self.a, "nu": self.nu, "R": self.R, "D": self.D,
                "witnesses": [list(w) for w in self.witnesses]}


@dataclass
class ExpDoubling:
    D_emp: float
    D_apriori: float
    witness: tuple | None = None


# -- validation ------------------------------------------------------------
def check_metric(space: MetricMeasureSpace, seed: int = 0, rtol: float = 1e-12) -> None:
    """Raise InputError unless the metric axioms hold.

    Exhaustive on small spaces, 10^6 seeded triples otherwise.  A relative
    slack of ``rtol`` times the diameter absorbs floating point rounding in
    sums of edge lengths or Euclidean norms.
    """
    n = space.n
    if n == 1:
        d = space.rows([0])
        if d[0, 0] != 0:
            raise InputError("d(x,x) must be 0")
        return
    if n <= EXACT_CHECK_LIMIT:
        d = space.rows(np.arange(n))
        _check_block(d, np.arange(n), d)
        tol = rtol * max(float(d.max()), 1.0)
        for k in range(n):
            if np.any(d > d[:, [k]] + d[[k], :] + tol):
                i, j = np.argwhere(d > d[:, [k]] + d[[k], :] + tol)[0]
                raise InputError(f"triangle inequality fails for ({i},{k},{j})")
        return
    rng = np.random.default_rng(seed)
    ns = int(min(n, max(2, 20_000_000 // n), 1000))
    src = np.sort(rng.choice(n, size=ns, replace=False))
    d = space.rows(src)
    _check_block(d, src, None)
    tol = rtol * max(float(d.max()), 1.0)
    i = rng.integers(ns, size=TRIPLE_SAMPLES)
    k = rng.integers(ns, size=TRIPLE_SAMPLES)
    j = rng.integers(n, size=TRIPLE_SAMPLES)
    lhs = d[i, j]
    rhs = d[i, src[k]] + d[k, j]
    if np.any(lhs > rhs + tol):
        t = int(np.argmax(lhs - rhs))
        raise InputError(f"triangle inequality fails for ({src[i[t]]},{src[k[t]]},{j[t]})")


def _check_block(d: np.ndarray, src: np.ndarray, full: np.ndarray | None) -> None:
    if not np.all(np.isfinite(d)):
        raise InputError("distances must be finite (disconnected space?)")
    if np.any(d[np.arange(len(src)), src] != 0):
        raise InputError("d(x,x) must be 0")
    off = np.ones_like(d, dtype=bool)
    off[np.arange(len(src)), src] = False
    if np.any(d[off] <= 0):
        raise InputError("distinct points must be at positive distance")
    sub = d[:, src]
    tol = 1e-12 * max(float(d.max()), 1.0)
    if np.any(np.abs(sub - sub.T) > tol):
        raise InputError("metric must be symmetric")


# -- generators ------------------------------------------------------------
def _weights(sigma2, pts: np.ndarray) -> np.ndarray:
    if sigma2 is None:
        return np.ones(len(pts))
    if callable(sigma2):
        w = np.asarray(sigma2(pts), dtype=float).reshape(-1)
        if w.size == 1:
            w = np.full(len(pts), float(w[0]))
    else:
        w = np.full(len(pts), float(sigma2))
    if w.size != len(pts) or not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InputError("weight function sigma^2 must be strictly positive")
    return w


def path(n: int, h: float = 1.0, sigma2=None) -> MetricMeasureSpace:
    """Points 0..n-1 at spacing h on a line."""
    return grid(1, n, h, sigma2)


def grid(dim: int, side: int, h: float = 1.0, sigma2=None) -> MetricMeasureSpace:
    """Cubic lattice {0..side-1}^dim with spacing h and the shortest-path metric.

    Point ids are row-major in the multi-index.  Measure sigma^2(x) h^d and
    conductance sigma^2(midpoint) h^(d-2), so that the discrete Dirichlet form
    approximates the weighted energy integral.
    """
    dim, side = int(dim), int(side)
    if dim < 1 or side < 1:
        raise InputError("grid needs dim >= 1 and side >= 1")
    if not h > 0:
        raise InputError("spacing must be positive")
    shape = (side,) * dim
    n = side ** dim
    idx = np.indices(shape).reshape(dim, n).T
    coords = idx * float(h)
    mu = _weights(sigma2, coords) * h ** dim
    edges, mids = [], []
    ids = np.arange(n).reshape(shape)
    for ax in range(dim):
        a = np.take(ids, np.arange(side - 1), axis=ax).ravel()
        b = np.take(ids, np.arange(1, side), axis=ax).ravel()
        edges.append(np.stack([a, b], axis=1))
        mids.append(0.5 * (coords[a] + coords[b]))
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    mids = np.concatenate(mids) if mids else np.zeros((0, dim))
    cond = _weights(sigma2, mids) * h ** (dim - 2) if len(edges) else np.zeros(0)
    boundary = np.any((idx == 0) | (idx == side - 1), axis=1)
    hh = float(h)

    def metric(rows_idx):
        return np.abs(idx[rows_idx][:, None, :] - idx[None, :, :]).sum(axis=2) * hh if dim > 1 \
            else np.abs(idx[rows_idx, 0][:, None] - idx[None, :, 0]).astype(float) * hh

    factors = None
    if sigma2 is None and dim > 1:
        factors = tuple(grid(1, side, h) for _ in range(dim))
    desc = {"type": "grid" if dim > 1 else "path", "dim": dim, "side": side, "h": hh}
    if dim == 1:
        desc = {"type": "path", "n": side, "h": hh}
    if sigma2 is not None:
        desc["weighted"] = True
    return MetricMeasureSpace(mu, edges=edges, lengths=np.full(len(edges), hh), conductances=cond,
                              coords=coords, metric_fn=metric, metric_type="graph", boundary=boundary,
                              factors=factors, generator=desc)


def binary_tree(depth: int, h: float = 1.0) -> MetricMeasureSpace:
    """Complete binary tree in heap order (root 0), unit masses times h."""
    depth = int(depth)
    if depth < 0:
        raise InputError("depth must be >= 0")
    if not h > 0:
        raise InputError("spacing must be positive")
    n = 2 ** (depth + 1) - 1
    child = np.arange(1, n)
    edges = np.stack([(child - 1) // 2, child], axis=1)
    level = np.floor(np.log2(np.arange(n) + 1)).astype(int)
    return MetricMeasureSpace(np.full(n, float(h)), edges=edges, lengths=np.full(n - 1, float(h)),
                              conductances=np.full(n - 1, 1.0 / h), boundary=level == depth,
                              generator={"type": "tree", "depth": depth, "h": float(h)})


def connected_sum(grids: Sequence[tuple], neck: int, h: float = 1.0) -> MetricMeasureSpace:
    """Grids joined in sequence by paths of ``neck`` edges.

    Each entry of ``grids`` is (dim, side); all share the spacing h.  The neck
    runs from the center of the last face of one grid to the center of the
    first face of the next one.  Neck vertices carry the grid measure h^d.
    """
    if len(grids) < 1:
        raise InputError("need at least one grid")
    neck = int(neck)
    if neck < 1:
        raise InputError("neck length must be >= 1")
    dims = {int(g[0]) for g in grids}
    if len(dims) != 1:
        raise InputError("all grids must share the dimension")
    dim = dims.pop()
    parts = [grid(dim, int(s), h) for _, s in grids]
    mu, edges, cond, bnd = [], [], [], []
    offset = 0
    ends = []
    for g in parts:
        side = g.generator["side"] if "side" in g.generator else g.generator["n"]
        mid = side // 2
        first = np.ravel_multi_index((0,) + (mid,) * (dim - 1), (side,) * dim)
        last = np.ravel_multi_index((side - 1,) + (mid,) * (dim - 1), (side,) * dim)
        ends.append((offset + first, offset + last))
        mu.append(g.measure)
        edges.append(g.edges + offset)
        cond.append(g.conductances)
        bnd.append(g.boundary)
        offset += g.n
    w_edge = h ** (dim - 2)
    for i in range(len(parts) - 1):
        a = ends[i][1]
        b = ends[i + 1][0]
        chain = [a] + list(range(offset, offset + neck - 1)) + [b]
        mu.append(np.full(neck - 1, h ** dim))
        bnd.append(np.zeros(neck - 1, dtype=bool))
        offset += neck - 1
        edges.append(np.stack([chain[:-1], chain[1:]], axis=1))
        cond.append(np.full(neck, w_edge))
    edges = np.concatenate(edges)
    return MetricMeasureSpace(np.concatenate(mu), edges=edges, lengths=np.full(len(edges), float(h)),
                              conductances=np.concatenate(cond), boundary=np.concatenate(bnd),
                              generator={"type": "connected-sum", "grids": [list(map(int, g)) for g in grids],
                                         "neck": neck, "h": float(h)})


def explicit(matrix, weights, coords=None) -> MetricMeasureSpace:
    return MetricMeasureSpace(weights, matrix=matrix, coords=coords)


def random_space(n: int, seed: int, kind: str = "euclidean") -> MetricMeasureSpace:
    """Seeded random test space: Euclidean points in the plane or a random weighted graph."""
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.5, 2.0, size=n)
    if kind == "euclidean":
        pts = rng.uniform(0.0, 10.0, size=(n, 2))
        d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
        return MetricMeasureSpace(mu, matrix=d, coords=pts)
    if kind == "graph":
        # random spanning tree plus a few chords
        parent = np.array([rng.integers(i) for i in range(1, n)], dtype=np.int64)
        e = [np.stack([parent, np.arange(1, n)], axis=1)]
        extra = rng.integers(n, size=(n // 2, 2))
        extra = extra[extra[:, 0] != extra[:, 1]]
        e.append(extra)
        e = np.unique(np.sort(np.concatenate(e), axis=1), axis=0)
        ln = rng.uniform(0.5, 3.0, size=len(e))
        return MetricMeasureSpace(mu, edges=e, lengths=ln)
    raise InputError(f"unknown random space kind {kind!r}")


def product_space(space: MetricMeasureSpace, n_line: int, h: float = 1.0) -> MetricMeasureSpace:
    """Line(n_line, h) x space with the Euclidean combination metric.

    Point (s, m) has id s*space.n + m.  Measure h*mu(m).  Conductances are
    chosen so that the Dirichlet operator is exactly the Kronecker sum of the
    free line operator and the base operator.
    """
    n_line = int(n_line)
    if n_line < 2:
        raise InputError("n_line must be >= 2")
    if not h > 0:
        raise InputError("spacing must be positive")
    n0 = space.n
    N = n_line * n0
    hh = float(h)
    mu = (hh * np.tile(space.measure, n_line)).astype(float)
    line_of = np.repeat(np.arange(n_line), n0)
    base_of = np.tile(np.arange(n0), n_line)

    def metric(rows_idx):
        s = line_of[rows_idx]
        m = base_of[rows_idx]
        dm = space.rows(np.unique(m))
        pos = np.searchsorted(np.unique(m), m)
        base = dm[pos][:, base_of]
        ds = (s[:, None] - line_of[None, :]) * hh
        return np.sqrt(ds * ds + base * base)

    edges, cond, lens = [], [], []
    ids = np.arange(N).reshape(n_line, n0)
    # line edges: conductance mu_m / h
    a = ids[:-1].ravel()
    b = ids[1:].ravel()
    edges.append(np.stack([a, b], axis=1))
    cond.append(np.tile(space.measure, n_line - 1) / hh)
    lens.append(np.full(len(a), hh))
    if space.edges is not None:
        w = base_conductances(space)
        for s in range(n_line):
            edges.append(space.edges + s * n0)
            cond.append(hh * w)
            lens.append(space.lengths)
    boundary = None
    if space.boundary is not None:
        boundary = np.tile(space.boundary, n_line)
    line = grid(1, n_line, hh)
    coords = None
    if space.coords is not None:
        coords = np.column_stack([line_of * hh, space.coords[base_of]])
    return MetricMeasureSpace(mu, edges=np.concatenate(edges), lengths=np.concatenate(lens),
                              conductances=np.concatenate(cond), coords=coords, metric_fn=metric,
                              metric_type="explicit", boundary=boundary, factors=(line, space),
                              generator={"type": "product", "n_line": n_line, "h": hh,
                                         "base": space.generator})


def base_conductances(space: MetricMeasureSpace) -> np.ndarray:
    """Edge conductances, defaulting to mean endpoint mass over length squared."""
    if space.edges is None:
        raise InputError("space has no edges")
    if space.conductances is not None:
        return np.asarray(space.conductances)
    e = space.edges
    return 0.5 * (space.measure[e[:, 0]] + space.measure[e[:, 1]]) / space.lengths ** 2


def generate_space(desc: dict) -> MetricMeasureSpace:
    """Build a space from a generator descriptor dictionary."""
    t = desc.get("type")
    h = float(desc.get("h", 1.0))
    if t == "path":
        return path(int(desc["n"]), h)
    if t == "grid":
        return grid(int(desc["dim"]), int(desc["side"]), h)
    if t == "tree":
        return binary_tree(int(desc["depth"]), h)
    if t == "connected-sum":
        return connected_sum([tuple(g) for g in desc["grids"]], int(desc["neck"]), h)
    if t == "explicit":
        return explicit(desc["matrix"], desc["measure"])
    if t == "product":
        base = generate_space(desc["base"])
        return product_space(base, int(desc["n_line"]), h)
    raise InputError(f"unknown generator {t!r}")


# -- file format ---------------------------------------------------------------
def space_to_dict(space: MetricMeasureSpace) -> dict:
    out = {"n": space.n}
    if space.metric_type == "graph" and space.edges is not None:
        out["metric"] = {"type": "graph",
                         "edges": [[int(u), int(v), float(l)] for (u, v), l in zip(space.edges, space.lengths)]}
    else:
        out["metric"] = {"type": "explicit", "matrix": space.dist.tolist()}
        if space.edges is not None:
            out["edges"] = [[int(u), int(v), float(l)] for (u, v), l in zip(space.edges, space.lengths)]
    if space.conductances is not None:
        out["conductances"] = [float(w) for w in space.conductances]
    out["measure"] = [float(w) for w in space.measure]
    if space.coords is not None:
        out["coords"] = space.coords.tolist()
    if space.boundary is not None:
        out["boundary"] = [int(i) for i in np.flatnonzero(space.boundary)]
    if space.generator is not None and not space.generator.get("weighted"):
        out["generator"] = space.generator
    return out


def space_from_dict(data: dict) -> MetricMeasureSpace:
    try:
        n = int(data["n"])
        measure = np.asarray(data["measure"], dtype=float)
        metric = data["metric"]
        mtype = metric["type"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed space file: {exc}") from None
    if measure.size != n:
        raise InputError("measure length does not match n")
    gen = data.get("generator")
    if gen is not None:
        space = generate_space(gen)
        if space.n != n or not np.allclose(space.measure, measure, rtol=1e-12, atol=0):
            raise InputError("generator descriptor does not match the stored space")
        return space
    coords = data.get("coords")
    boundary = None
    if "boundary" in data:
        boundary = np.zeros(n, dtype=bool)
        boundary[np.asarray(data["boundary"], dtype=int)] = True
    cond = data.get("conductances")
    if mtype == "graph":
        e = np.asarray(metric["edges"], dtype=float).reshape(-1, 3)
        return MetricMeasureSpace(measure, edges=e[:, :2].astype(np.int64), lengths=e[:, 2],
                                  conductances=cond, coords=coords, boundary=boundary)
    if mtype == "explicit":
        edges = lengths = None
        if "edges" in data:
            e = np.asarray(data["edges"], dtype=float).reshape(-1, 3)
            edges, lengths = e[:, :2].astype(np.int64), e[:, 2]
        return MetricMeasureSpace(measure, matrix=metric["matrix"], edges=edges, lengths=lengths,
                                  conductances=cond, coords=coords, boundary=boundary)
    raise InputError(f"unknown metric type {mtype!r}")


def load_space(path_: str) -> MetricMeasureSpace:
    try:
        with open(path_) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read space file {path_}: {exc}") from None
    return space_from_dict(data)


def save_space(space: MetricMeasureSpace, path_: str) -> None:
    with open(path_, "w") as fh:
        json.dump(space_to_dict(space), fh)


# -- critical radii ------------------------------------------------------------
def radius_grid(breaks: np.ndarray, upper: float, inclusive: bool) -> np.ndarray:
    """Radii realizing every distinct configuration of the given breakpoints.

    Returns the breakpoints inside the range together with the midpoints of
    consecutive ones (starting from 0).  With ``inclusive`` the range is
    (0, upper] and ``upper`` itself is included, otherwise it is (0, upper)
    and the last gap is closed by a midpoint below ``upper``.
    """
    b = np.unique(breaks[breaks > 0])
    if inclusive:
        inside = b[b <= upper]
        grid_ = np.concatenate(([0.0], inside, [upper]))
        extra = [upper]
    else:
        inside = b[b < upper]
        grid_ = np.concatenate(([0.0], inside, [upper]))
        extra = []
    mids = 0.5 * (grid_[:-1] + grid_[1:])
    mids = mids[mids > 0]
    return np.unique(np.concatenate((inside, mids, extra)))


def critical_radii(space: MetricMeasureSpace, center: int, upper: float = math.inf,
                   inclusive: bool = False) -> np.ndarray:
    sd, _ = space.sorted_rows([center])
    return radius_grid(sd[0], space.effective_radius(upper), inclusive)


def _masses(sd: np.ndarray, cm: np.ndarray, r) -> np.ndarray:
    """Mass of the open ball of radius r given sorted distances and cumulative mass."""
    k = np.searchsorted(sd, r, side="left")
    return cm[k - 1]


def _closed_masses(sd: np.ndarray, cm: np.ndarray, r) -> np.ndarray:
    k = np.searchsorted(sd, r, side="right")
    return cm[k - 1]


def ball_measures(space: MetricMeasureSpace, centers, radii) -> np.ndarray:
    """mu(B(x, r)) for each center; ``radii`` is (k,) paired or (k, T) per center."""
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    radii = np.asarray(radii, dtype=float)
    if radii.ndim == 0:
        radii = np.full(centers.shape, float(radii))
    out = np.empty(radii.shape)
    for start in range(0, len(centers), 256):
        blk = centers[start:start + 256]
        sd, order = space.sorted_rows(blk)
        cm = np.cumsum(space.measure[order], axis=1)
        for j in range(len(blk)):
            out[start + j] = _masses(sd[j], cm[j], radii[start + j])
    return out


# -- doubling-type constants -----------------------------------------------
def doubling_profile(space: MetricMeasureSpace, R: float, r_min: float = 0.0) -> DoublingProfile:
    """Doubling and reverse doubling constants at scale R.

    A = max mu(B(x,2r))/mu(B(x,r)) and a = max mu(B(x,r))/mu(B(x,2r)) over all
    centers and critical radii r_min <= r <= R.  Breakpoints at d and d/2
    make both ratios piecewise constant between consecutive radii.
    """
    if not R > 0:
        raise InputError("R must be positive")
    R = space.effective_radius(R)
    A, a = 1.0, 0.0
    wA, wa = (0, R), (0, R)
    for idx, sd, order in space.iter_sorted():
        cm = np.cumsum(space.measure[order], axis=1)
        for j, x in enumerate(idx):
            radii = radius_grid(np.concatenate((sd[j], 0.5 * sd[j])), R, inclusive=True)
            radii = radii[radii >= r_min]
            if radii.size == 0:
                continue
            m1 = _masses(sd[j], cm[j], radii)
            m2 = _masses(sd[j], cm[j], 2.0 * radii)
            up = m2 / m1
            dn = m1 / m2
            k = int(np.argmax(up))
            if up[k] > A:
                A, wA = float(up[k]), (int(x), float(radii[k]))
            k = int(np.argmax(dn))
            if dn[k] > a:
                a, wa = float(dn[k]), (int(x), float(radii[k]))
    if a == 0.0:
        a = 1.0
    return DoublingProfile(A=A, eta=math.log2(A), a=a, nu=0.0 - math.log2(a), R=float(R),
                           D=8.0 * math.log(A), witnesses=[wA, wa])


def annuli_constant(space: MetricMeasureSpace, R: float) -> float:
    """max over x and r > 0 of mu(B(x, r + R/4)) / mu(B(x, r))."""
    if not R > 0:
        raise InputError("R must be positive")
    shift = 0.25 * R
    cap = space.radius_cap()
    C = 1.0
    for idx, sd, order in space.iter_sorted():
        cm = np.cumsum(space.measure[order], axis=1)
        for j in range(len(idx)):
            radii = radius_grid(np.concatenate((sd[j], sd[j] - shift)), cap, inclusive=False)
            m1 = _masses(sd[j], cm[j], radii)
            m2 = _masses(sd[j], cm[j], radii + shift)
            C = max(C, float((m2 / m1).max()))
    return C


def exp_doubling_constant(space: MetricMeasureSpace, R: float) -> ExpDoubling:
    """Smallest D with mu(B(x,r)) <= exp(D r/R) mu(B(x,R)) for every x and r.

    For r just above a distance d >= R the ball is the closed ball of radius d
    and r/R decreases inside the piece, so the sup is the left limit
    (R/d) log(mu(closed ball d)/mu(B(x,R))).
    """
    if not R > 0:
        raise InputError("R must be positive")
    D, wit = 0.0, None
    for idx, sd, order in space.iter_sorted():
        cm = np.cumsum(space.measure[order], axis=1)
        for j, x in enumerate(idx):
            ds = np.unique(sd[j][sd[j] >= R])
            if ds.size == 0:
                continue
            base = _masses(sd[j], cm[j], R)
            val = (R / ds) * np.log(_closed_masses(sd[j], cm[j], ds) / base)
            k = int(np.argmax(val))
            if val[k] > D:
                D, wit = float(val[k]), (int(x), float(ds[k]))
    prof = doubling_profile(space, R)
    return ExpDoubling(D_emp=D, D_apriori=prof.D, witness=wit)


def separated_cover(space: MetricMeasureSpace, ball: Ball, delta: float) -> list[int]:
    """Greedy maximal delta-separated family inside the ball, ascending id."""
    if not delta > 0 or delta > ball.radius:
        raise InputError("need 0 < delta <= radius")
    members = np.sort(np.asarray(ball.members))
    blocked = np.zeros(len(members), dtype=bool)
    chosen = []
    for i, y in enumerate(members):
        if blocked[i]:
            continue
        chosen.append(int(y))
        blocked |= space.rows([y])[0, members] < delta
    return chosen


def cover_properties(space: MetricMeasureSpace, ball: Ball, delta: float, centers: Sequence[int],
                     A: float | None = None) -> dict:
    """Exact checks of a separated cover plus the cardinality bound C exp(c r/delta).

    The constants follow the covering-cardinality argument: C = A^11 (annuli
    constant A^2, volume comparison across centers A^8, one doubling step for
    half balls) and c = 2D = 16 log A.
    """
    c_idx = np.asarray(centers, dtype=np.int64)
    d = space.rows(c_idx)
    sub = d[:, c_idx]
    off = ~np.eye(len(c_idx), dtype=bool)
    separated = bool(np.all(sub[off] >= delta))
    members = np.asarray(ball.members)
    covers = bool(np.all((d[:, members] < delta).any(axis=0)))
    half = d[:, :] < 0.5 * delta
    disjoint = bool(np.all(half.sum(axis=0) <= 1))
    inside = bool(np.isin(c_idx, members).all())
    if A is None:
        A = doubling_profile(space, ball.radius).A
    C = A ** 11
    c = 16.0 * math.log(A)
    bound = C * math.exp(c * ball.radius / delta) if c * ball.radius / delta < 700 else math.inf
    return {"separated": separated, "covers": covers, "disjoint_halves": disjoint, "inside": inside,
            "cardinality": len(c_idx), "cardinality_bound": bound,
            "cardinality_ok": len(c_idx) <= bound}


def vitali_subcover(balls: Sequence[Ball], c: float = 3.5) -> list[int]:
    """Greedy disjoint subfamily by decreasing radius; ties by ascending index."""
    if not c > 3:
        raise InputError("Vitali dilation must exceed 3")
    order = sorted(range(len(balls)), key=lambda i: (-balls[i].radius, i))
    taken: set = set()
    chosen = []
    for i in order:
        mem = set(int(v) for v in balls[i].members)
        if taken.isdisjoint(mem):
            chosen.append(i)
            taken |= mem
    return sorted(chosen)


def check_vitali(space: MetricMeasureSpace, balls: Sequence[Ball], chosen: Sequence[int], c: float) -> dict:
    sel = [balls[i] for i in chosen]
    seen: set = set()
    disjoint = True
    for b in sel:
        mem = set(int(v) for v in b.members)
        if not seen.isdisjoint(mem):
            disjoint = False
        seen |= mem
    union = np.zeros(space.n, dtype=bool)
    for b in sel:
        union[b.dilate(space, c).members] = True
    covered = all(bool(union[b.members].all()) for b in balls)
    return {"disjoint": disjoint, "covered": covered}


def line_ball_count(r: float, h: float) -> int:
    """Number of lattice points i*h with |i h| < r."""
    k = math.ceil(r / h) - 1
    return 2 * max(k, 0) + 1 if r > 0 else 0


def iter_balls(space: MetricMeasureSpace, upper: float, inclusive: bool = False) -> Iterable[Ball]:
    """All distinct (center, critical radius) balls below ``upper``."""
    up = space.effective_radius(upper)
    for idx, sd, order in space.iter_sorted():
        for j, x in enumerate(idx):
            for r in radius_grid(sd[j], up, inclusive):
                k = np.searchsorted(sd[j], r, side="left")
                yield Ball(int(x), float(r), np.sort(order[j, :k]))
