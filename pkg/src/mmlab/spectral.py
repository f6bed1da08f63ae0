"""Discrete Dirichlet Laplacians and the spectral verification harnesses.

The operator on a weighted graph is L f(x) = (1/mu_x) sum_y w_xy (f(x) - f(y)),
restricted to a domain D with f = 0 outside D.  In matrix form it is the
pencil (K_D, M_D) where K is the stiffness matrix sum_e w_e (e_u - e_v)(e_u - e_v)^T
and M = diag(mu); K_D is the principal submatrix on D.  Kernels of functions
of L are taken with respect to mu: (g(L) f)(x) = sum_y k(x,y) f(y) mu_y with
k = Phi g(Lambda) Phi^T and Phi the mu-orthonormal eigenvectors.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.csgraph import connected_components

from . import linalg
from .errors import InputError, NumericalError
from .kernels import KernelMatrix, bessel_envelope
from .maximal import check_potential, morrey_norm
from .report import VerificationReport
from .space import (MetricMeasureSpace, ball_measures, base_conductances, doubling_profile,
                    product_space, radius_grid)

DENSE_MAX = linalg.DENSE_MAX
EXACT_MAX = 500          # generalized/SVD problems solved densely up to this size
EIG_RTOL = 1e-10
ROUTE_RTOL = 1e-8        # agreement required between the two Fefferman-Phong routes


# -- operator ---------------------------------------------------------------------
def stiffness(space: MetricMeasureSpace, conductances=None) -> csr_matrix:
    """Full n x n stiffness matrix from the space edges (or an explicit (edges, w) pair)."""
    if conductances is None:
        if space.edges is None:
            raise InputError("space has no edge set; pass conductances=(edges, weights)")
        e = np.asarray(space.edges)
        w = base_conductances(space)
    elif isinstance(conductances, tuple) and len(conductances) == 2:
        e = np.asarray(conductances[0], dtype=np.int64).reshape(-1, 2)
        w = np.asarray(conductances[1], dtype=float).ravel()
    else:
        if space.edges is None:
            raise InputError("conductances given without an edge set")
        e = np.asarray(space.edges)
        w = np.asarray(conductances, dtype=float).ravel()
    if w.size != len(e):
        raise InputError("one conductance per edge required")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InputError("conductances must be strictly positive")
    if e.size and (e.min() < 0 or e.max() >= space.n or np.any(e[:, 0] == e[:, 1])):
        raise InputError("bad edge list")
    n = space.n
    u, v = e[:, 0], e[:, 1]
    rows = np.concatenate([u, v, u, v])
    cols = np.concatenate([u, v, v, u])
    vals = np.concatenate([w, w, -w, -w])
    return coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _domain_mask(space: MetricMeasureSpace, domain, mode: str) -> np.ndarray:
    if domain is None:
        domain = "interior" if mode == "dirichlet" else "all"
    if isinstance(domain, str):
        if domain == "all":
            mask = np.ones(space.n, dtype=bool)
        elif domain == "interior":
            if space.boundary is None:
                raise InputError("space has no boundary; give the domain explicitly")
            mask = ~np.asarray(space.boundary)
        else:
            raise InputError(f"unknown domain {domain!r}")
    else:
        d = np.asarray(domain)
        if d.dtype == bool:
            if d.shape != (space.n,):
                raise InputError("domain mask has the wrong length")
            mask = d.copy()
        else:
            d = d.astype(np.int64).ravel()
            if d.size and (d.min() < 0 or d.max() >= space.n):
                raise InputError("domain point out of range")
            mask = np.zeros(space.n, dtype=bool)
            mask[d] = True
    if not mask.any():
        raise InputError("domain is empty")
    return mask


class DirichletOperator:
    """L restricted to a domain, with Dirichlet condition outside it.

    ``mode`` is "free" (default domain: all points) or "dirichlet" (default
    domain: points off the generator boundary).  An explicit ``domain``
    (ids, boolean mask, "all" or "interior") overrides the default.
    """

    def __init__(self, space: MetricMeasureSpace, conductances=None, domain=None, mode: str = "free"):
        if mode not in ("free", "dirichlet"):
            raise InputError("mode must be 'free' or 'dirichlet'")
        self.space = space
        self.mode = mode
        self.mask = _domain_mask(space, domain, mode)
        self.ids = np.flatnonzero(self.mask)
        self.K_full = stiffness(space, conductances)
        self.K = self.K_full[self.ids][:, self.ids].tocsr()
        self.mu = np.asarray(space.measure)[self.ids]
        self.n = len(self.ids)
        self._custom_w = conductances is not None
        self._spec = None
        self._factors = None
        self._factors_done = False

    # positions of space points inside the domain vector (-1 outside)
    @property
    def local(self) -> np.ndarray:
        loc = np.full(self.space.n, -1, dtype=np.int64)
        loc[self.ids] = np.arange(self.n)
        return loc

    @property
    def positive_definite(self) -> bool:
        """True when some domain point has an edge leaving the domain (then K_D > 0 on each component)."""
        return bool(self.n < self.space.n)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return (self.K @ f) / self.mu

    def restrict(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape == (self.space.n,):
            return f[self.ids]
        if f.shape == (self.n,):
            return f
        raise InputError(f"vector must have {self.space.n} (space) or {self.n} (domain) entries")

    def energy(self, psi) -> float:
        """Q(psi) for psi given on the space (values outside the domain are ignored)."""
        psi = self.restrict(psi)
        return float(psi @ (self.K @ psi))

    def rayleigh(self, psi) -> float:
        psi = self.restrict(psi)
        return self.energy(psi) / float((psi * psi * self.mu).sum())

    def dense(self) -> np.ndarray:
        return self.K.toarray()

    # -- Kronecker structure ----------------------------------------------------
    def kron_factors(self):
        """Factor operators when L_D is a Kronecker sum of factor operators, else None."""
        if self._factors_done:
            return self._factors
        self._factors_done = True
        fac = self.space.factors
        if fac is None or self._custom_w:
            return None
        shape = tuple(f.n for f in fac)
        if int(np.prod(shape)) != self.space.n:
            return None
        m = self.mask.reshape(shape)
        parts = []
        for ax in range(len(shape)):
            other = tuple(a for a in range(len(shape)) if a != ax)
            parts.append(m.any(axis=other) if other else m)
        outer = parts[0]
        for p in parts[1:]:
            outer = np.multiply.outer(outer, p)
        if not np.array_equal(outer, m):
            return None
        ops = []
        for f, p in zip(fac, parts):
            sub = DirichletOperator(f, domain=p)
            ops.extend(sub.kron_factors() or [sub])
        # a random action must agree with the assembled operator
        rng = np.random.default_rng(7)
        x = rng.standard_normal(self.n)
        lhs = self.apply(x)
        rhs = _kron_sum_apply(ops, x)
        if not np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(lhs).max()):
            return None
        self._factors = ops
        return ops

    def spectral(self) -> "SpectralData":
        if self._spec is None:
            ops = self.kron_factors()
            if ops is not None and len(ops) > 1:
                self._spec = KronSpectral([op.spectral() for op in ops])
            else:
                self._spec = DenseSpectral.from_operator(self)
        return self._spec


def dirichlet_operator(space: MetricMeasureSpace, conductances=None, domain=None,
                       mode: str = "free") -> DirichletOperator:
    return DirichletOperator(space, conductances, domain, mode)


def _kron_sum_apply(ops, x):
    shape = tuple(op.n for op in ops)
    T = x.reshape(shape)
    out = np.zeros_like(T)
    for ax, op in enumerate(ops):
        Lf = op.K.toarray() / op.mu[:, None]
        out += np.moveaxis(np.tensordot(Lf, T, axes=([1], [ax])), 0, ax)
    return out.ravel()


# -- spectral data -----------------------------------------------------------------
class SpectralData:
    """Eigenvalues lam (any fixed order) and mu-orthonormal eigenvectors Phi."""
    n: int
    lam: np.ndarray
    mu: np.ndarray

    def phi_rows(self, C: np.ndarray) -> np.ndarray:
        """Rows of C are coefficient vectors; returns rows Phi c."""
        raise NotImplementedError

    def phi_t_rows(self, X: np.ndarray) -> np.ndarray:
        """Rows of X are vectors; returns rows Phi^T x."""
        raise NotImplementedError

    def kernel_columns(self, fn: Callable, cols) -> np.ndarray:
        """k(., y) for y in cols, returned as rows (len(cols), n); k = Phi fn(lam) Phi^T."""
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        E = np.zeros((len(cols), self.n))
        E[np.arange(len(cols)), cols] = 1.0
        coef = self.phi_t_rows(E) * fn(self.lam)[None, :]
        return self.phi_rows(coef)

    def apply(self, fn: Callable, f: np.ndarray) -> np.ndarray:
        """fn(L) f in the domain numbering."""
        c = self.phi_t_rows((f * self.mu)[None, :])[0] * fn(self.lam)
        return self.phi_rows(c[None, :])[0]

    def matrix(self, fn: Callable) -> np.ndarray:
        if self.n > DENSE_MAX * 2:
            raise InputError(f"dense kernel matrices are limited to n <= {2 * DENSE_MAX}")
        return self.kernel_columns(fn, np.arange(self.n))


class DenseSpectral(SpectralData):
    def __init__(self, lam: np.ndarray, Phi: np.ndarray, mu: np.ndarray):
        self.lam = lam
        self.Phi = Phi
        self.mu = mu
        self.n = len(mu)

    @classmethod
    def from_operator(cls, op: DirichletOperator) -> "DenseSpectral":
        if op.n > DENSE_MAX:
            raise InputError(f"full eigendecompositions are limited to n <= {DENSE_MAX} "
                             "(or a Kronecker-structured domain)")
        s = 1.0 / np.sqrt(op.mu)
        S = s[:, None] * op.dense() * s[None, :]
        try:
            lam, U = np.linalg.eigh(0.5 * (S + S.T))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigendecomposition failed: {exc}") from None
        lam = np.maximum(lam, 0.0) if not op.positive_definite else lam
        return cls(lam, s[:, None] * U, op.mu)

    def phi_rows(self, C):
        return C @ self.Phi.T

    def phi_t_rows(self, X):
        return X @ self.Phi


class KronSpectral(SpectralData):
    """Tensor product of factor spectral data (eigenvalues add, eigenvectors multiply)."""

    def __init__(self, parts: Sequence[DenseSpectral]):
        flat = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, KronSpectral) else [p])
        self.parts = flat
        self.shape = tuple(p.n for p in flat)
        self.n = int(np.prod(self.shape))
        lam = flat[0].lam
        mu = flat[0].mu
        for p in flat[1:]:
            lam = np.add.outer(lam, p.lam).ravel()
            mu = np.multiply.outer(mu, p.mu).ravel()
        self.lam = lam
        self.mu = mu

    def _modes(self, mats, X):
        k = X.shape[0]
        T = X.reshape((k,) + self.shape)
        for ax, m in enumerate(mats):
            T = np.moveaxis(np.tensordot(m, T, axes=([1], [ax + 1])), 0, ax + 1)
        return T.reshape(k, -1)

    def phi_rows(self, C):
        return self._modes([p.Phi for p in self.parts], C)

    def phi_t_rows(self, X):
        return self._modes([p.Phi.T for p in self.parts], X)

    def kernel_columns(self, fn, cols):
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        multi = np.unravel_index(cols, self.shape)
        coef = None
        for p, c in zip(self.parts, multi):
            rows = p.Phi[c]  # (k, n_i)
            coef = rows if coef is None else (coef[:, :, None] * rows[:, None, :]).reshape(len(cols), -1)
        coef = coef * fn(self.lam)[None, :]
        return self.phi_rows(coef)

    def separable_block(self, fns: Sequence[Callable], rows) -> np.ndarray:
        """Rows of the product kernel prod_i k_i(x_i, y_i) with k_i = Phi_i fn_i Phi_i^T."""
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        multi = np.unravel_index(rows, self.shape)
        out = None
        for p, fn, r in zip(self.parts, fns, multi):
            Ki = (p.Phi[r] * fn(p.lam)[None, :]) @ p.Phi.T
            out = Ki if out is None else (out[:, :, None] * Ki[:, None, :]).reshape(len(rows), -1)
        return out


# -- eigenvalues --------------------------------------------------------------------
def lambda1(op: DirichletOperator, U=None) -> float:
    """Smallest eigenvalue of L with f = 0 outside U (U defaults to the operator domain)."""
    return _lambda1_vec(op, U)[0]


def _lambda1_vec(op: DirichletOperator, U=None):
    if U is None:
        ids = op.ids
    else:
        ids = np.unique(np.atleast_1d(np.asarray(U, dtype=np.int64)))
        if ids.size == 0:
            raise InputError("U is empty")
        if ids.min() < 0 or ids.max() >= op.space.n or not op.mask[ids].all():
            raise InputError("U must lie inside the operator domain")
    mu = np.asarray(op.space.measure)[ids]
    if ids.size == op.space.n:
        # no edge leaves U: constants are in the kernel
        return 0.0, np.ones(ids.size) / math.sqrt(mu.sum()), ids
    KU = op.K_full[ids][:, ids]
    if ids.size == 1:
        return float(KU.toarray()[0, 0] / mu[0]), np.array([1.0 / math.sqrt(mu[0])]), ids
    val, vec = linalg.smallest_eigenvalue(KU, mu, shift=0.0)
    return val, vec, ids


def schrodinger_lambda1(op: DirichletOperator, V) -> float:
    """Smallest eigenvalue of L - V in the mu-inner product."""
    V = op.restrict(check_potential(op.space, V) if np.shape(V) == (op.space.n,) else V)
    A = op.K - diags(V * op.mu)
    shift = -float(V.max()) if V.size else 0.0
    val, _ = linalg.smallest_eigenvalue(A.tocsr(), op.mu, shift=shift - 1.0)
    return val


# -- Faber-Krahn fitting ------------------------------------------------------------
def _neighbors(space: MetricMeasureSpace):
    e = np.asarray(space.edges)
    A = coo_matrix((np.ones(2 * len(e)), (np.concatenate([e[:, 0], e[:, 1]]),
                                          np.concatenate([e[:, 1], e[:, 0]]))),
                   shape=(space.n, space.n)).tocsr()
    return A


def _random_connected(adj, members: np.ndarray, size: int, rng) -> np.ndarray:
    inside = np.zeros(adj.shape[0], dtype=bool)
    inside[members] = True
    start = int(rng.choice(members))
    chosen = [start]
    taken = {start}
    frontier = set(int(v) for v in adj.indices[adj.indptr[start]:adj.indptr[start + 1]] if inside[v])
    while len(chosen) < size and frontier:
        v = int(rng.choice(sorted(frontier)))
        frontier.discard(v)
        chosen.append(v)
        taken.add(v)
        for u in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
            u = int(u)
            if inside[u] and u not in taken:
                frontier.add(u)
    return np.sort(np.asarray(chosen, dtype=np.int64))


def _annular_components(adj, d: np.ndarray, mask: np.ndarray, r: float, rr: float):
    """Connected pieces of B(x, r) minus B(x, rr)."""
    rest = np.flatnonzero((d < r) & (d >= rr) & mask)
    if rest.size == 0:
        return []
    nc, lab = connected_components(adj[rest][:, rest], directed=False)
    return [rest[lab == c] for c in range(nc)]


def faber_krahn_fit(space: MetricMeasureSpace, op: DirichletOperator, R: float, eta: float | None = None,
                    samples: int = 200, seed: int = 0, keep: int = 5, max_sub: int = 24):
    """Smallest lambda1(U) r^2 (mu(U)/mu(B))^(2/eta) over sampled balls B(x, r), r <= R, and U in B.

    Sample i uses the generator seeded by (seed, i).  Its center is uniform on
    the domain or, with probability 1/2, uniform over the distinct values of
    mu(B(x, R)) so that rare ball shapes are represented; the radius is a
    critical radius <= R.  Candidates U: B itself, a random connected subset
    grown over the edge graph, the concentric sub-balls and the connected
    pieces of B minus each concentric sub-ball (up to ``max_sub`` sub-radii).
    """
    if samples < 1:
        raise InputError("samples must be >= 1")
    if not R > 0:
        raise InputError("R must be positive")
    if eta is None:
        eta = doubling_profile(space, R).eta
    if not eta > 0:
        raise InputError("eta must be positive")
    adj = _neighbors(space)
    R_eff = space.effective_radius(R)
    doms = op.ids
    vols = ball_measures(space, doms, np.full(len(doms), R_eff))
    classes = [doms[vols == v] for v in np.unique(vols)]
    mu = np.asarray(space.measure)
    rows = []
    for i in range(samples):
        rng = np.random.default_rng([seed, i])
        if rng.random() < 0.5:
            x = int(rng.choice(doms))
        else:
            x = int(rng.choice(classes[int(rng.integers(len(classes)))]))
        d = space.rows([x])[0]
        radii = radius_grid(d, R_eff, inclusive=True)
        r = float(rng.choice(radii))
        B = np.flatnonzero((d < r) & op.mask)
        muB = float(mu[B].sum())
        cands = [("ball", B)]
        size = int(rng.integers(1, B.size + 1))
        cands.append(("random", _random_connected(adj, B, size, rng)))
        sub = radii[radii < r]
        if sub.size > max_sub:
            sub = sub[np.unique(np.linspace(0, sub.size - 1, max_sub).round().astype(int))]
        for rr in sub:
            inner = np.flatnonzero((d < rr) & op.mask)
            if inner.size:
                cands.append((f"subball:{rr:.6g}", inner))
            for U in _annular_components(adj, d, op.mask, r, rr):
                cands.append((f"annulus:{rr:.6g}", U))
        for kind, U in cands:
            lam = lambda1(op, U)
            val = lam * r * r * (float(mu[U].sum()) / muB) ** (2.0 / eta)
            rows.append((val, {"center": x, "radius": r, "kind": kind, "size": int(U.size),
                               "lambda1": lam, "value": val}))
    rows.sort(key=lambda t: t[0])
    b = rows[0][0]
    rep = VerificationReport("faber-krahn-fit", {"b": b, "eta": eta, "R": R, "samples": samples,
                                                 "seed": seed, "candidates": len(rows)})
    rep.witnesses = [w for _, w in rows[:keep]]
    rep.add("b_positive", b > 0, rows[0][1])
    return b, rep


# -- heat kernel -----------------------------------------------------------------------
class HeatKernel:
    def __init__(self, op: DirichletOperator, times: Sequence[float]):
        times = [float(t) for t in times]
        if not times or any(not t > 0 for t in times):
            raise InputError("times must be positive")
        self.op = op
        self.times = times
        self.spec = op.spectral()

    @property
    def n(self) -> int:
        return self.spec.n

    def _fn(self, t):
        return lambda lam: np.exp(-t * lam)

    def block(self, t: float, rows) -> np.ndarray:
        """Rows p_t(x, .) for x in ``rows`` (domain numbering)."""
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        if isinstance(self.spec, KronSpectral):
            return self.spec.separable_block([self._fn(t)] * len(self.spec.parts), rows)
        return self.spec.kernel_columns(self._fn(t), rows)

    def matrix(self, t: float) -> np.ndarray:
        return self.block(t, np.arange(self.n))

    def matrices(self) -> dict:
        return {t: self.matrix(t) for t in self.times}

    def export(self, t: float, path: str) -> None:
        """Binary file: n as little-endian uint64, then p_t row-major as little-endian float64."""
        P = self.matrix(t)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", P.shape[0]))
            fh.write(np.ascontiguousarray(P, dtype="<f8").tobytes())


def heat_kernel(op: DirichletOperator, times: Sequence[float]) -> HeatKernel:
    return HeatKernel(op, times)


def read_heat_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise InputError("heat kernel file is truncated")
    return data.reshape(n, n)


def _volume_table(space: MetricMeasureSpace, centers: np.ndarray, radii: Sequence[float]) -> np.ndarray:
    """mu(B(x, r)) (open balls) for every center and every radius, shape (len(centers), len(radii))."""
    r = np.asarray(radii, dtype=float)
    return ball_measures(space, centers, np.tile(r, (len(centers), 1)))


def gaussian_bound_fit(space: MetricMeasureSpace, hk: HeatKernel, R: float, c: float,
                       lam: float | None = None, gamma: float | None = None, max_speed: float = 1.0,
                       block: int = 512) -> dict:
    """Fitted constants of the two-regime Gaussian upper bound.

    C_small = max p_t(x,y) sqrt(V(x,sqrt t) V(y,sqrt t)) exp(d^2/(c t)) over t <= R^2,
    C_large the same with radius R over t > R^2.  Pairs are restricted to
    d(x,y) <= max(sqrt t, max_speed t / h) where h is the smallest edge length:
    beyond that the graph kernel decays like a Poisson tail, not a Gaussian.
    With ``lam`` the single-volume variant is fitted as well.
    """
    if not c > 4:
        raise InputError("c must exceed 4")
    if not R > 0:
        raise InputError("R must be positive")
    times = np.asarray(hk.times, dtype=float)
    small = times[times <= R * R]
    large = times[times > R * R]
    if small.size == 0 or large.size == 0:
        raise InputError("time grid must contain times on both sides of R^2")
    if lam is not None:
        if not lam > 0:
            raise InputError("lambda must be positive")
        gamma = 0.5 if gamma is None else float(gamma)
        if not 0 < gamma < 1:
            raise InputError("gamma must lie in (0, 1)")
    op = hk.op
    ids = op.ids
    hmin = float(np.min(space.lengths)) if space.lengths is not None else max(space.min_distance, 1e-300)
    radii = sorted(set([math.sqrt(t) for t in times] + [float(R)] + ([1.0 / lam] if lam else [])))
    rpos = {r: i for i, r in enumerate(radii)}
    vol = _volume_table(space, ids, radii)
    out = {"C_small": 0.0, "C_large": 0.0, "witness_small": None, "witness_large": None}
    if lam is not None:
        out.update({"C_lambda": 0.0, "witness_lambda": None, "lambda": lam, "gamma": gamma})
    per_time = []
    for t in times:
        regime_small = t <= R * R
        rad = math.sqrt(t) if regime_small else float(R)
        vt = vol[:, rpos[rad]]
        limit = max(math.sqrt(t), max_speed * t / hmin)
        best_t = 0.0
        for start in range(0, len(ids), block):
            rows = np.arange(start, min(start + block, len(ids)))
            P = hk.block(t, rows)
            d = space.rows(ids[rows])[:, ids]
            ok = d <= limit + 1e-12
            g = np.exp(np.where(ok, d * d / (c * t), 0.0))
            val = np.where(ok, P * np.sqrt(vt[rows][:, None] * vt[None, :]) * g, -np.inf)
            k = np.unravel_index(int(np.argmax(val)), val.shape)
            if val[k] > best_t:
                best_t = float(val[k])
                wit = {"t": float(t), "x": int(ids[rows[k[0]]]), "y": int(ids[k[1]]), "d": float(d[k]),
                       "p": float(P[k])}
            if lam is not None:
                s = min(math.sqrt(t), 1.0 / lam)
                vx = vol[rows, rpos[s]]
                damp = math.exp(-(1.0 - gamma) * lam * lam * t) if math.sqrt(t) > 1.0 / lam else 1.0
                vl = np.where(ok, P * vx[:, None] * g * damp, -np.inf)
                kl = np.unravel_index(int(np.argmax(vl)), vl.shape)
                if vl[kl] > out["C_lambda"]:
                    out["C_lambda"] = float(vl[kl])
                    out["witness_lambda"] = {"t": float(t), "x": int(ids[rows[kl[0]]]), "y": int(ids[kl[1]]),
                                             "d": float(d[kl])}
        per_time.append({"t": float(t), "regime": "small" if regime_small else "large", "C": best_t})
        key = "small" if regime_small else "large"
        if best_t > out["C_" + key]:
            out["C_" + key] = best_t
            out["witness_" + key] = wit
    out["per_time"] = per_time
    out.update({"R": R, "c": c, "max_speed": max_speed})
    return out


# -- Riesz and Bessel kernels ---------------------------------------------------------
@dataclass
class SpectralKernel:
    """Kernel of a function of L on the operator domain (domain numbering, diagonal kept)."""
    values: np.ndarray
    ids: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def to_kernel(self, space: MetricMeasureSpace) -> KernelMatrix:
        """Extend by zero to the whole space as a KernelMatrix (diagonal dropped)."""
        full = np.zeros((space.n, space.n))
        full[np.ix_(self.ids, self.ids)] = self.values
        return KernelMatrix(full, self.kind, dict(self.params))


def _riesz_fn(s):
    return lambda lam: lam ** (-s / 2.0)


def _bessel_fn(s, lam_):
    return lambda lam: (lam + lam_ * lam_) ** (-s / 2.0)


def _check_positive_spectrum(op: DirichletOperator) -> SpectralData:
    spec = op.spectral()
    lmin = float(np.min(spec.lam))
    if lmin <= EIG_RTOL * max(float(np.max(spec.lam)), 1.0):
        raise InputError("the spectrum has a zero eigenvalue; use a Dirichlet domain")
    return spec


def riesz_kernel(op: DirichletOperator, s: float) -> SpectralKernel:
    """i_s = sum_k lam_k^(-s/2) phi_k phi_k^T."""
    if not s > 0:
        raise InputError("s must be positive")
    spec = _check_positive_spectrum(op)
    return SpectralKernel(spec.matrix(_riesz_fn(s)), op.ids, "riesz", {"s": s})


def bessel_kernel(op: DirichletOperator, s: float, lam: float) -> SpectralKernel:
    """g_{s,lam} = sum_k (lam_k + lam^2)^(-s/2) phi_k phi_k^T."""
    if not s > 0:
        raise InputError("s must be positive")
    if lam < 0:
        raise InputError("lambda must be nonnegative")
    spec = _check_positive_spectrum(op) if lam == 0 else op.spectral()
    return SpectralKernel(spec.matrix(_bessel_fn(s, lam)), op.ids, "bessel", {"s": s, "lambda": lam})


def _open_volumes(space: MetricMeasureSpace, rows_idx: np.ndarray, cols_idx: np.ndarray):
    """Distances d(x, y) and V(x, d(x, y)) (open ball) for x in rows, y in cols."""
    sd, order = space.sorted_rows(rows_idx)
    cm = np.cumsum(np.asarray(space.measure)[order], axis=1)
    d = space.rows(rows_idx)[:, cols_idx]
    W = np.empty_like(d)
    for j in range(len(rows_idx)):
        k = np.searchsorted(sd[j], d[j], side="left")
        W[j] = np.where(k > 0, cm[j, np.maximum(k - 1, 0)], np.inf)
    return d, W


def riesz_bound_fit(space: MetricMeasureSpace, op: DirichletOperator, s: float = 1.0, block: int = 256) -> dict:
    """C = max over distinct domain pairs of i_s(x,y) V(x, d(x,y)) / d(x,y)^s."""
    spec = _check_positive_spectrum(op)
    fn = _riesz_fn(s)
    ids = op.ids
    best, wit = 0.0, None
    for start in range(0, len(ids), block):
        rows = np.arange(start, min(start + block, len(ids)))
        Kb = spec.kernel_columns(fn, rows)  # symmetric kernel: columns are rows
        d, W = _open_volumes(space, ids[rows], ids)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, Kb * W / d ** s, -np.inf)
        k = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        if ratio[k] > best:
            best = float(ratio[k])
            wit = {"x": int(ids[rows[k[0]]]), "y": int(ids[k[1]]), "d": float(d[k]), "kernel": float(Kb[k])}
    return {"C": best, "s": s, "witness": wit, "domain_size": int(len(ids))}


def bessel_separation_check(space: MetricMeasureSpace, g: SpectralKernel, s: float, lam: float,
                            gammas: Sequence[float], threshold: float | None = None) -> VerificationReport:
    """Fit C(gamma) = max g(x,y) / (envelope(x,y) e^(-gamma lam d)) over distinct pairs.

    C is nondecreasing in gamma; the report gives the largest gamma of the grid
    whose C stays below ``threshold`` (default: twice C(0)).
    """
    if not lam > 0:
        raise InputError("lambda must be positive")
    ids = g.ids
    d = space.rows(ids)[:, ids]
    env = bessel_envelope(space, s, lam, ids, d)
    off = ~np.eye(len(ids), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(off, g.values / env, -np.inf)
    gammas = sorted(float(x) for x in gammas)
    if not gammas or gammas[0] < 0:
        raise InputError("gamma grid must be nonempty and nonnegative")
    C0 = float(base.max())
    thr = 2.0 * C0 if threshold is None else float(threshold)
    fits = []
    near = np.where(off & (lam * d <= 1.0), base, -np.inf)
    for gm in gammas:
        vals = base * np.exp(gm * lam * d)
        k = np.unravel_index(int(np.argmax(vals)), vals.shape)
        fits.append({"gamma": gm, "C": float(vals[k]), "x": int(ids[k[0]]), "y": int(ids[k[1]])})
    ok = [f["gamma"] for f in fits if f["C"] <= thr]
    rep = VerificationReport("bessel-separation", {"s": s, "lambda": lam, "threshold": thr, "C0": C0,
                                                   "near_C0": float(near.max()) if np.isfinite(near.max()) else 0.0,
                                                   "gamma_max": max(ok) if ok else None, "fits": fits})
    mono = all(fits[i]["C"] <= fits[i + 1]["C"] for i in range(len(fits) - 1))
    rep.add("monotone_in_gamma", mono, None if mono else fits)
    rep.add("finite", bool(np.isfinite(C0)), None)
    return rep


# -- Fefferman-Phong constant ---------------------------------------------------------
def _fp_theta_primal(op: DirichletOperator, Vd: np.ndarray, c: float, seed: int = 0):
    """Largest theta with <V psi, psi> = theta <(K + c M) psi, psi>."""
    mu = op.mu
    B = op.K + diags(c * mu)
    w = Vd * mu
    if op.n <= EXACT_MAX:
        theta, vec = linalg.dense_generalized_largest(np.diag(w), B.toarray())
        return theta, vec
    solve = linalg.factorized(B)
    sw = np.sqrt(w)
    res = linalg.lanczos_largest(lambda x: sw * solve(sw * x), op.n, tol=1e-13, seed=seed)
    psi = solve(sw * res.vector)
    return res.value, psi


def _fp_theta_adjoint(op: DirichletOperator, Vd: np.ndarray, c: float, seed: int = 0):
    """Square of the largest singular value of diag(sqrt(mu V)) Phi diag((lam + c)^(-1/2))."""
    spec = op.spectral()
    sw = np.sqrt(Vd * op.mu)
    scale = (spec.lam + c) ** -0.5
    if op.n <= EXACT_MAX and isinstance(spec, DenseSpectral):
        Bm = sw[:, None] * spec.Phi * scale[None, :]
        return float(sla.svdvals(Bm)[0] ** 2)

    def gram(x):
        # B^T B x, with B = diag(sw) Phi diag(scale)
        y = spec.phi_rows((scale * x)[None, :])[0] * sw
        return scale * spec.phi_t_rows((sw * y)[None, :])[0]
    return linalg.lanczos_largest(gram, spec.n, tol=1e-13, seed=seed + 1).value


def fp_theta(op: DirichletOperator, V, R: float = math.inf, seed: int = 0, check: bool = True):
    """theta_max for <V psi, psi> <= theta (Q(psi) + R^-2 ||psi||^2), both routes when ``check``."""
    Vd = op.restrict(V)
    if np.any(Vd < 0):
        raise InputError("potential must be nonnegative")
    c = 0.0 if math.isinf(R) else R ** -2
    if c == 0 and not op.positive_definite:
        raise InputError("R = inf needs a Dirichlet domain")
    if not Vd.any():
        return 0.0, np.zeros(op.n)
    theta, vec = _fp_theta_primal(op, Vd, c, seed)
    if check:
        alt = _fp_theta_adjoint(op, Vd, c, seed)
        if abs(alt - theta) > ROUTE_RTOL * max(abs(theta), abs(alt)):
            raise NumericalError(f"Fefferman-Phong routes disagree: {theta!r} vs {alt!r}")
    return theta, vec


def _masked_potential(op: DirichletOperator, V) -> np.ndarray:
    V = check_potential(op.space, V)
    return np.where(op.mask, V, 0.0)


def fefferman_phong_constant(op: DirichletOperator, V, p: float, R: float = math.inf, seed: int = 0) -> float:
    """theta_max / N_{p,R}(V); theta from the pencil (diag(V mu), K + R^-2 M)."""
    Vm = _masked_potential(op, V)
    N = morrey_norm(op.space, Vm, p, R)
    if N == 0:
        raise InputError("N_{p,R}(V) = 0")
    theta, _ = fp_theta(op, Vm, R, seed)
    return theta / N


def potential_family(space: MetricMeasureSpace, count: int, seed: int, tag: int = 0):
    """Seeded nonnegative test potentials: noise, bumps, ball plateaus and sparse spikes in turn."""
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, tag, i])
        amp = float(10 ** rng.uniform(-2.0, 0.0))
        kind = i % 4
        if kind == 0:
            V = amp * rng.uniform(0.0, 1.0, space.n)
        elif kind == 1:
            x = int(rng.integers(space.n))
            w = float(rng.uniform(1.0, max(space.diameter / 4, 1.5)))
            d = space.rows([x])[0]
            V = amp * np.exp(-0.5 * (d / w) ** 2)
        elif kind == 2:
            x = int(rng.integers(space.n))
            r = float(rng.uniform(0.5, max(space.diameter / 3, 1.0)))
            V = np.where(space.rows([x])[0] < r, amp, 0.0)
        else:
            V = np.zeros(space.n)
            k = max(1, space.n // 20)
            V[rng.choice(space.n, size=k, replace=False)] = amp * rng.uniform(0.5, 1.0, k)
        out.append(V)
    return out


def calibration_radii(space: MetricMeasureSpace) -> list:
    r, out = 1.0, []
    while r < space.diameter:
        out.append(r)
        r *= 2.0
    out.append(float(space.diameter))
    return out


def calibrate_cp(op: DirichletOperator, p: float, potentials=None, radii=None, seed: int = 0,
                 count: int = 20) -> dict:
    """Cp = 2 x the largest Fefferman-Phong constant over a potential family and a radius grid."""
    space = op.space
    pots = potentials if potentials is not None else potential_family(space, count, seed, tag=1)
    radii = radii if radii is not None else calibration_radii(space)
    best, wit = 0.0, None
    for i, V in enumerate(pots):
        for R in radii:
            Vm = _masked_potential(op, V)
            N = morrey_norm(space, Vm, p, R)
            if N == 0:
                continue
            theta, _ = fp_theta(op, Vm, R, seed)
            C = theta / N
            if C > best:
                best, wit = C, {"potential": i, "R": R}
    return {"Cp": 2.0 * best, "C_max": best, "witness": wit, "potentials": len(pots), "radii": list(radii)}


# -- spectrum bracket --------------------------------------------------------------------
@dataclass
class SpectrumBoundResult:
    lower: float
    upper: float
    exact: float
    witnesses: dict
    constants: dict

    @property
    def holds(self) -> bool:
        return self.lower <= -self.exact <= self.upper

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "exact": self.exact, "holds": self.holds,
                "witnesses": self.witnesses, "constants": self.constants}


def default_c1(space: MetricMeasureSpace) -> tuple[float, dict]:
    prof = doubling_profile(space, space.diameter)
    return prof.A ** (-1.0 - prof.eta / 2.0), {"A": prof.A, "eta": prof.eta}


def _sup_forms(space: MetricMeasureSpace, V: np.ndarray, p: float, C1: float, Cp: float):
    """Both sups over centers and radii (critical radii plus the diameter, capped there)."""
    mu = np.asarray(space.measure)
    cap = space.diameter if space.n > 1 else 1.0
    lo, up = -math.inf, -math.inf
    wl = wu = None
    for idx, sd, order in space.iter_sorted():
        c1 = np.cumsum((V * mu)[order], axis=1)
        cp = np.cumsum((V ** p * mu)[order], axis=1)
        cm = np.cumsum(mu[order], axis=1)
        for j, x in enumerate(idx):
            radii = radius_grid(sd[j], cap, inclusive=True)
            k = np.searchsorted(sd[j], radii, side="left")
            m = cm[j, k - 1]
            a1 = c1[j, k - 1] / m
            ap = (cp[j, k - 1] / m) ** (1.0 / p)
            inv = radii ** -2.0
            l_ = C1 * a1 - inv
            u_ = Cp * ap - inv
            t = int(np.argmax(l_))
            if l_[t] > lo:
                lo, wl = float(l_[t]), (int(x), float(radii[t]))
            t = int(np.argmax(u_))
            if u_[t] > up:
                up, wu = float(u_[t]), (int(x), float(radii[t]))
    return lo, up, wl, wu


def tent_witnesses(op: DirichletOperator, V: np.ndarray, centers=None, max_radii: int = 64):
    """Rayleigh bounds from tent functions f_r(d(o, .)) = clip(2 - d/r, 0, 1).

    Returns the best value of (<V psi, psi> - Q(psi)) / ||psi||^2, a lower bound
    for -lambda1(L - V), and the smallest plain Rayleigh quotient Q/||psi||^2,
    an upper bound for lambda1(L).
    """
    space = op.space
    centers = op.ids if centers is None else np.asarray(centers, dtype=np.int64)
    Vd = op.restrict(V)
    mu = op.mu
    best, wb = -math.inf, None
    rq_min, wr = math.inf, None
    for start in range(0, len(centers), 64):
        blk = centers[start:start + 64]
        D = space.rows(blk)[:, op.ids]
        for j, o in enumerate(blk):
            radii = np.unique(D[j][D[j] > 0])
            if radii.size > max_radii:
                radii = radii[np.unique(np.linspace(0, radii.size - 1, max_radii).round().astype(int))]
            if radii.size == 0:
                continue
            Psi = np.clip(2.0 - D[j][None, :] / radii[:, None], 0.0, 1.0)
            nrm = (Psi * Psi * mu).sum(axis=1)
            Q = np.einsum("ij,ij->i", Psi, (op.K @ Psi.T).T)
            Vq = (Psi * Psi * (Vd * mu)).sum(axis=1)
            val = (Vq - Q) / nrm
            rq = Q / nrm
            t = int(np.argmax(val))
            if val[t] > best:
                best, wb = float(val[t]), (int(o), float(radii[t]))
            t = int(np.argmin(rq))
            if rq[t] < rq_min:
                rq_min, wr = float(rq[t]), (int(o), float(radii[t]))
    return {"tent_lower": best, "tent_witness": wb, "tent_rayleigh_min": rq_min, "rayleigh_witness": wr}


def spectrum_bounds(space: MetricMeasureSpace, op: DirichletOperator, V, p: float = 2.0,
                    C1: float | None = None, Cp: float | None = None, tents: bool = True,
                    seed: int = 0) -> SpectrumBoundResult:
    V = check_potential(space, V)
    consts = {"p": p}
    if C1 is None:
        C1, info = default_c1(space)
        consts.update(info)
    if Cp is None:
        cal = calibrate_cp(op, p, seed=seed)
        Cp = cal["Cp"]
        consts["calibration"] = cal
    if not (C1 > 0 and Cp > 0):
        raise InputError("C1 and Cp must be positive")
    consts.update({"C1": C1, "Cp": Cp})
    lo, up, wl, wu = _sup_forms(space, V, p, C1, Cp)
    exact = schrodinger_lambda1(op, V)
    wit = {"lower": wl, "upper": wu}
    if tents:
        wit.update(tent_witnesses(op, V))
    return SpectrumBoundResult(lo, up, exact, wit, consts)


# -- positivity ------------------------------------------------------------------------------
def _pencil_max(op: DirichletOperator, Vd: np.ndarray, c: float, seed: int = 0):
    """theta for <V psi, psi> <= theta (Q(psi) + c ||psi||^2); c may be negative if K + cM > 0."""
    if not Vd.any():
        return 0.0, np.zeros(op.n)
    return _fp_theta_primal(op, Vd, c, seed)


def positivity_checks(op: DirichletOperator, V, p: float, R: float, lam1M: float | None = None,
                      Cp: float | None = None, lambdas: Sequence[float] | None = None,
                      seed: int = 0) -> VerificationReport:
    """Positivity inequalities as generalized eigenvalue statements.

    Statement form: <V psi,psi> <= Cp N (1 + l R^2)/(l R^2) (Q + l/2 ||psi||^2).
    Proof form:     <V psi,psi> <= 2 Cp N (1 + l R^2)/(l R^2) (Q - l/2 ||psi||^2).
    Cp defaults to the exact constant of the R-scale inequality for this V,
    from which both forms follow.  The lambda sweep fits
    <V psi, psi> <= C(lam) N_{p,1/lam}(V) (Q + lam^2 ||psi||^2).
    """
    space = op.space
    Vm = _masked_potential(op, V)
    Vd = op.restrict(Vm)
    if lam1M is None:
        lam1M = lambda1(op)
    if not lam1M > 0:
        raise InputError("lambda1(M) must be positive for the positivity inequality")
    N = morrey_norm(space, Vm, p, R)
    theta_R, _ = _pencil_max(op, Vd, R ** -2, seed)
    C_R = theta_R / N if N > 0 else 0.0
    Cp_used = C_R if Cp is None else float(Cp)
    scale = (1.0 + lam1M * R * R) / (lam1M * R * R)
    rep = VerificationReport("positivity", {"p": p, "R": R, "lambda1M": lam1M, "N": N, "Cp": Cp_used,
                                            "C_R": C_R, "scale": scale})
    plus, vplus = _pencil_max(op, Vd, lam1M / 2.0, seed)
    minus, vminus = _pencil_max(op, Vd, -lam1M / 2.0, seed)
    rhs = Cp_used * N * scale
    rep.constants.update({"theta_plus": plus, "theta_minus": minus})
    rep.add("statement_form", plus <= rhs * (1 + 1e-10),
            {"theta": plus, "bound": rhs, "eigvec_argmax": int(np.argmax(np.abs(vplus))) if N > 0 else None})
    rep.add("proof_form", minus <= 2.0 * rhs * (1 + 1e-10),
            {"theta": minus, "bound": 2.0 * rhs, "eigvec_argmax": int(np.argmax(np.abs(vminus))) if N > 0 else None})
    if lambdas is None:
        lambdas = [2.0 ** k / R for k in range(0, 6)]
    sweep = []
    for lam in sorted(float(x) for x in lambdas):
        th, _ = _pencil_max(op, Vd, lam * lam, seed)
        Nl = morrey_norm(space, Vm, p, 1.0 / lam)
        sweep.append({"lambda": lam, "theta": th, "N": Nl, "C": th / Nl if Nl > 0 else 0.0})
    mono = all(sweep[i + 1]["theta"] <= sweep[i]["theta"] * (1 + 1e-10) for i in range(len(sweep) - 1))
    rep.constants["lambda_sweep"] = sweep
    rep.add("sweep_theta_nonincreasing", mono, None if mono else sweep)
    if Cp is not None:
        worst = max(sweep, key=lambda s: s["C"])
        rep.add("lambda_form", worst["C"] <= Cp_used * (1 + 1e-10), worst)
    return rep


# -- Hardy --------------------------------------------------------------------------------
def hardy_potential(space: MetricMeasureSpace, o: int) -> np.ndarray:
    """rho^-2 with rho = d(o, .), set to 0 at o itself."""
    rho = space.rows([o])[0]
    V = np.zeros(space.n)
    V[rho > 0] = rho[rho > 0] ** -2.0
    return V


def hardy_constant(op: DirichletOperator, o: int, seed: int = 0, dense_check: bool = False,
                   reference: bool = False) -> dict:
    """C_H = max <rho^-2 psi, psi> / Q(psi) on the domain.

    Kronecker domains use the spectral solve K^-1 = Phi Lambda^-1 Phi^T;
    otherwise a sparse LU.  ``dense_check`` compares with a dense generalized
    eigensolve (small domains only); ``reference`` with ARPACK on the
    sparse-LU operator.
    """
    if not op.positive_definite:
        raise InputError("the Hardy constant needs a Dirichlet domain")
    Vd = op.restrict(hardy_potential(op.space, o))
    sw = np.sqrt(Vd * op.mu)
    ops = op.kron_factors()
    if ops is not None and len(ops) > 1:
        spec = op.spectral()
        inv = 1.0 / spec.lam

        def solve(x):
            c = spec.phi_t_rows(x[None, :])[0] * inv
            return spec.phi_rows(c[None, :])[0]
        route = "kronecker"
    else:
        solve = linalg.factorized(op.K)
        route = "sparse-lu"
    res = linalg.lanczos_largest(lambda x: sw * solve(sw * x), op.n, tol=1e-11, maxiter=1500, seed=seed)
    out = {"C_H": res.value, "inverse": 1.0 / res.value, "route": route, "iterations": res.iterations,
           "residual": res.residual}
    if dense_check:
        theta, _ = linalg.dense_generalized_largest(np.diag(Vd * op.mu), op.K.toarray())
        out["dense"] = theta
        out["dense_rel_diff"] = abs(theta - res.value) / theta
    if reference:
        theta = linalg.arpack_largest(lambda x, s_=linalg.factorized(op.K): sw * s_(sw * x), op.n, seed=seed + 1)
        out["reference"] = theta
        out["reference_rel_diff"] = abs(theta - res.value) / theta
    return out


def hardy_necessity_witness(op: DirichletOperator, o: int, r: float, R: float, nu: float) -> dict:
    """Cutoff phi = f(d(o, .)) with f = r^-a on [0,r], t^-a on [r,R], 2R^-a - R^-(a+1) t on [R,2R], a = (nu-2)/2."""
    space = op.space
    if not 0 < r < R:
        raise InputError("need 0 < r < R")
    a = (nu - 2.0) / 2.0
    rho = space.rows([o])[0]
    f = np.where(rho <= r, r ** -a,
                 np.where(rho <= R, np.maximum(rho, r) ** -a,
                          np.clip(2.0 * R ** -a - R ** (-a - 1.0) * rho, 0.0, None)))
    V = hardy_potential(space, o)
    psi = op.restrict(f)
    lhs = a * a * float((op.restrict(V) * psi * psi * op.mu).sum())
    rhs = op.energy(psi)
    vr = space.ball_measure(o, r)
    vR = space.ball_measure(o, R)
    return {"r": r, "R": R, "nu": nu, "hardy_lhs": lhs, "hardy_rhs": rhs,
            "volume_ratio": vR / vr, "scaled_ratio": (vR / vr) * (r / R) ** nu,
            "nu_effective": math.log(vR / vr) / math.log(R / r)}


def hardy_check(space: MetricMeasureSpace, op: DirichletOperator, o: int, p: float, R: float = math.inf,
                witness_radii: Sequence[tuple] | None = None, seed: int = 0,
                dense_check: bool = False) -> VerificationReport:
    if not 0 <= int(o) < space.n or not op.mask[int(o)]:
        raise InputError("o must lie in the operator domain")
    o = int(o)
    V = hardy_potential(space, o)
    Kp, (kx, kr) = morrey_norm(space, V, p, R, witness=True)
    hc = hardy_constant(op, o, seed, dense_check)
    nu = 2.0 + 2.0 * math.sqrt(1.0 / hc["C_H"])
    rep = VerificationReport("hardy", {"o": o, "p": p, "R": R, "K_p": Kp, "K_p_witness": [kx, kr],
                                       "nu_from_C_H": nu, **hc})
    if witness_radii is None:
        dmax = float(space.rows([o])[0].max())
        witness_radii = [(r, 2.0 * r) for r in (1.0, 2.0, 4.0, 8.0) if 4.0 * r <= dmax]
    wits = [hardy_necessity_witness(op, o, r, R_, nu) for r, R_ in witness_radii]
    rep.witnesses = wits
    rep.add("K_p_finite", math.isfinite(Kp), None)
    rep.add("C_H_finite", math.isfinite(hc["C_H"]) and hc["C_H"] > 0, None)
    # with nu from C_H the witness inequality is the Rayleigh bound itself
    viol = [w for w in wits if w["hardy_lhs"] > w["hardy_rhs"] * (1 + 1e-9)]
    rep.add("variational_witness", not viol, viol[0] if viol else None)
    if dense_check:
        rep.add("dense_agreement", hc["dense_rel_diff"] < 1e-8, hc["dense_rel_diff"])
    return rep


# -- product identity -----------------------------------------------------------------------
def product_operator(op: DirichletOperator, n_line: int, h: float = 1.0):
    """Operator on line x space: free line factor, base domain carried over."""
    prod = product_space(op.space, n_line, h)
    mask = np.tile(op.mask, n_line)
    return DirichletOperator(prod, domain=mask)


def product_identity_check(space: MetricMeasureSpace, op: DirichletOperator, V, n_line: int, h: float = 1.0,
                           times: Sequence[float] = (0.1, 1.0, 10.0), p: float = 2.0,
                           R: float | None = None) -> VerificationReport:
    from .maximal import product_morrey_check
    V = check_potential(space, V)
    pop = product_operator(op, n_line, h)
    Vt = np.tile(V, n_line)
    l_base = schrodinger_lambda1(op, V)
    l_prod = schrodinger_lambda1(pop, Vt)
    diff = abs(l_prod - l_base)
    rep = VerificationReport("product-identity", {"n_line": n_line, "h": h, "lambda1_base": l_base,
                                                  "lambda1_product": l_prod, "lambda1_diff": diff})
    rep.add("lambda1_identity", diff < 1e-9, {"diff": diff})
    line_op = DirichletOperator(pop.space.factors[0])
    need = bool(times) or space.n * n_line <= 400
    dense_prod = DenseSpectral.from_operator(pop) if need and pop.n <= DENSE_MAX else None
    if times:
        _heat_factorization(rep, op, pop, line_op, dense_prod, times)
    R = float(R) if R is not None else max(space.diameter / 4.0, 1.0)
    if V.any():
        mc = product_morrey_check(space, V, n_line, h, p, R, product=pop.space)
        rep.constants["morrey"] = mc
        rep.add("morrey_comparability", mc["upper_ok"] and mc["lower_ok"], mc)
    rep.constants["product_doubling"] = doubling_profile(pop.space, R).as_dict()
    if dense_prod is not None and space.n * n_line <= 400:
        base_l = DenseSpectral.from_operator(op).lam
        line_l = DenseSpectral.from_operator(line_op).lam
        sums = np.sort(np.add.outer(line_l, base_l).ravel())
        err = float(np.abs(np.sort(dense_prod.lam) - sums).max())
        rep.add("spectrum_additivity", err < 1e-9, {"max_abs_error": err})
    return rep


def _heat_factorization(rep, op, pop, line_op, dense_prod, times):
    """Assembled product heat kernel against the Kronecker product of the factor kernels."""
    hk_line = HeatKernel(line_op, times)
    hk_base = HeatKernel(op, times)
    worst = 0.0
    for t in times:
        fact = np.kron(hk_line.matrix(t), hk_base.matrix(t))
        if dense_prod is not None:
            assembled = dense_prod.matrix(lambda lam: np.exp(-t * lam))
        else:
            assembled = HeatKernel(pop, [t]).matrix(t)
        worst = max(worst, float(np.abs(assembled - fact).max()))
    rep.constants["heat_max_abs_error"] = worst
    rep.add("heat_factorization", worst < 1e-8, {"max_abs_error": worst})
