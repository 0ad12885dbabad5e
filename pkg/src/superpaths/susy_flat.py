"""Flat-space supersymmetric quantum mechanics.

Witten Hamiltonian, for a Morse function h scaled by u and Euclidean metric:

    H = 1/2 (d_u + d_u^*)^2,   d_u = e^{-uh} d e^{uh}
      = -1/2 Lap + 1/2 u^2 |grad h|^2 + 1/2 u h_jl (eta^l d_j - d_j eta^l)

where eta^l multiplies by dx^l and d_j = d/deta^j.

Grid oracle.  Forms are discretised as cochains of a cubical grid: functions
on nodes, the dx^j component of a 1-form on the midpoints of j-edges, and so
on.  The exterior derivative is the central difference between neighbouring
cells, and d_u = W^{-1} d W with W = exp(u h) sampled at cell centres.  Then
d_u^2 = 0 exactly and the nonzero spectra of adjacent degrees pair exactly,
so spectral supertraces are integers to round-off.

Monte Carlo.  ``nicolai_fk_evolve`` runs dx = db - u grad h dt by
Euler-Maruyama and weights each path by exp(-u(h(x) - h(x_t))) times the
time-ordered product of exact fermionic matrices exp(-dt u h_jl(x_s) eta^j d_l).
That matrix is what the single-slot insertion  i u h_jl theta^j rho_l  of the
fermionic Brownian motion generates when theta is read at the left point.
``witten_index`` needs the kernel on the diagonal, so it uses the
Girsanov-equivalent bridge form: Brownian bridges with potential
1/2 u^2 |grad h|^2 - 1/2 u Lap h and the same fermionic product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import rng as _rng
from .grassmann import GrassmannError, SuperPolynomial, grading_matrix, number_operator, xi_matrix, d_matrix
from .super_wiener import Estimate, PathEnsemble, estimate


class MorseError(ValueError):
    pass


class StiffDriftError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Morse functions

@dataclass(frozen=True)
class MorseFunctionSpec:
    """h on R^m or on the flat torus [0, 2pi)^m, with derivatives, scaled by u."""

    name: str
    m: int
    h: Callable
    grad: Callable
    hess: Callable
    domain: str = "R"
    u: float = 1.0
    min_curvature: float = 1.0

    def __post_init__(self):
        if self.domain not in ("R", "torus"):
            raise MorseError(f"unknown domain {self.domain!r}")
        if self.u <= 0:
            raise MorseError("u must be positive")

    def with_u(self, u: float) -> "MorseFunctionSpec":
        return MorseFunctionSpec(self.name, self.m, self.h, self.grad, self.hess, self.domain, float(u),
                                 self.min_curvature)

    def check_gradient(self, points: np.ndarray, eps: float = 1e-5, rtol: float = 1e-6) -> float:
        """Max relative mismatch between grad and central differences of h."""
        pts = np.atleast_2d(points)
        g = self.grad(pts)
        fd = np.zeros_like(g)
        for j in range(self.m):
            e = np.zeros(self.m)
            e[j] = eps
            fd[:, j] = (self.h(pts + e) - self.h(pts - e)) / (2 * eps)
        scale = np.maximum(1.0, np.abs(g))
        return float(np.max(np.abs(g - fd) / scale))


def _sum_spec(name, m, f, f1, f2, domain, u, curv):
    def h(x):
        return np.sum(f(np.asarray(x, float)), axis=-1)

    def grad(x):
        return f1(np.asarray(x, float))

    def hess(x):
        x = np.asarray(x, float)
        d = f2(x)
        out = np.zeros(x.shape + (x.shape[-1],))
        for j in range(x.shape[-1]):
            out[..., j, j] = d[..., j]
        return out

    return MorseFunctionSpec(name, m, h, grad, hess, domain, float(u), curv)


def quadratic(m: int = 1, u: float = 1.0) -> MorseFunctionSpec:
    """h = |x|^2 / 2 on R^m."""
    return _sum_spec("quad", m, lambda x: 0.5 * x * x, lambda x: x, lambda x: np.ones_like(x), "R", u, 1.0)


def cos_sum(m: int = 1, u: float = 1.0, k: float = 1.0, amp: float = 1.0) -> MorseFunctionSpec:
    """h = amp * sum_j cos(k x_j) on the torus."""
    return _sum_spec(f"cos{'' if k == 1 else int(k)}", m,
                     lambda x: amp * np.cos(k * x), lambda x: -amp * k * np.sin(k * x),
                     lambda x: -amp * k * k * np.cos(k * x), "torus", u, amp * k * k)


def quarter_cos2(m: int = 1, u: float = 1.0) -> MorseFunctionSpec:
    """h = 1/4 sum_j cos(2 x_j): Hessian eigenvalues +-1 at every critical point."""
    s = cos_sum(m, u, k=2.0, amp=0.25)
    return MorseFunctionSpec("qcos2", m, s.h, s.grad, s.hess, "torus", float(u), 1.0)


def perturbed_cos(eps: float = 0.01, u: float = 1.0) -> MorseFunctionSpec:
    """h = cos x + eps sin 2x on the circle."""
    return MorseFunctionSpec(
        "pcos", 1,
        lambda x: np.cos(x[..., 0]) + eps * np.sin(2 * x[..., 0]),
        lambda x: (-np.sin(x[..., 0]) + 2 * eps * np.cos(2 * x[..., 0]))[..., None],
        lambda x: (-np.cos(x[..., 0]) - 4 * eps * np.sin(2 * x[..., 0]))[..., None, None],
        "torus", float(u), 1.0)


def polynomial(coeffs: Sequence[float], u: float = 1.0) -> MorseFunctionSpec:
    """h = sum_k coeffs[k] x^k on R (leading term must be even degree, positive)."""
    P = np.polynomial.Polynomial(coeffs)
    if P.degree() < 2 or P.degree() % 2 or P.coef[-1] <= 0:
        raise MorseError("polynomial Morse functions need positive even leading degree")
    d1, d2 = P.deriv(1), P.deriv(2)
    crit = [r.real for r in d1.roots() if abs(r.imag) < 1e-12]
    curv = max(1e-3, min(abs(d2(c)) for c in crit)) if crit else 1.0
    return MorseFunctionSpec("poly", 1, lambda x: P(x[..., 0]), lambda x: d1(x[..., 0])[..., None],
                             lambda x: d2(x[..., 0])[..., None, None], "R", float(u), curv)


BUILTINS = {
    "quad": quadratic,
    "cos": cos_sum,
    "qcos2": quarter_cos2,
}


def builtin(name: str, m: int = 1, u: float = 1.0) -> MorseFunctionSpec:
    if name not in BUILTINS:
        raise MorseError(f"unknown Morse function {name!r}; choose from {sorted(BUILTINS)}")
    return BUILTINS[name](m, u)


# ---------------------------------------------------------------------------
# grid complex

@dataclass(frozen=True)
class CubicalGrid:
    m: int
    N: int
    lo: float
    hi: float
    periodic: bool

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.N if self.periodic else self.N - 1)

    def nodes_1d(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.N)

    def edges_1d(self) -> np.ndarray:
        n_e = self.N if self.periodic else self.N - 1
        return self.lo + self.spacing * (np.arange(n_e) + 0.5)

    def diff_1d(self) -> sp.csr_matrix:
        """Difference from nodes to edges, divided by the spacing."""
        N = self.N
        if self.periodic:
            D = sp.diags([-np.ones(N), np.ones(N - 1)], [0, 1], shape=(N, N), format="lil")
            D[N - 1, 0] = 1.0
        else:
            D = sp.diags([-np.ones(N - 1), np.ones(N - 1)], [0, 1], shape=(N - 1, N), format="lil")
        return (D.tocsr() / self.spacing)

    def cell_types(self, p: int) -> list[tuple[int, ...]]:
        """Multi-indices (0-based dims) of p-cells, in increasing order."""
        import itertools
        return list(itertools.combinations(range(self.m), p))

    def cell_centers(self, mu: tuple[int, ...]) -> np.ndarray:
        axes = [self.edges_1d() if j in mu else self.nodes_1d() for j in range(self.m)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def cell_count(self, mu: tuple[int, ...]) -> int:
        n_e = self.N if self.periodic else self.N - 1
        return int(np.prod([n_e if j in mu else self.N for j in range(self.m)]))


def _kron_chain(mats):
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M, format="csr")
    return out


def exterior_derivative(grid: CubicalGrid, p: int) -> sp.csr_matrix:
    """Cochain d from p-cells to (p+1)-cells, blocks ordered by cell type."""
    src = grid.cell_types(p)
    dst = grid.cell_types(p + 1)
    D = grid.diff_1d()
    n_e = D.shape[0]
    I_n = sp.identity(grid.N, format="csr")
    I_e = sp.identity(n_e, format="csr")
    rows = []
    for nu in dst:
        row = []
        for mu in src:
            extra = set(nu) - set(mu)
            if not set(mu) <= set(nu) or len(extra) != 1:
                row.append(sp.csr_matrix((grid.cell_count(nu), grid.cell_count(mu))))
                continue
            j = extra.pop()
            sign = (-1) ** sum(1 for i in mu if i < j)
            mats = []
            for k in range(grid.m):
                if k == j:
                    mats.append(D)
                elif k in mu:
                    mats.append(I_e)
                else:
                    mats.append(I_n)
            row.append(sign * _kron_chain(mats))
        rows.append(row)
    return sp.bmat(rows, format="csr")


def _cell_h(spec: MorseFunctionSpec, grid: CubicalGrid, p: int) -> np.ndarray:
    return np.concatenate([spec.h(grid.cell_centers(mu)) for mu in grid.cell_types(p)])


def default_grid(spec: MorseFunctionSpec, N: int | None = None) -> CubicalGrid:
    if spec.domain == "torus":
        return CubicalGrid(spec.m, N or (512 if spec.m == 1 else 96), 0.0, 2 * np.pi, True)
    L = 6.0 / math.sqrt(spec.u * spec.min_curvature)
    return CubicalGrid(spec.m, N or (512 if spec.m == 1 else 96), -L, L, False)


@dataclass
class GridOperator:
    """Operator on discrete forms, one block per degree p (fermion number p).

    ``blocks[p]`` acts on p-cochains; the eta^mu component of a p-form lives
    on the cells of type mu (see ``CubicalGrid.cell_centers``).  ``off`` holds
    degree-raising maps p -> p+1 when the operator is not block diagonal.
    """

    grid: CubicalGrid
    blocks: dict[int, sp.spmatrix] = field(default_factory=dict)
    raising: dict[int, sp.spmatrix] = field(default_factory=dict)
    lowering: dict[int, sp.spmatrix] = field(default_factory=dict)

    def dense(self) -> np.ndarray:
        """Full matrix on the direct sum of all degrees."""
        sizes = [sum(self.grid.cell_count(mu) for mu in self.grid.cell_types(p)) for p in range(self.grid.m + 1)]
        rows = []
        for q in range(self.grid.m + 1):
            row = []
            for p in range(self.grid.m + 1):
                if p == q and p in self.blocks:
                    row.append(self.blocks[p])
                elif q == p + 1 and p in self.raising:
                    row.append(self.raising[p])
                elif q == p - 1 and q in self.lowering:
                    row.append(self.lowering[q])
                else:
                    row.append(sp.csr_matrix((sizes[q], sizes[p])))
            rows.append(row)
        return sp.bmat(rows, format="csr").toarray()

    def sizes(self) -> list[int]:
        return [sum(self.grid.cell_count(mu) for mu in self.grid.cell_types(p)) for p in range(self.grid.m + 1)]


def deformed_d(spec: MorseFunctionSpec, grid: CubicalGrid) -> dict[int, sp.csr_matrix]:
    """d_u = e^{-uh} d e^{uh} on cochains, degree by degree."""
    out = {}
    for p in range(grid.m):
        d = exterior_derivative(grid, p)
        hs = _cell_h(spec, grid, p)
        ht = _cell_h(spec, grid, p + 1)
        # entry (r, c) scaled by exp(u (h_c - h_r)); bounded by the cell size
        d = d.tocoo()
        vals = d.data * np.exp(spec.u * (hs[d.col] - ht[d.row]))
        out[p] = sp.csr_matrix((vals, (d.row, d.col)), shape=d.shape)
    return out


def witten_hamiltonian(spec: MorseFunctionSpec, grid: CubicalGrid | None = None) -> GridOperator:
    """H = 1/2 (d_u d_u^* + d_u^* d_u), block diagonal in the form degree."""
    grid = grid or default_grid(spec)
    _check_morse_on_grid(spec, grid)
    du = deformed_d(spec, grid)
    blocks = {}
    for p in range(grid.m + 1):
        acc = None
        if p in du:
            acc = 0.5 * (du[p].T @ du[p])
        if p - 1 in du:
            t = 0.5 * (du[p - 1] @ du[p - 1].T)
            acc = t if acc is None else acc + t
        blocks[p] = acc.tocsr()
    return GridOperator(grid, blocks)


def _check_morse_on_grid(spec, grid):
    if spec.domain == "torus" and not grid.periodic:
        raise MorseError("torus Morse functions need a periodic grid")
    if spec.domain == "R" and grid.periodic:
        raise MorseError("functions on R need a truncated (non-periodic) grid")


def brst_pair(spec: MorseFunctionSpec, grid: CubicalGrid | None = None) -> tuple[GridOperator, GridOperator]:
    """Omega = i e^{-uh} d e^{uh} and chi = e^{uh} delta e^{-uh} = d_u^*."""
    grid = grid or default_grid(spec)
    du = deformed_d(spec, grid)
    Om = GridOperator(grid, raising={p: (1j * M).tocsr() for p, M in du.items()})
    Ch = GridOperator(grid, lowering={p: M.T.tocsr() for p, M in du.items()})
    return Om, Ch


def anticommutator_ratio(spec: MorseFunctionSpec, grid: CubicalGrid | None = None, n_states: int = 20,
                         seed: int = 0) -> np.ndarray:
    """<v, {Omega, chi} v> / <v, H v> for random states (constant 2i here)."""
    grid = grid or default_grid(spec)
    Om, Ch = brst_pair(spec, grid)
    H = witten_hamiltonian(spec, grid).dense()
    O, C = Om.dense(), Ch.dense()
    A = O @ C + C @ O
    g = _rng.block_generator(seed, 0, "brst")
    V = g.standard_normal((H.shape[0], n_states))
    return np.einsum("is,ij,js->s", V, A, V) / np.einsum("is,ij,js->s", V, H, V)


def spectrum(op: GridOperator) -> dict[int, np.ndarray]:
    return {p: np.linalg.eigvalsh(B.toarray()) for p, B in op.blocks.items()}


def low_spectrum(op: GridOperator, k: int = 6) -> dict[int, np.ndarray]:
    """k smallest eigenvalues per degree (sparse shift-invert for large blocks)."""
    out = {}
    for p, B in op.blocks.items():
        if B.shape[0] <= 1200:
            out[p] = np.linalg.eigvalsh(B.toarray())[:k]
        else:
            import scipy.sparse.linalg as spla
            vals = spla.eigsh(B.tocsc(), k=k, sigma=-1e-3, which="LM", return_eigenvectors=False)
            out[p] = np.sort(vals)
    return out


# ---------------------------------------------------------------------------
# grid evolution and supertraces

def grid_supertrace(spec: MorseFunctionSpec, t_list: Sequence[float], grid: CubicalGrid | None = None) -> np.ndarray:
    """sum_p (-1)^p tr exp(-t H_p) on the grid."""
    op = witten_hamiltonian(spec, grid)
    ev = spectrum(op)
    return np.array([sum((-1) ** p * np.sum(np.exp(-t * ev[p])) for p in ev) for t in t_list])


def grid_evolve(spec: MorseFunctionSpec, psi0: SuperPolynomial, t: float, grid: CubicalGrid | None = None):
    """e^{-tH} psi0 on the grid (m = 1).  Returns {mask: (cell centres, values)}."""
    grid = grid or default_grid(spec)
    if spec.m != 1:
        raise MorseError("grid_evolve is implemented for m = 1")
    op = witten_hamiltonian(spec, grid)
    out = {}
    for p, mu, mask in ((0, (), 0), (1, (0,), 1)):
        x = grid.cell_centers(mu)
        c = psi0.coefficient(mask)
        v = np.asarray(c(x)) if callable(c) else np.full(len(x), float(c))
        w, U = np.linalg.eigh(op.blocks[p].toarray())
        out[mask] = (x[:, 0], U @ (np.exp(-t * w) * (U.T @ v)))
    return out


# ---------------------------------------------------------------------------
# fermionic transfer matrices

def fermion_generator(m: int) -> np.ndarray:
    """E[j, l] = eta^j d/deta^l on the 2^m mask basis, shape (m, m, 2^m, 2^m)."""
    E = np.zeros((m, m, 1 << m, 1 << m))
    for j in range(m):
        for l in range(m):
            E[j, l] = xi_matrix(j + 1, m) @ d_matrix(l + 1, m)
    return E


def fermion_step(hess: np.ndarray, dt: float, u: float, E: np.ndarray) -> np.ndarray:
    """exp(-dt u sum_jl h_jl eta^j d_l) for a batch of symmetric Hessians (B, m, m)."""
    A = np.einsum("bjl,jlpq->bpq", hess, E)
    w, V = np.linalg.eigh(A)
    return np.einsum("bpk,bk,bqk->bpq", V, np.exp(-dt * u * w), V)


def _ordered_product_apply(hess_path: np.ndarray, dt: float, u: float, v: np.ndarray, E: np.ndarray,
                           weights: np.ndarray | None = None) -> np.ndarray:
    """T_0 T_1 ... T_{S-1} v with T_r built from hess_path[:, r]; weights are quadrature weights."""
    S = hess_path.shape[1]
    m = hess_path.shape[-1]
    if m == 1:
        # diagonal: eta d is the fermion number
        integ = np.sum(hess_path[:, :, 0, 0] * (weights if weights is not None else dt), axis=1)
        return v * np.stack([np.ones_like(integ), np.exp(-u * integ)], axis=1)
    for r in range(S - 1, -1, -1):
        w = dt if weights is None else weights[r]
        v = np.einsum("bpq,bq->bp", fermion_step(hess_path[:, r], w, u, E), v)
    return v


def _ordered_product_matrix(hess_path: np.ndarray, u: float, weights: np.ndarray, E: np.ndarray) -> np.ndarray:
    B, S, m, _ = hess_path.shape
    if m == 1:
        integ = np.sum(hess_path[:, :, 0, 0] * weights, axis=1)
        M = np.zeros((B, 2, 2))
        M[:, 0, 0] = 1.0
        M[:, 1, 1] = np.exp(-u * integ)
        return M
    M = np.broadcast_to(np.eye(1 << m), (B, 1 << m, 1 << m)).copy()
    for r in range(S):
        M = np.einsum("bpq,bqr->bpr", M, fermion_step(hess_path[:, r], weights[r], u, E))
    return M


# ---------------------------------------------------------------------------
# Feynman-Kac evolution along Nicolai paths

def _wrap(spec, x):
    return np.mod(x, 2 * np.pi) if spec.domain == "torus" else x


def nicolai_fk_evolve(spec: MorseFunctionSpec, psi0: SuperPolynomial, t: float, ens: PathEnsemble,
                      x_points) -> dict[int, list[Estimate]]:
    """Estimate (e^{-tH} psi0)(x, eta) at the given points.

    Every point reuses the ensemble's Brownian increments.  Returns a dict
    mask -> list of Estimates (one per point) for each eta^mu component.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if abs(ens.T - t) > 1e-12:
        raise ValueError("ensemble horizon must equal t")
    if ens.m != spec.m:
        raise ValueError("ensemble dimension differs from the Morse function's")
    if spec.u * ens.dt > 0.1:
        raise StiffDriftError(f"u*dt = {spec.u * ens.dt:.3g} exceeds 0.1; use more steps")
    xs = np.atleast_2d(np.asarray(x_points, float))
    if xs.shape[-1] != spec.m:
        xs = xs.reshape(-1, spec.m)
    m = spec.m
    E = fermion_generator(m)
    masks = list(range(1 << m))
    per_point = {mk: [[] for _ in range(len(xs))] for mk in masks}
    for _, db in ens.increment_blocks():
        Bn = db.shape[0]
        for ip, x0 in enumerate(xs):
            x = np.broadcast_to(x0, (Bn, m)).copy()
            hs = np.empty((Bn, ens.steps, m, m))
            for r in range(ens.steps):
                hs[:, r] = spec.hess(x)
                x = x + db[:, r] - spec.u * spec.grad(x) * ens.dt
            x = _wrap(spec, x)
            wb = np.exp(-spec.u * (spec.h(x0[None, :])[0] - spec.h(x)))
            comps = psi0.component_values(x)
            v = np.stack([np.broadcast_to(np.asarray(comps.get(mk, 0.0), float), (Bn,)) for mk in masks], axis=1)
            v = _ordered_product_apply(hs, ens.dt, spec.u, v, E)
            for mk in masks:
                per_point[mk][ip].append(wb * v[:, mk])
    return {mk: [estimate(np.concatenate(chunks)) for chunks in per_point[mk]] for mk in masks}


# ---------------------------------------------------------------------------
# bridge Feynman-Kac: kernels on the diagonal

def _bridges(db: np.ndarray, dt: float) -> np.ndarray:
    """Brownian bridges from 0 to 0 built from increments, shape (B, S+1, m)."""
    B, S, m = db.shape
    b = np.zeros((B, S + 1, m))
    np.cumsum(db, axis=1, out=b[:, 1:])
    s = np.linspace(0.0, 1.0, S + 1)[None, :, None]
    return b - s * b[:, -1:, :]


def _trapezoid_weights(S: int, dt: float) -> np.ndarray:
    w = np.full(S + 1, dt)
    w[0] = w[-1] = dt / 2
    return w


def witten_index_fk(spec: MorseFunctionSpec, t: float, n_paths: int, steps: int, seed: int,
                    windings: int = 2) -> Estimate:
    """MC supertrace of e^{-tH}: bridge paths, exact fermionic supertrace per path."""
    m = spec.m
    dt = t / steps
    E = fermion_generator(m)
    gamma = np.diag(grading_matrix(m))
    wq = _trapezoid_weights(steps, dt)
    samples = []
    if spec.domain == "R":
        om = spec.u * spec.min_curvature
        s2 = 1.0 / (2 * om * math.tanh(om * t / 2))
        scale = 1.2 * math.sqrt(s2)
    for b_idx, lo, hi in _rng.blocks(n_paths):
        Bn = hi - lo
        db = _rng.normal_block(seed, b_idx, Bn, (steps, m), "index-bridge") * math.sqrt(dt)
        z = _rng.normal_block(seed, b_idx, Bn, (m,), "index-start")
        U = _rng.uniform_block(seed, b_idx, Bn, (m,), "index-start-u")
        br = _bridges(db, dt)
        if spec.domain == "R":
            x0 = z * scale
            logq = -0.5 * np.sum(z * z, axis=1) - m * math.log(scale * math.sqrt(2 * math.pi))
            starts = [(x0, 0.0)]
            inv_q = np.exp(-logq)
        else:
            x0 = U * 2 * np.pi
            inv_q = np.full(Bn, (2 * np.pi) ** m)
            import itertools
            starts = []
            for w in itertools.product(range(-windings, windings + 1), repeat=m):
                starts.append((x0, np.array(w, float) * 2 * np.pi))
        total = np.zeros(Bn)
        for x_start, shift in starts:
            shift = np.broadcast_to(np.asarray(shift, float), (m,))
            s = np.linspace(0.0, 1.0, steps + 1)[None, :, None]
            path = x_start[:, None, :] + br + s * shift[None, None, :]
            free = math.exp(-float(shift @ shift) / (2 * t)) / (2 * math.pi * t) ** (m / 2)
            flat = path.reshape(-1, m)
            g = spec.grad(flat)
            lap = np.trace(spec.hess(flat), axis1=-2, axis2=-1)
            V = (0.5 * spec.u ** 2 * np.sum(g * g, axis=1) - 0.5 * spec.u * lap).reshape(Bn, steps + 1)
            wb = np.exp(-V @ wq)
            hs = spec.hess(flat).reshape(Bn, steps + 1, m, m)
            if m == 1:
                integ = hs[:, :, 0, 0] @ wq
                strace = 1.0 - np.exp(-spec.u * integ)
            else:
                M = _ordered_product_matrix(hs, spec.u, wq, E)
                strace = np.einsum("p,bpp->b", gamma, M)
            total += free * wb * strace
        samples.append(total * inv_q)
    return estimate(np.concatenate(samples))


def witten_index(spec: MorseFunctionSpec, t_list: Sequence[float], n_paths: int = 20000, steps: int = 200,
                 seed: int = 0, grid: CubicalGrid | None = None, routes=("grid", "fk")) -> dict:
    """Supertrace of e^{-tH} for each t: grid spectral value and FK estimate."""
    if spec.domain == "R" and spec.name not in ("quad", "poly"):
        raise MorseError("non-compact domain needs a confining h")
    out = {"t": list(map(float, t_list))}
    if "grid" in routes:
        out["grid"] = grid_supertrace(spec, t_list, grid)
    if "fk" in routes:
        out["fk"] = [witten_index_fk(spec, t, n_paths, steps, seed + 7919 * k) for k, t in enumerate(t_list)]
    return out


# ---------------------------------------------------------------------------
# magnetic oscillator

def mehler_kernel(B: float, t: float) -> float:
    """Diagonal heat kernel B / (4 pi sinh(B t / 2)) of the planar magnetic operator."""
    if t <= 0:
        raise ValueError("t must be positive")
    if B < 0:
        raise ValueError("B must be nonnegative")
    if B == 0:
        return 1.0 / (2 * math.pi * t)
    return B / (4 * math.pi * math.sinh(0.5 * B * t))


def mehler_fk(B: float, t: float, n_paths: int, steps: int, seed: int) -> Estimate:
    """MC kernel at (0, 0) of -1/2 Lap + (iB/2)(x1 d2 - x2 d1) + B^2 |x|^2 / 8.

    The operator is -1/2 (grad - iA)^2 with A = (B/2)(-x2, x1), so the
    Feynman-Kac-Ito weight along a bridge is exp(i B * Levy area); the
    discretised area is the shoelace sum of the polygonal bridge.
    """
    dt = t / steps
    vals = []
    for b_idx, lo, hi in _rng.blocks(n_paths):
        db = _rng.normal_block(seed, b_idx, hi - lo, (steps, 2), "mehler") * math.sqrt(dt)
        br = _bridges(db, dt)
        x1, x2 = br[:, :-1, 0], br[:, :-1, 1]
        d1, d2 = np.diff(br[:, :, 0], axis=1), np.diff(br[:, :, 1], axis=1)
        area = 0.5 * np.sum(x1 * d2 - x2 * d1, axis=1)
        vals.append(np.cos(B * area) / (2 * math.pi * t))
    return estimate(np.concatenate(vals))
