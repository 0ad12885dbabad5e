"""Morse complex from steepest-descent flows, and the tunnelling coefficients.

For critical points a (index p) and b (index p+1) the instanton coefficient of
d_u between the localised low-lying states is, to leading order in 1/u,

    c_ab = (u / pi)^{1/2} exp(-u (h(b) - h(a))) sum_Gamma (-1)^{sigma_Gamma}

for Morse functions whose Hessian eigenvalues at a and b are +-1.  The sum
runs over flow lines of -grad h from b down to a and sigma_Gamma is the
orientation sign.  After rescaling psi_c -> exp(-u h(c)) psi_c and
d_u -> (pi / u)^{1/2} d_u the coefficients are the integers
sum_Gamma (-1)^sigma, whose cohomology gives the Betti numbers.

Orientation convention: each critical point carries the orientation of its
descending eigenspace (eigenvectors for negative Hessian eigenvalues, each
with first nonzero entry positive, in increasing eigenvalue order).  A flow
from b to a counts +1 when (outgoing direction at b) followed by the
descending orientation of a, transported back along the flow, is positively
oriented in the descending space of b.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from .susy_flat import CubicalGrid, MorseError, MorseFunctionSpec, deformed_d, default_grid, witten_hamiltonian

TWO_PI = 2 * np.pi


class DegenerateCriticalPointError(MorseError):
    pass


@dataclass(frozen=True)
class CriticalPoint:
    x: np.ndarray
    value: float
    index: int
    eigenvalues: np.ndarray
    descending: np.ndarray  # (m, index) oriented basis of the descending space

    def orientation_form(self) -> dict[tuple[int, ...], float]:
        """Components of e_1 ^ ... ^ e_p on the coordinate basis dx^mu."""
        p = self.index
        m = len(self.x)
        if p == 0:
            return {(): 1.0}
        return {mu: float(np.linalg.det(self.descending[list(mu), :])) for mu in itertools.combinations(range(m), p)}


def _canon_vec(v):
    k = np.flatnonzero(np.abs(v) > 1e-10)[0]
    return v if v[k] > 0 else -v


def _classify(spec: MorseFunctionSpec, x: np.ndarray, degeneracy_tol: float) -> CriticalPoint:
    H = spec.hess(x[None, :])[0]
    w, V = np.linalg.eigh(H)
    if np.min(np.abs(w)) < degeneracy_tol:
        raise DegenerateCriticalPointError(f"degenerate critical point at {x} (Hessian eigenvalues {w})")
    neg = np.flatnonzero(w < 0)
    E = np.stack([_canon_vec(V[:, j]) for j in neg], axis=1) if len(neg) else np.zeros((len(x), 0))
    return CriticalPoint(x, float(spec.h(x[None, :])[0]), len(neg), w, E)


def _delta(spec, a, b):
    d = np.asarray(b) - np.asarray(a)
    if spec.domain == "torus":
        d = (d + np.pi) % TWO_PI - np.pi
    return d


def find_critical_points(spec: MorseFunctionSpec, seeds_per_axis: int = 24, tol: float = 1e-8,
                         bound: float | None = None, degeneracy_tol: float = 1e-6) -> list[CriticalPoint]:
    """Newton solves of grad h = 0 from a lattice of seeds, deduplicated.

    Raises DegenerateCriticalPointError when a Hessian is (nearly) singular.
    """
    m = spec.m
    if spec.domain == "torus":
        axis = (np.arange(seeds_per_axis) + 0.37) * TWO_PI / seeds_per_axis
    else:
        L = bound if bound is not None else 6.0 / math.sqrt(spec.min_curvature)
        axis = np.linspace(-L, L, seeds_per_axis)
    found: list[np.ndarray] = []
    for s in itertools.product(axis, repeat=m):
        s = np.array(s, float)
        sol = sopt.root(lambda x: spec.grad(x[None, :])[0], s, jac=lambda x: spec.hess(x[None, :])[0],
                        method="hybr", tol=1e-14)
        x = sol.x
        if not np.all(np.isfinite(x)) or np.max(np.abs(spec.grad(x[None, :])[0])) > tol:
            continue
        if spec.domain == "torus":
            x = np.mod(x, TWO_PI)
            x[np.abs(x - TWO_PI) < 1e-9] = 0.0
        elif np.max(np.abs(x)) > 10 * (bound or 6.0 / math.sqrt(spec.min_curvature)):
            continue
        if all(np.max(np.abs(_delta(spec, x, y))) > 1e-6 for y in found):
            found.append(x)
    pts = [_classify(spec, x, degeneracy_tol) for x in found]
    pts.sort(key=lambda c: (c.index, c.value, tuple(np.round(c.x, 9))))
    return pts


# ---------------------------------------------------------------------------
# flows

@dataclass(frozen=True)
class Flow:
    start: int  # index into the critical point list (upper point b)
    end: int  # lower point a
    sign: int
    shift: tuple  # lattice shift of the end point (torus)
    direction: np.ndarray  # outgoing unit direction at b
    path: np.ndarray


def _descend(spec, crits, x0, ball, max_len=60.0, max_steps=200000):
    """Normalised steepest descent from x0 (batch, m) until within `ball` of a critical point.

    Returns (end index or -1, lifted end position, arrival direction, sampled paths).
    """
    x = np.array(x0, float)
    B, m = x.shape
    cx = np.stack([c.x for c in crits])
    done = np.zeros(B, bool)
    end = np.full(B, -1)
    arrive = np.zeros((B, m))
    length = np.zeros(B)
    paths = [x.copy()]

    def f(y):
        g = -spec.grad(y)
        return g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)

    for it in range(max_steps):
        act = ~done
        if not act.any():
            break
        y = x[act]
        d = y[:, None, :] - cx[None, :, :]
        if spec.domain == "torus":
            d = (d + np.pi) % TWO_PI - np.pi
        dist = np.linalg.norm(d, axis=2)
        nearest = dist.min(axis=1)
        step = np.clip(0.25 * nearest, 1e-4, 0.02)
        k1 = f(y)
        k2 = f(y + 0.5 * step[:, None] * k1)
        k3 = f(y + 0.5 * step[:, None] * k2)
        k4 = f(y + step[:, None] * k3)
        y_new = y + step[:, None] / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x[act] = y_new
        length[act] += step
        d = y_new[:, None, :] - cx[None, :, :]
        if spec.domain == "torus":
            d = (d + np.pi) % TWO_PI - np.pi
        dist = np.linalg.norm(d, axis=2)
        hit = dist.min(axis=1) < ball
        idx = np.flatnonzero(act)
        newly = idx[hit]
        end[newly] = dist[hit].argmin(axis=1)
        arrive[newly] = k4[hit]
        done[newly] = True
        over = idx[length[idx] > max_len]
        done[over] = True
        if it % 50 == 0:
            paths.append(x.copy())
    paths.append(x.copy())
    return end, x, arrive, np.stack(paths, axis=1)


def _lattice_shift(spec, x_lift, c):
    if spec.domain != "torus":
        return ()
    return tuple(int(v) for v in np.round((x_lift - c.x) / TWO_PI))


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def steepest_descent_flows(spec: MorseFunctionSpec, crits: list[CriticalPoint] | None = None,
                           ball: float = 1e-3, n_angles: int = 256) -> list[Flow]:
    """All isolated flows of -grad h between critical points whose indices differ by one.

    Supported for descending dimension 1 (any m) and 2 (m = 2).
    """
    crits = crits if crits is not None else find_critical_points(spec)
    flows: list[Flow] = []
    r0 = 10 * ball
    for ib, b in enumerate(crits):
        k = b.index
        if k == 0:
            continue
        if k == 1:
            e = b.descending[:, 0]
            dirs = np.stack([e, -e])
            end, xl, arrive, paths = _descend(spec, crits, b.x + r0 * dirs, ball)
            for j in range(2):
                if end[j] < 0 or crits[end[j]].index != 0:
                    continue
                flows.append(Flow(ib, int(end[j]), 1 if j == 0 else -1,
                                  _lattice_shift(spec, xl[j], crits[end[j]]), dirs[j], paths[j]))
            continue
        if k == 2 and spec.m == 2:
            flows.extend(_flows_from_2d_max(spec, crits, ib, ball, r0, n_angles))
            continue
        raise NotImplementedError("flows are implemented for descending dimension 1, and 2 in the plane")
    return flows


def _flows_from_2d_max(spec, crits, ib, ball, r0, n_angles):
    b = crits[ib]
    e1, e2 = b.descending[:, 0], b.descending[:, 1]
    o_b = np.sign(np.linalg.det(b.descending))

    def shoot(phi):
        phi = np.atleast_1d(phi)
        dirs = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        end, xl, arrive, paths = _descend(spec, crits, b.x + r0 * dirs, ball)
        labels = [(int(e), _lattice_shift(spec, xl[i], crits[e])) if e >= 0 else (-1, ()) for i, e in enumerate(end)]
        return labels, xl, arrive, dirs, paths

    phis = 0.1234 + TWO_PI * np.arange(n_angles) / n_angles
    labels, *_ = shoot(phis)
    out = []
    for i in range(n_angles):
        lo, hi = phis[i], phis[i] + TWO_PI / n_angles
        la, lb = labels[i], labels[(i + 1) % n_angles]
        if la == lb:
            continue
        # bisect towards the separatrix, which ends at an index-1 point
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lm, *_ = shoot(mid)
            if lm[0][0] >= 0 and crits[lm[0][0]].index == 1:
                break
            if lm[0] == la:
                lo = mid
            else:
                hi = mid
        lm, xl, arrive, dirs, paths = shoot(mid)
        ia = lm[0][0]
        if ia < 0 or crits[ia].index != 1:
            raise MorseError(f"separatrix search from critical point {ib} did not reach an index-1 point")
        a = crits[ia]
        s_a = np.sign(_cross(arrive[0], a.descending[:, 0]))
        # the flow preserves which side of Gamma a transverse vector lies on
        sign = int(s_a * o_b)
        out.append(Flow(ib, ia, sign, lm[0][1], dirs[0], paths[0]))
    # one separatrix per label change; deduplicate identical flows
    uniq = {}
    for f in out:
        key = (f.end, f.shift, round(float(np.arctan2(f.direction[1], f.direction[0])), 4))
        uniq.setdefault(key, f)
    return list(uniq.values())


# ---------------------------------------------------------------------------
# complex and Betti numbers

@dataclass
class MorseComplex:
    crits: list[CriticalPoint]
    flows: list[Flow]

    def by_index(self, p: int) -> list[int]:
        return [i for i, c in enumerate(self.crits) if c.index == p]

    def coboundary(self, p: int) -> np.ndarray:
        """Integer matrix D[b, a] = sum of flow signs, a of index p, b of index p+1."""
        A, B = self.by_index(p), self.by_index(p + 1)
        D = np.zeros((len(B), len(A)), dtype=int)
        for f in self.flows:
            if f.start in B and f.end in A:
                D[B.index(f.start), A.index(f.end)] += f.sign
        return D

    @property
    def m(self) -> int:
        return len(self.crits[0].x)

    def counts(self) -> list[int]:
        return [len(self.by_index(p)) for p in range(self.m + 1)]


def morse_complex(spec: MorseFunctionSpec, **kw) -> MorseComplex:
    crits = find_critical_points(spec, **{k: v for k, v in kw.items() if k in ("seeds_per_axis", "tol", "bound")})
    flows = steepest_descent_flows(spec, crits, **{k: v for k, v in kw.items() if k in ("ball", "n_angles")})
    return MorseComplex(crits, flows)


def betti_numbers(cx: MorseComplex) -> list[int]:
    """Ranks of the cohomology of the integer coboundary (over the rationals)."""
    m = cx.m
    counts = cx.counts()
    ranks = []
    for p in range(m):
        D = cx.coboundary(p)
        ranks.append(int(np.linalg.matrix_rank(D)) if D.size else 0)
    return [counts[p] - (ranks[p] if p < m else 0) - (ranks[p - 1] if p > 0 else 0) for p in range(m + 1)]


def tunneling_matrix(spec: MorseFunctionSpec, cx: MorseComplex, p: int) -> np.ndarray:
    """Closed-form c_ab for a of index p, b of index p+1 (rows b, columns a)."""
    A, B = cx.by_index(p), cx.by_index(p + 1)
    D = cx.coboundary(p).astype(float)
    ha = np.array([cx.crits[i].value for i in A])
    hb = np.array([cx.crits[i].value for i in B])
    return math.sqrt(spec.u / math.pi) * np.exp(-spec.u * (hb[:, None] - ha[None, :])) * D


def rescaled_coboundary(spec: MorseFunctionSpec, cx: MorseComplex, p: int) -> np.ndarray:
    """(pi/u)^{1/2} exp(u h(b)) c_ab exp(-u h(a)): the integer flow counts."""
    A, B = cx.by_index(p), cx.by_index(p + 1)
    ha = np.array([cx.crits[i].value for i in A])
    hb = np.array([cx.crits[i].value for i in B])
    c = tunneling_matrix(spec, cx, p)
    return math.sqrt(math.pi / spec.u) * np.exp(spec.u * (hb[:, None] - ha[None, :])) * c


def flow_table_csv(spec: MorseFunctionSpec, cx: MorseComplex) -> str:
    """CSV adjacency table: one row per pair (a, b) with index(b) = index(a) + 1."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["a", "b", "index_a", "index_b", "x_a", "x_b", "h_a", "h_b", "n_flows", "signed_count", "c_ab"])
    for p in range(cx.m):
        A, B = cx.by_index(p), cx.by_index(p + 1)
        C = tunneling_matrix(spec, cx, p)
        for j, ib in enumerate(B):
            for i, ia in enumerate(A):
                fl = [f for f in cx.flows if f.start == ib and f.end == ia]
                a, b = cx.crits[ia], cx.crits[ib]
                w.writerow([ia, ib, a.index, b.index, " ".join(f"{v:.10g}" for v in a.x),
                            " ".join(f"{v:.10g}" for v in b.x), f"{a.value:.12g}", f"{b.value:.12g}",
                            len(fl), sum(f.sign for f in fl), f"{C[j, i]:.12g}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# grid comparison

@dataclass
class LowLyingStates:
    p: int
    vectors: np.ndarray  # (cells, k) orthonormal, one per critical point
    eigenvalues: np.ndarray
    gap_ratio: float
    crit_ids: list[int]


def _bump(spec, grid: CubicalGrid, c: CriticalPoint, width: float) -> np.ndarray:
    parts = []
    form = c.orientation_form()
    for mu in grid.cell_types(c.index):
        x = grid.cell_centers(mu)
        d = _delta(spec, c.x[None, :], x)
        parts.append(form.get(mu, 0.0) * np.exp(-np.sum(d * d, axis=1) / (2 * width ** 2)))
    return np.concatenate(parts)


def low_lying_states(spec: MorseFunctionSpec, cx: MorseComplex, p: int, grid: CubicalGrid | None = None,
                     extra: int = 2) -> LowLyingStates:
    """Localised orthonormal basis of the low-lying p-form eigenspace.

    The eigenspace dimension is the number of index-p critical points.  Bumps
    at each critical point, oriented by its descending form, are projected onto
    the eigenspace and orthonormalised symmetrically.
    """
    import scipy.sparse.linalg as spla
    grid = grid or default_grid(spec)
    H = witten_hamiltonian(spec, grid).blocks[p]
    ids = cx.by_index(p)
    k = len(ids)
    if H.shape[0] <= 3000:
        w, V = np.linalg.eigh(H.toarray())
        w, V = w[:k + extra], V[:, :k + extra]
    else:
        w, V = spla.eigsh(H.tocsc(), k=k + extra, sigma=-1e-6, which="LM")
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    gap = float(w[k] / max(w[k - 1], 1e-300)) if k > 0 else float("inf")
    U = V[:, :k]
    width = 1.0 / math.sqrt(spec.u)
    G = np.stack([_bump(spec, grid, cx.crits[i], width) for i in ids], axis=1)
    P = U @ (U.T @ G)
    S = P.T @ P
    ws, Vs = np.linalg.eigh(S)
    Q = P @ (Vs @ np.diag(ws ** -0.5) @ Vs.T)
    return LowLyingStates(p, Q, w, gap, ids)


def grid_tunneling(spec: MorseFunctionSpec, cx: MorseComplex, p: int, grid: CubicalGrid | None = None):
    """<psi_b, d_u psi_a> between localised low-lying states on the grid.

    Returns (matrix rows b / columns a, gap ratios for degrees p and p+1).
    """
    grid = grid or default_grid(spec)
    la = low_lying_states(spec, cx, p, grid)
    lb = low_lying_states(spec, cx, p + 1, grid)
    du = deformed_d(spec, grid)[p]
    return lb.vectors.T @ (du @ la.vectors), (la.gap_ratio, lb.gap_ratio)
