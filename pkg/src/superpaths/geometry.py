"""Brownian motion on the frame bundle of a surface, forms, and index densities.

Forms on a surface M are supersmooth functions sum_mu f_mu(x) xi^mu with
xi^i standing for dx^i.  The operator simulated here is

    L = 1/2 (d delta + delta d) = -1/2 (B - Rc),

B the Bochner Laplacian and Rc the Weitzenbock curvature term

    Rc = Ric_i^j xi^i d/dxi^j + 1/2 R_ik^jl xi^i xi^k d/dxi^j d/dxi^l,

with R_ijkl = K (g_ik g_jl - g_il g_jk) on a surface of Gauss curvature K.
With the Clifford operators psi^i = xi^i - 1/2 g^ij d/dxi^j the operator
D = psi^i (d_i - Gamma^k_ij xi^j d/dxi^k) squares to L, and -2 D^2 = B - Rc.

Paths: x and the orthonormal frame e (e[i, a] = e^i_a) solve the Stratonovich
system dx = e o db, de^i_a = -Gamma^i_kl e^l_a o dx^k by Heun steps.  Odd
paths are the flat fermionic slots rotated by e, which in matrix form means:
convert forms to frame components with the compound matrix of e, apply the
time-ordered product of exp(-1/2 Rc ds) (Rc in frame components, exact
2^m x 2^m matrices), and convert back at the start point.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy as sy

from . import rng as _rng
from .grassmann import GrassmannElement, GrassmannError, SuperPolynomial, d_matrix, gr_mul, mask_sign, xi_matrix
from .super_wiener import Estimate, estimate


class AtlasError(RuntimeError):
    """A path left every chart of the atlas."""


class FrameDegeneracyError(RuntimeError):
    """The frame matrix became numerically singular."""


# ---------------------------------------------------------------------------
# charts and surfaces

@dataclass(frozen=True)
class SurfaceChart:
    """Coordinate chart of a surface with analytic geometry.

    metric, christoffel and riemann map points (B, 2) to (B, 2, 2),
    (B, 2, 2, 2) with Gamma[b, i, j, k] = Gamma^i_jk, and (B, 2, 2, 2, 2) with
    all indices down.  ``symbolic_metric(x1, x2)`` returns a sympy Matrix used
    by the exact checks.
    """

    chart_id: int
    metric: Callable
    christoffel: Callable
    riemann: Callable
    valid: Callable
    symbolic_metric: Callable
    to_ambient: Callable | None = None
    ambient_jacobian: Callable | None = None
    from_ambient: Callable | None = None

    def inverse_metric(self, x):
        return np.linalg.inv(self.metric(x))

    def ricci(self, x):
        """Ric_jl = g^ik R_ijkl."""
        return np.einsum("bik,bijkl->bjl", self.inverse_metric(x), self.riemann(x))

    def christoffel_defect(self, x, eps: float = 1e-5) -> float:
        """Max mismatch between christoffel() and central differences of the metric."""
        x = np.atleast_2d(x)
        dg = np.zeros((len(x), 2, 2, 2))  # dg[b, k, i, j] = d_k g_ij
        for k in range(2):
            h = np.zeros(2)
            h[k] = eps
            dg[:, k] = (self.metric(x + h) - self.metric(x - h)) / (2 * eps)
        gi = self.inverse_metric(x)
        # low[b, l, j, k] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
        low = 0.5 * (np.einsum("bjlk->bljk", dg) + np.einsum("bklj->bljk", dg) - dg)
        G = np.einsum("bil,bljk->bijk", gi, low)
        return float(np.max(np.abs(G - self.christoffel(x))))

    def curvature_symmetry_defect(self, x) -> float:
        R = self.riemann(np.atleast_2d(x))
        anti1 = R + np.swapaxes(R, 1, 2)
        anti2 = R + np.swapaxes(R, 3, 4)
        pair = R - np.transpose(R, (0, 3, 4, 1, 2))
        bianchi = R + np.transpose(R, (0, 1, 3, 4, 2)) + np.transpose(R, (0, 1, 4, 2, 3))
        return float(max(np.max(np.abs(a)) for a in (anti1, anti2, pair, bianchi)))


def _const_K_riemann(metric, K):
    def riemann(x):
        g = metric(x)
        return K * (np.einsum("bik,bjl->bijkl", g, g) - np.einsum("bil,bjk->bijkl", g, g))
    return riemann


def _flat_chart() -> SurfaceChart:
    def metric(x):
        return np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()

    return SurfaceChart(
        0, metric,
        lambda x: np.zeros((len(x), 2, 2, 2)),
        lambda x: np.zeros((len(x), 2, 2, 2, 2)),
        lambda x: np.ones(len(x), bool),
        lambda a, b: sy.eye(2),
    )


def _stereo_chart(cid: int, radius: float) -> SurfaceChart:
    """Stereographic chart of the unit sphere; chart 1 is orientation-matched to chart 0."""
    s = 1.0 if cid == 0 else -1.0  # sign of the second coordinate in the ambient map

    def lam(x):
        return 2.0 / (1.0 + np.sum(x * x, axis=-1))

    def metric(x):
        l2 = lam(x) ** 2
        return l2[:, None, None] * np.eye(2)

    def christoffel(x):
        # conformal metric e^{2 phi} delta, d_i phi = -lam x_i
        dphi = -lam(x)[:, None] * x
        G = np.zeros((len(x), 2, 2, 2))
        I = np.eye(2)
        G += np.einsum("ij,bk->bijk", I, dphi)
        G += np.einsum("ik,bj->bijk", I, dphi)
        G -= np.einsum("jk,bi->bijk", I, dphi)
        return G

    def to_ambient(x):
        r2 = np.sum(x * x, axis=-1)
        X = np.stack([2 * x[:, 0], s * 2 * x[:, 1], s * (r2 - 1)], axis=-1)
        return X / (1 + r2)[:, None]

    def ambient_jacobian(x):
        r2 = np.sum(x * x, axis=-1)
        den = (1 + r2) ** 2
        x1, x2 = x[:, 0], x[:, 1]
        J = np.empty((len(x), 3, 2))
        J[:, 0, 0] = 2 * (1 + r2 - 2 * x1 * x1) / den
        J[:, 0, 1] = -4 * x1 * x2 / den
        J[:, 1, 0] = s * (-4 * x1 * x2) / den
        J[:, 1, 1] = s * 2 * (1 + r2 - 2 * x2 * x2) / den
        J[:, 2, 0] = s * 4 * x1 / den
        J[:, 2, 1] = s * 4 * x2 / den
        return J

    def from_ambient(X):
        return np.stack([X[:, 0], s * X[:, 1]], axis=-1) / (1 - s * X[:, 2])[:, None]

    def sym_metric(a, b):
        l = 2 / (1 + a ** 2 + b ** 2)
        return sy.Matrix([[l ** 2, 0], [0, l ** 2]])

    return SurfaceChart(cid, metric, christoffel, _const_K_riemann(metric, 1.0),
                        lambda x: np.sum(x * x, axis=-1) < radius ** 2, sym_metric,
                        to_ambient, ambient_jacobian, from_ambient)


def _inversion(x):
    """Transition between the two stereographic charts (its own inverse)."""
    r2 = np.sum(x * x, axis=-1)
    y = np.stack([x[:, 0], -x[:, 1]], axis=-1) / r2[:, None]
    x1, x2 = x[:, 0], x[:, 1]
    J = np.empty((len(x), 2, 2))
    J[:, 0, 0] = (x2 * x2 - x1 * x1) / r2 ** 2
    J[:, 0, 1] = -2 * x1 * x2 / r2 ** 2
    J[:, 1, 0] = 2 * x1 * x2 / r2 ** 2
    J[:, 1, 1] = (x2 * x2 - x1 * x1) / r2 ** 2
    return y, J


@dataclass(frozen=True)
class Surface:
    name: str
    charts: tuple
    volume: float
    euler: int
    periodic: bool = False
    switch_radius: float = 1.5

    def normalise(self, cid: np.ndarray, x: np.ndarray, e: np.ndarray | None = None):
        """Wrap periodic coordinates or switch charts past the switch radius."""
        if self.periodic:
            return cid, x, e, np.zeros(len(x), bool)
        sw = np.sum(x * x, axis=-1) > self.switch_radius ** 2
        if sw.any():
            y, J = _inversion(x[sw])
            x = x.copy()
            x[sw] = y
            cid = cid.copy()
            cid[sw] = 1 - cid[sw]
            if e is not None:
                e = e.copy()
                e[sw] = np.einsum("bij,bja->bia", J, e[sw])
        for c in range(len(self.charts)):
            sel = cid == c
            if sel.any() and not np.all(self.charts[c].valid(x[sel])):
                raise AtlasError(f"path left the atlas of {self.name}")
        return cid, x, e, sw

    def sample_volume(self, seed: int, b: int, size: int, stream: str = "volume"):
        """Start points distributed by the Riemannian volume: (chart ids, coordinates)."""
        if self.periodic:
            u = _rng.uniform_block(seed, b, size, (2,), stream)
            return np.zeros(size, int), 2 * np.pi * u
        z = _rng.normal_block(seed, b, size, (3,), stream)
        X = z / np.linalg.norm(z, axis=1, keepdims=True)
        cid = (X[:, 2] > 0).astype(int)
        x = np.empty((size, 2))
        for c in (0, 1):
            sel = cid == c
            x[sel] = self.charts[c].from_ambient(X[sel])
        return cid, x

    def chart_eval(self, name: str, cid: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Evaluate a chart method per point; all charts return the same shapes."""
        out = None
        for c in range(len(self.charts)):
            sel = cid == c
            if not sel.any():
                continue
            v = getattr(self.charts[c], name)(x[sel])
            if out is None:
                out = np.empty((len(x),) + v.shape[1:], v.dtype)
            out[sel] = v
        return out

    def orthonormal_frame(self, cid, x):
        """g^{-1/2}: an orthonormal frame at each point."""
        g = self.chart_eval("metric", cid, x)
        w, V = np.linalg.eigh(g)
        return np.einsum("bik,bk,bjk->bij", V, w ** -0.5, V)

    def scalar_heat_trace(self, t: float) -> float:
        """p_t(x, x) for the scalar heat kernel of 1/2 Laplacian (homogeneous surfaces)."""
        if self.periodic:
            w = np.arange(-6, 7)
            return float(np.sum(np.exp(-(2 * np.pi * w) ** 2 / (2 * t))) ** 2 / (2 * np.pi * t))
        l = np.arange(0, 400)
        return float(np.sum((2 * l + 1) * np.exp(-l * (l + 1) * t / 2)) / (4 * np.pi))


def flat_torus() -> Surface:
    return Surface("torus", (_flat_chart(),), (2 * np.pi) ** 2, 0, periodic=True)


def round_sphere(switch_radius: float = 1.5) -> Surface:
    if not 1.0 < switch_radius < 3.0:
        raise ValueError("switch radius must lie in (1, 3)")
    r = switch_radius * 1.3
    return Surface("sphere", (_stereo_chart(0, r), _stereo_chart(1, r)), 4 * np.pi, 2,
                   switch_radius=switch_radius)


SURFACES = {"torus": flat_torus, "sphere": round_sphere}


def surface(name: str) -> Surface:
    if name not in SURFACES:
        raise ValueError(f"unknown surface {name!r}; choose from {sorted(SURFACES)}")
    return SURFACES[name]()


# ---------------------------------------------------------------------------
# frame SDE

@dataclass
class FramePoint:
    """Batch of points of the orthonormal frame bundle."""

    chart: np.ndarray
    x: np.ndarray
    e: np.ndarray

    def orthonormality_defect(self, surf: Surface) -> np.ndarray:
        gi = np.linalg.inv(surf.chart_eval("metric", self.chart, self.x))
        return np.max(np.abs(gi - np.einsum("bia,bja->bij", self.e, self.e)), axis=(1, 2))


def _frame_rhs(surf, cid, x, e, dx):
    G = surf.chart_eval("christoffel", cid, x)
    return -(np.einsum("bikl,bk->bil", G, dx) @ e)


def frame_sde_step(p: FramePoint, surf: Surface, db: np.ndarray, dt: float = 0.0,
                   drift: Callable | None = None, drift_next: Callable | None = None,
                   scheme: str = "heun", project: bool = False) -> FramePoint:
    """One Stratonovich step of dx = e o db + v dt, de = -Gamma(e, o dx).

    ``drift(cid, x)`` returns v in chart coordinates; ``drift_next`` is used
    at the predicted point (time-dependent drifts).  scheme="euler" omits
    the corrector; project=True maps the frame back onto the orthonormal
    frames after the step.
    """
    cid, x, e = p.chart, p.x, p.e
    v0 = drift(cid, x) * dt if drift is not None else 0.0
    dx0 = np.einsum("bia,ba->bi", e, db) + v0
    de0 = _frame_rhs(surf, cid, x, e, dx0)
    if scheme == "euler":
        x1, e1 = x + dx0, e + de0
    elif scheme == "heun":
        xp, ep = x + dx0, e + de0
        dn = drift_next or drift
        v1 = dn(cid, xp) * dt if dn is not None else 0.0
        dx1 = np.einsum("bia,ba->bi", ep, db) + v1
        de1 = _frame_rhs(surf, cid, xp, ep, dx1)
        x1, e1 = x + 0.5 * (dx0 + dx1), e + 0.5 * (de0 + de1)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    cid1, x1, e1, _ = surf.normalise(cid, x1, e1)
    if np.any(np.linalg.cond(e1) > 1e6):
        raise FrameDegeneracyError("frame condition number exceeded 1e6")
    if project:
        e1 = project_frame(surf, cid1, x1, e1)
    return FramePoint(cid1, x1, e1)


def project_frame(surf: Surface, cid, x, e):
    """Nearest g-orthonormal frame: e (e^T g e)^{-1/2} (polar factor)."""
    g = surf.chart_eval("metric", cid, x)
    S = np.swapaxes(e, 1, 2) @ g @ e
    w, V = np.linalg.eigh(S)
    return e @ ((V * w[:, None, :] ** -0.5) @ np.swapaxes(V, 1, 2))


def frame_paths(surf: Surface, start: FramePoint, T: float, steps: int, seed: int, block: int = 0,
                stream: str = "frame", scheme: str = "heun") -> FramePoint:
    """Run a batch of frame paths to time T; returns the end points.

    Paths lo..hi of the batch draw from random block ``block + lo // BLOCK``.
    """
    dt = T / steps
    ends = []
    for b, lo, hi in _rng.blocks(len(start.x)):
        db = _rng.normal_block(seed, block + b, hi - lo, (steps, 2), stream) * math.sqrt(dt)
        p = FramePoint(start.chart[lo:hi], start.x[lo:hi], start.e[lo:hi])
        for r in range(steps):
            p = frame_sde_step(p, surf, db[:, r], dt, scheme=scheme)
        ends.append(p)
    return FramePoint(*(np.concatenate([getattr(q, k) for q in ends]) for k in ("chart", "x", "e")))


# ---------------------------------------------------------------------------
# fermionic fibre: compound matrices and curvature operators

def compound(A: np.ndarray, m: int) -> np.ndarray:
    """C[mu, nu] = det A[rows mu, cols nu] on the 2^m mask basis (batched)."""
    B = A.shape[0]
    C = np.zeros((B, 1 << m, 1 << m))
    C[:, 0, 0] = 1.0
    for p in range(1, m + 1):
        for mu in itertools.combinations(range(m), p):
            mm = sum(1 << i for i in mu)
            for nu in itertools.combinations(range(m), p):
                nm = sum(1 << i for i in nu)
                C[:, mm, nm] = np.linalg.det(A[:, list(mu)][:, :, list(nu)])
    return C


_FERMION_CACHE: dict = {}


def _fermion_tensors(m: int):
    if m not in _FERMION_CACHE:
        X = [xi_matrix(a + 1, m) for a in range(m)]
        D = [d_matrix(a + 1, m) for a in range(m)]
        XD = np.array([[X[a] @ D[b] for b in range(m)] for a in range(m)])
        XXDD = np.array([[[[X[a] @ X[c] @ D[b] @ D[d] for d in range(m)] for b in range(m)]
                           for c in range(m)] for a in range(m)])
        _FERMION_CACHE[m] = (XD, XXDD)
    return _FERMION_CACHE[m]


def curvature_operator(ric: np.ndarray, riem: np.ndarray) -> np.ndarray:
    """Rc = Ric_ab xi^a d_b + 1/2 R_acbd xi^a xi^c d_b d_d in an orthonormal frame (batched)."""
    m = ric.shape[-1]
    XD, XXDD = _fermion_tensors(m)
    n = ric.shape[0]
    P = XD.shape[-1]
    out = ric.reshape(n, -1) @ XD.reshape(m * m, P * P)
    out += 0.5 * (riem.reshape(n, -1) @ XXDD.reshape(m ** 4, P * P))
    return out.reshape(n, P, P)


def frame_curvature(surf: Surface, p: FramePoint) -> np.ndarray:
    """Rc in frame components at each point, shape (B, 2^m, 2^m)."""
    R = surf.chart_eval("riemann", p.chart, p.x)
    e = p.e
    Rf = np.einsum("bijkl,bia->bajkl", R, e)
    Rf = np.einsum("bajkl,bjc->backl", Rf, e)
    Rf = np.einsum("backl,bkd->bacdl", Rf, e)
    Rf = np.einsum("bacdl,blf->bacdf", Rf, e)
    ric = np.einsum("bcacd->bad", Rf)
    return curvature_operator(ric, Rf)


def _sym_expm(A: np.ndarray, s: float) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (A + np.swapaxes(A, 1, 2)))
    return (V * np.exp(s * w)[:, None, :]) @ np.swapaxes(V, 1, 2)


# ---------------------------------------------------------------------------
# Feynman-Kac for the Laplace-Beltrami operator on forms

@dataclass(frozen=True)
class SurfaceForm:
    """Form given by its coordinate components in every chart.

    components(cid, x) -> {mask: values (B,)} for points x (B, 2) of chart cid.
    """

    components: Callable
    name: str = "form"

    def vector(self, surf: Surface, cid: np.ndarray, x: np.ndarray) -> np.ndarray:
        out = np.zeros((len(x), 4), dtype=complex)
        for c in range(len(surf.charts)):
            sel = cid == c
            if not sel.any():
                continue
            for mk, v in self.components(c, x[sel]).items():
                out[sel, mk] = v
        return out


def ambient_form(surf: Surface, scalar: Callable | None = None, covector: Callable | None = None,
                 area: Callable | None = None, name: str = "form") -> SurfaceForm:
    """Form from ambient data: f, the 1-form X -> w(X).dX, and a (X) times the area form.

    On the torus the ambient point is the coordinate pair itself.
    """
    def comps(c, x):
        ch = surf.charts[c]
        if surf.periodic:
            X, J = x, np.broadcast_to(np.eye(2), (len(x), 2, 2))
            sq = np.ones(len(x))
        else:
            X, J = ch.to_ambient(x), ch.ambient_jacobian(x)
            sq = np.sqrt(np.linalg.det(ch.metric(x)))
        out = {}
        if scalar is not None:
            out[0] = scalar(X)
        if covector is not None:
            w = covector(X)
            out[1] = np.einsum("bk,bk->b", w, J[:, :, 0])
            out[2] = np.einsum("bk,bk->b", w, J[:, :, 1])
        if area is not None:
            out[3] = area(X) * sq
        return out

    return SurfaceForm(comps, name)


def fk_laplace_beltrami(surf: Surface, g0: SurfaceForm, t: float, chart: int, x0, n_paths: int, steps: int,
                        seed: int, tolerance: float | None = None, scheme: str = "heun") -> dict:
    """Estimate the coordinate components of exp(-L t) g0 at (chart, x0).

    Returns {"components": {mask: Estimate}, "flagged": bool}; flagged is set
    when a requested stderr tolerance is not met.
    """
    if t <= 0 or t > 2:
        raise ValueError("need 0 < t <= 2")
    dt = t / steps
    x0 = np.asarray(x0, float)
    samples = []
    for b, lo, hi in _rng.blocks(n_paths):
        B = hi - lo
        cid = np.full(B, chart)
        x = np.broadcast_to(x0, (B, 2)).copy()
        e0 = surf.orthonormal_frame(cid, x)
        p = FramePoint(cid, x, e0.copy())
        Q = np.broadcast_to(np.eye(4), (B, 4, 4)).copy()
        db = _rng.normal_block(seed, b, B, (steps, 2), "fk-frame") * math.sqrt(dt)
        for r in range(steps):
            Rc = frame_curvature(surf, p)
            Q = Q @ _sym_expm(Rc, -0.5 * dt)
            p = frame_sde_step(p, surf, db[:, r], dt, scheme=scheme, project=True)
        a = np.einsum("bqp,bq->bp", compound(p.e, 2), g0.vector(surf, p.chart, p.x))
        a = np.einsum("bpq,bq->bp", Q, a)
        out = np.einsum("bqp,bq->bp", compound(np.linalg.inv(e0), 2), a)
        samples.append(out)
    S = np.concatenate(samples)
    comps = {}
    for mk in range(4):
        col = S[:, mk]
        if np.any(np.abs(col) > 0):
            re = estimate(col.real)
            if np.any(np.abs(col.imag) > 0):
                im = estimate(col.imag)
                comps[mk] = Estimate(complex(re.value, im.value), math.hypot(re.stderr, im.stderr), re.n_paths)
            else:
                comps[mk] = re
    flagged = bool(tolerance is not None and any(e.stderr > tolerance for e in comps.values()))
    return {"components": comps, "flagged": flagged}


# ---------------------------------------------------------------------------
# bridges and the Euler characteristic

def _sphere_dlogp_dc(c: np.ndarray, dist: np.ndarray, tau: float, tau_switch: float = 0.02) -> np.ndarray:
    """d/d(cos d) of log p_tau for the unit sphere heat kernel of 1/2 Laplacian."""
    if tau >= tau_switch:
        L = int(math.ceil(math.sqrt(80.0 / tau))) + 8
        Pm1, P = np.zeros_like(c), np.ones_like(c)
        dPm1, dP = np.zeros_like(c), np.zeros_like(c)
        val = np.full_like(c, 1.0)
        der = np.zeros_like(c)
        for l in range(0, L):
            # advance to l+1: P_{l+1}, P'_{l+1} = P'_{l-1} + (2l+1) P_l
            Pn = ((2 * l + 1) * c * P - l * Pm1) / (l + 1)
            dPn = dPm1 + (2 * l + 1) * P
            w = (2 * l + 3) * math.exp(-(l + 1) * (l + 2) * tau / 2)
            val += w * Pn
            der += w * dPn
            Pm1, P, dPm1, dP = P, Pn, dP, dPn
        return der / val
    d = dist
    small = d < 1e-4
    ds = np.where(small, 1.0, d)
    sd = np.sin(ds)
    corr = np.where(small, 1.0 / 3.0 + d * d / 15.0, (1.0 / ds - 1.0 / np.tan(ds)) / sd)
    ratio = np.where(small, 1.0 + d * d / 6.0, ds / sd)
    return ratio / tau - 0.5 * corr


def _bridge_drift(surf: Surface, Y: np.ndarray, tau: float):
    """Drift g^{-1} grad log p_tau(., y) in chart coordinates; Y the target (ambient or lifted)."""
    if surf.periodic:
        def drift(cid, x):
            w = np.arange(-2, 3) * 2 * np.pi
            diff = x[:, None, None, :] - Y[:, None, None, :] - np.stack(np.meshgrid(w, w, indexing="ij"), -1)[None]
            q = -np.sum(diff * diff, axis=-1) / (2 * tau)
            q = q - q.max(axis=(1, 2), keepdims=True)
            wt = np.exp(q)
            return -np.einsum("bij,bijk->bk", wt, diff) / (tau * wt.sum(axis=(1, 2))[:, None])
        return drift

    def drift(cid, x):
        X = surf.chart_eval("to_ambient", cid, x)
        J = surf.chart_eval("ambient_jacobian", cid, x)
        c = np.clip(np.sum(X * Y, axis=1), -1.0, 1.0)
        dist = 2 * np.arcsin(np.clip(np.linalg.norm(X - Y, axis=1) / 2, 0, 1))
        dl = _sphere_dlogp_dc(c, dist, tau)
        grad = dl[:, None] * np.einsum("bk,bki->bi", Y, J)
        gi = np.linalg.inv(surf.chart_eval("metric", cid, x))
        return np.einsum("bij,bj->bi", gi, grad)
    return drift


def _target_in_chart(surf, cid, x, Y):
    if surf.periodic:
        w = np.round((x - Y) / (2 * np.pi))
        return Y + 2 * np.pi * w
    out = np.empty_like(x)
    for c in range(len(surf.charts)):
        sel = cid == c
        if sel.any():
            out[sel] = surf.charts[c].from_ambient(Y[sel])
    return out


def _graded_times(t: float, steps: int) -> np.ndarray:
    """Time grid graded towards the end point, where the bridge drift grows like 1/(t - s)."""
    return t * (1.0 - (1.0 - np.arange(steps + 1) / steps) ** 2)


def bridge_loops(surf: Surface, t: float, steps: int, seed: int, b: int, size: int, coarsen: int = 1):
    """Frame-bundle bridges from volume-distributed points back to themselves.

    Increments are drawn on the graded grid of ``steps`` steps; with coarsen=k
    the bridge runs on every k-th grid time using the summed increments, so
    runs at different k share their Brownian paths.
    Returns (start FramePoint, end FramePoint mapped to the start chart, Q) where
    Q is the time-ordered product of exp(-1/2 Rc ds) in frame components.
    """
    if steps % coarsen:
        raise ValueError("steps must be a multiple of coarsen")
    fine = np.diff(_graded_times(t, steps))
    db = _rng.normal_block(seed, b, size, (steps, 2), "bridge") * np.sqrt(fine)[None, :, None]
    steps //= coarsen
    db = db.reshape(size, steps, coarsen, 2).sum(axis=2)
    times = _graded_times(t, steps)
    dts = np.diff(times)
    cid, x = surf.sample_volume(seed, b, size, "bridge-start")
    e0 = surf.orthonormal_frame(cid, x)
    if surf.periodic:
        Y = x.copy()
    else:
        Y = surf.chart_eval("to_ambient", cid, x)
    p = FramePoint(cid.copy(), x.copy(), e0.copy())
    start = FramePoint(cid, x, e0)
    Q = np.broadcast_to(np.eye(4), (size, 4, 4)).copy()
    for r in range(steps - 1):
        Rc = frame_curvature(surf, p)
        Q = Q @ _sym_expm(Rc, -0.5 * dts[r])
        d0 = _bridge_drift(surf, Y, t - times[r])
        d1 = _bridge_drift(surf, Y, t - times[r + 1])
        p = frame_sde_step(p, surf, db[:, r], dts[r], drift=d0, drift_next=d1, project=True)
    Rc = frame_curvature(surf, p)
    Q = Q @ _sym_expm(Rc, -0.5 * dts[-1])
    # final step: land exactly on the start point, transporting the frame along the chord
    y = _target_in_chart(surf, p.chart, p.x, Y)
    dx = y - p.x
    de0 = _frame_rhs(surf, p.chart, p.x, p.e, dx)
    de1 = _frame_rhs(surf, p.chart, y, p.e + de0, dx)
    e_end = project_frame(surf, p.chart, y, p.e + 0.5 * (de0 + de1))
    cid_end, x_end = p.chart, y
    if not surf.periodic:
        back = cid_end != cid
        if back.any():
            _, J = _inversion(x_end[back])
            e_end = e_end.copy()
            e_end[back] = np.einsum("bij,bja->bia", J, e_end[back])
    return start, FramePoint(cid, x, e_end), Q


def loop_supertraces(surf: Surface, start: FramePoint, end: FramePoint, Q: np.ndarray, mode: str = "grade"):
    """Fibre supertrace of Q composed with the holonomy, per path."""
    R = np.linalg.solve(start.e, end.e)
    M = np.einsum("bpq,brq->bpr", Q, compound(R, 2))  # Q Lambda(R)^T
    if mode == "grade":
        gamma = np.array([1.0, -1.0, -1.0, 1.0])
        return np.einsum("p,bpp->b", gamma, M)
    if mode == "plain":
        return np.einsum("bpp->b", M)
    raise ValueError(f"unknown supertrace mode {mode!r}")


def _loop_estimate(surf: Surface, t: float, n_paths: int, steps: int, seed: int, value: Callable,
                   extrapolate: bool) -> Estimate:
    """Mean over bridges of value(start, end, Q), scaled by volume x p_t(x, x).

    The Heun bridge has weak error O(1/steps).  With ``extrapolate`` each path
    contributes 2 X_steps - X_{steps/2} computed on the same Brownian path,
    which cancels the leading term.
    """
    if extrapolate and steps % 2:
        raise ValueError("extrapolation needs an even step count")
    scale = surf.volume * surf.scalar_heat_trace(t)
    vals = []
    for b, lo, hi in _rng.blocks(n_paths):
        v = value(*bridge_loops(surf, t, steps, seed, b, hi - lo))
        if extrapolate:
            v = 2 * v - value(*bridge_loops(surf, t, steps, seed, b, hi - lo, coarsen=2))
        vals.append(scale * v)
    return estimate(np.concatenate(vals))


def euler_characteristic(surf: Surface, t: float, n_paths: int, steps: int, seed: int,
                         extrapolate: bool = True) -> Estimate:
    """MC supertrace of exp(-L t): volume x p_t(x, x) x E_bridge[str(Q hol)]."""
    return _loop_estimate(surf, t, n_paths, steps, seed,
                          lambda start, end, Q: loop_supertraces(surf, start, end, Q), extrapolate)


def heat_trace(surf: Surface, t: float, n_paths: int, steps: int, seed: int, degree: int,
               extrapolate: bool = True) -> Estimate:
    """MC trace of exp(-L t) on forms of one degree (same bridges, plain trace of one block)."""
    sel = [mk for mk in range(4) if bin(mk).count("1") == degree]

    def value(start, end, Q):
        R = np.linalg.solve(start.e, end.e)
        M = np.einsum("bpq,brq->bpr", Q, compound(R, 2))
        return sum(M[:, k, k] for k in sel)

    return _loop_estimate(surf, t, n_paths, steps, seed, value, extrapolate)


# ---------------------------------------------------------------------------
# symbolic forms

X1, X2 = sy.symbols("x1 x2", real=True)
XS = (X1, X2)


class Form:
    """Differential form on a 2D chart with sympy component expressions.

    components: {mask: expr}; mask bit i-1 stands for dx^i.
    """

    def __init__(self, components: Mapping[int, object], m: int = 2):
        self.m = m
        self.c = {int(k): sy.sympify(v) for k, v in components.items() if sy.sympify(v) != 0}

    def __getitem__(self, k):
        return self.c.get(k, sy.Integer(0))

    def __add__(self, o):
        return Form({k: self[k] + o[k] for k in set(self.c) | set(o.c)}, self.m)

    def __sub__(self, o):
        return Form({k: self[k] - o[k] for k in set(self.c) | set(o.c)}, self.m)

    def scale(self, a):
        return Form({k: a * v for k, v in self.c.items()}, self.m)

    def map(self, f):
        return Form({k: f(v) for k, v in self.c.items()}, self.m)

    def is_zero(self) -> bool:
        return all(sy.simplify(v) == 0 for v in self.c.values())

    def to_text(self) -> str:
        if not self.c:
            return "0"
        parts = []
        for k in sorted(self.c):
            idx = [i + 1 for i in range(self.m) if k >> i & 1]
            wedge = "^".join(f"dx{i}" for i in idx)
            parts.append(f"({self.c[k]})" + (f" {wedge}" if wedge else ""))
        return " + ".join(parts)

    def lambdified(self) -> dict:
        return {k: sy.lambdify(XS[: self.m], v, "numpy") for k, v in self.c.items()}


def forms_bridge(F) -> Form | SuperPolynomial:
    """SuperPolynomial with sympy coefficients <-> Form (sum f_mu xi^mu <-> sum f_mu dx^mu)."""
    if isinstance(F, Form):
        return SuperPolynomial(dict(F.c), F.m, F.m)
    if isinstance(F, SuperPolynomial):
        return Form(F.coeffs, F.n)
    raise TypeError("expected a Form or a SuperPolynomial")


def _xi_left(i: int, comps: Mapping[int, object]) -> dict:
    """Left multiplication by xi^i (0-based i) on components."""
    out: dict = {}
    bit = 1 << i
    for k, v in comps.items():
        if k & bit:
            continue
        s = mask_sign(bit, k)
        out[k | bit] = out.get(k | bit, 0) + s * v
    return out


def _dxi(i: int, comps: Mapping[int, object]) -> dict:
    """Left derivative d/dxi^i (0-based i)."""
    out: dict = {}
    bit = 1 << i
    for k, v in comps.items():
        if not k & bit:
            continue
        s = mask_sign(bit, k ^ bit)
        out[k ^ bit] = out.get(k ^ bit, 0) + s * v
    return out


def _add(a: dict, b: dict, s=1) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + s * v
    return out


def exterior_d(F):
    """d = xi^i d/dx^i on a Form or a SuperPolynomial with sympy coefficients."""
    was_poly = isinstance(F, SuperPolynomial)
    f = forms_bridge(F) if was_poly else F
    out: dict = {}
    for i in range(f.m):
        out = _add(out, _xi_left(i, {k: sy.diff(v, XS[i]) for k, v in f.c.items()}))
    res = Form(out, f.m)
    return forms_bridge(res) if was_poly else res


def _metric_data(g: sy.Matrix):
    gi = g.inv()
    m = g.shape[0]
    Gam = [[[sum(gi[i, l] * (sy.diff(g[l, j], XS[k]) + sy.diff(g[l, k], XS[j]) - sy.diff(g[j, k], XS[l]))
                 for l in range(m)) / 2 for k in range(m)] for j in range(m)] for i in range(m)]
    # R^i_jkl = d_k Gam^i_lj - d_l Gam^i_kj + Gam^i_kp Gam^p_lj - Gam^i_lp Gam^p_kj
    Rup = [[[[sy.diff(Gam[i][l][j], XS[k]) - sy.diff(Gam[i][k][j], XS[l])
              + sum(Gam[i][k][p] * Gam[p][l][j] - Gam[i][l][p] * Gam[p][k][j] for p in range(m))
              for l in range(m)] for k in range(m)] for j in range(m)] for i in range(m)]
    # all-lower R_ijkl = g_ip R^p_jkl, which equals K (g_ik g_jl - g_il g_jk) on a surface
    Rlow = [[[[sum(g[i, p] * Rup[p][j][k][l] for p in range(m)) for l in range(m)] for k in range(m)]
              for j in range(m)] for i in range(m)]
    return gi, Gam, Rlow


def hodge_star(g: sy.Matrix, f: Form) -> Form:
    """Hodge star on a 2D chart (orientation dx1 ^ dx2)."""
    gi = g.inv()
    sq = sy.sqrt(g.det())
    out = {}
    if 0 in f.c:
        out[3] = f[0] * sq
    if 3 in f.c:
        out[0] = f[3] / sq
    # (*a)_k = sq g^ij a_i eps_jk
    a = [f[1], f[2]]
    eps = [[0, 1], [-1, 0]]
    for k in range(2):
        v = sum(sq * gi[i, j] * a[i] * eps[j][k] for i in range(2) for j in range(2))
        if v != 0:
            out[1 << k] = v
    return Form(out, 2)


def codifferential(g: sy.Matrix, f: Form) -> Form:
    """delta = -* d * in two dimensions."""
    return hodge_star(g, exterior_d(hodge_star(g, f))).scale(-1)


def hodge_laplacian(g: sy.Matrix, f: Form) -> Form:
    return exterior_d(codifferential(g, f)) + codifferential(g, exterior_d(f))


def curvature_term(g: sy.Matrix, comps: dict) -> dict:
    """Rc = Ric_i^j xi^i d_j + 1/2 R_ik^jl xi^i xi^k d_j d_l on coordinate components."""
    gi, Gam, R = _metric_data(g)
    m = g.shape[0]
    ric = [[sum(gi[i, k] * R[i][j][k][l] for i in range(m) for k in range(m)) for l in range(m)] for j in range(m)]
    ric_mixed = [[sum(ric[i][p] * gi[p, j] for p in range(m)) for j in range(m)] for i in range(m)]
    out: dict = {}
    for i in range(m):
        for j in range(m):
            if ric_mixed[i][j] != 0:
                out = _add(out, {k: ric_mixed[i][j] * v for k, v in _xi_left(i, _dxi(j, comps)).items()})
    for i, k, j, l in itertools.product(range(m), repeat=4):
        c = sum(gi[j, a] * gi[l, b] * R[i][k][a][b] for a in range(m) for b in range(m))
        if c == 0:
            continue
        t = _xi_left(i, _xi_left(k, _dxi(j, _dxi(l, comps))))
        out = _add(out, {kk: sy.Rational(1, 2) * c * v for kk, v in t.items()})
    return out


def _covariant(Gam, i, comps):
    """D_i = d/dx^i - Gamma^k_ij xi^j d/dxi^k on components."""
    m = len(Gam)
    out = {k: sy.diff(v, XS[i]) for k, v in comps.items()}
    for j in range(m):
        for k in range(m):
            if Gam[k][i][j] != 0:
                out = _add(out, {kk: Gam[k][i][j] * v for kk, v in _xi_left(j, _dxi(k, comps)).items()}, -1)
    return out


def bochner(g: sy.Matrix, comps: dict) -> dict:
    """B = g^ij (D_i D_j - Gamma^k_ij D_k)."""
    gi, Gam, _ = _metric_data(g)
    m = g.shape[0]
    out: dict = {}
    for i in range(m):
        for j in range(m):
            if gi[i, j] == 0:
                continue
            t = _covariant(Gam, i, _covariant(Gam, j, comps))
            for k in range(m):
                if Gam[k][i][j] != 0:
                    t = _add(t, {kk: Gam[k][i][j] * v for kk, v in _covariant(Gam, k, comps).items()}, -1)
            out = _add(out, {kk: gi[i, j] * v for kk, v in t.items()})
    return out


def horizontal_laplacian(g: sy.Matrix, comps: dict, frame_angle: float = 0.0) -> dict:
    """W_a W_a on e-independent components, evaluated on the orthonormal frame g^{-1/2} R(angle).

    W_a = e^i_a d_i - e^j_a e^k_b Gamma^i_jk d/de^i_b - e^j_a xi^k Gamma^i_jk d/dxi^i.
    """
    gi, Gam, _ = _metric_data(g)
    m = g.shape[0]
    E = sy.Matrix(m, m, lambda i, a: sy.Symbol(f"e{i}{a}"))

    def W(a, c):
        out: dict = {}
        for i in range(m):
            out = _add(out, {k: E[i, a] * sy.diff(v, XS[i]) for k, v in c.items()})
        for i, b in itertools.product(range(m), repeat=2):
            coef = sum(E[j, a] * E[k, b] * Gam[i][j][k] for j in range(m) for k in range(m))
            if coef != 0:
                out = _add(out, {kk: coef * sy.diff(v, E[i, b]) for kk, v in c.items()}, -1)
        for i, k in itertools.product(range(m), repeat=2):
            coef = sum(E[j, a] * Gam[i][j][k] for j in range(m))
            if coef != 0:
                out = _add(out, {kk: coef * v for kk, v in _xi_left(k, _dxi(i, c)).items()}, -1)
        return out

    acc: dict = {}
    for a in range(m):
        acc = _add(acc, W(a, W(a, comps)))
    # orthonormal frame: symmetric square root of g^{-1}, rotated
    P, Dg = sy.Matrix(gi).diagonalize(normalize=True)
    root = P * sy.diag(*[sy.sqrt(Dg[i, i]) for i in range(m)]) * P.T
    rot = sy.Matrix([[math.cos(frame_angle), -math.sin(frame_angle)], [math.sin(frame_angle), math.cos(frame_angle)]])
    frame = root * rot
    subs = {E[i, a]: frame[i, a] for i in range(m) for a in range(m)}
    return {k: v.subs(subs) for k, v in acc.items()}


def dirac_square(g: sy.Matrix, comps: dict) -> dict:
    """D^2 with D = psi^i (d_i - Gamma^k_ij xi^j d/dxi^k), psi^i = xi^i - 1/2 g^ij d/dxi^j."""
    gi, Gam, _ = _metric_data(g)
    m = g.shape[0]

    def D(c):
        out: dict = {}
        for i in range(m):
            Dc = _covariant(Gam, i, c)
            out = _add(out, _xi_left(i, Dc))
            for j in range(m):
                if gi[i, j] != 0:
                    out = _add(out, {k: gi[i, j] * v for k, v in _dxi(j, Dc).items()}, -sy.Rational(1, 2))
        return out

    return D(D(comps))


def _eval_residual(diff: dict, points: np.ndarray) -> float:
    worst = 0.0
    for v in diff.values():
        f = sy.lambdify(XS, v, "numpy")
        val = np.broadcast_to(np.asarray(f(points[:, 0], points[:, 1]), dtype=complex), (len(points),))
        worst = max(worst, float(np.max(np.abs(val))))
    return worst


def polynomial_form_basis(degree: int = 2) -> list[dict]:
    """Polynomial test forms: monomials x1^a x2^b (a + b <= degree) times each xi^mu."""
    out = []
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for mk in range(4):
                out.append({mk: X1 ** a * X2 ** b})
    return out


def sample_points(n: int = 20, seed: int = 0, radius: float = 1.2) -> np.ndarray:
    u = _rng.uniform_block(seed, 0, n, (2,), "sample-points")
    r = radius * np.sqrt(u[:, 0])
    return np.stack([r * np.cos(2 * np.pi * u[:, 1]), r * np.sin(2 * np.pi * u[:, 1])], axis=-1)


def horizontal_field_check(g: sy.Matrix, basis: Sequence[dict] | None = None, points: np.ndarray | None = None,
                           frame_angle: float = 0.7) -> dict:
    """Max residuals of the two identities relating W_a, B, Rc and the Hodge Laplacian.

    "horizontal": -1/2 (W_a W_a - Rc) - 1/2 (d delta + delta d)
    "weitzenbock": -2 D^2 - (B - Rc)
    "bochner": W_a W_a - B
    """
    basis = basis if basis is not None else polynomial_form_basis()
    points = points if points is not None else sample_points()
    res = {"horizontal": 0.0, "weitzenbock": 0.0, "bochner": 0.0}
    for comps in basis:
        comps = {k: sy.sympify(v) for k, v in comps.items()}
        hl = hodge_laplacian(g, Form(comps)).c
        Rc = curvature_term(g, comps)
        WW = horizontal_laplacian(g, comps, frame_angle)
        B = bochner(g, comps)
        lhs = _add({k: -v / 2 for k, v in WW.items()}, {k: v / 2 for k, v in Rc.items()})
        res["horizontal"] = max(res["horizontal"], _eval_residual(_add(lhs, {k: v / 2 for k, v in hl.items()}, -1), points))
        D2 = dirac_square(g, comps)
        w = _add({k: -2 * v for k, v in D2.items()}, _add(B, Rc, -1), -1)
        res["weitzenbock"] = max(res["weitzenbock"], _eval_residual(w, points))
        res["bochner"] = max(res["bochner"], _eval_residual(_add(WW, B, -1), points))
    return res


def sphere_metric_symbolic() -> sy.Matrix:
    return round_sphere().charts[0].symbolic_metric(X1, X2)


def flat_metric_symbolic() -> sy.Matrix:
    return sy.eye(2)


# ---------------------------------------------------------------------------
# index density

def _two_form(coeffs: np.ndarray, m: int, exact: bool) -> GrassmannElement:
    """sum_{i<j} c_ij xi^i xi^j from an antisymmetric (m, m) array."""
    terms = {}
    for i in range(m):
        for j in range(i + 1, m):
            c = coeffs[i][j]
            if c != 0:
                terms[(1 << i) | (1 << j)] = Fraction(c) if exact else c
    if not terms:
        return GrassmannElement.zero(m, object if exact else np.float64)
    return GrassmannElement.from_dict(terms, m, dtype=object if exact else None)


def _matrix_of_forms(data, m, exact):
    data = np.asarray(data, dtype=object)
    k = data.shape[0]
    return [[_two_form(data[a, b], m, exact) for b in range(k)] for a in range(k)]


def _mat_mul(A, B, m, exact):
    k = len(A)
    zero = GrassmannElement.zero(m, object if exact else np.float64)
    out = []
    for a in range(k):
        row = []
        for b in range(k):
            acc = zero
            for c in range(k):
                acc = acc + gr_mul(A[a][c], B[c][b])
            row.append(acc)
        out.append(row)
    return out


def _trace(A, m, exact):
    acc = GrassmannElement.zero(m, object if exact else np.float64)
    for a in range(len(A)):
        acc = acc + A[a][a]
    return acc


def _z_over_tanh_coeffs(K: int) -> list[Fraction]:
    """z / tanh z = sum_k b_k z^{2k}, b_k = 4^k B_2k / (2k)!."""
    return [Fraction(4 ** k) * Fraction(str(sy.bernoulli(2 * k))) / math.factorial(2 * k) for k in range(K + 1)]


def _log_series(b: Sequence[Fraction]) -> list[Fraction]:
    """Coefficients of log(sum b_k w^k) with b_0 = 1, as a power series in w."""
    K = len(b) - 1
    # l' = f'/f  =>  k l_k = k b_k - sum_{j=1}^{k-1} j l_j b_{k-j}
    lc = [Fraction(0)] * (K + 1)
    for k in range(1, K + 1):
        s = k * b[k] - sum(j * lc[j] * b[k - j] for j in range(1, k))
        lc[k] = s / k
    return lc


@dataclass(frozen=True)
class IndexDensity:
    """Integrand with every 2-form factor already divided by 2 pi.

    ``element`` is the scaled integrand; its top coefficient ``top`` is exact
    for rational input, and the top-form coefficient of the unscaled integrand
    is top / (2 pi)^(m/2) = ``value``.
    """

    m: int
    element: GrassmannElement
    top: object
    value: float


def index_density(m: int, curvature, twist=None, n_twist: int = 1, exact: bool = True) -> IndexDensity:
    """Tr exp(-F/2pi) det((i Omega/2pi) / tanh(i Omega/2pi))^{1/2}, top-form coefficient.

    curvature: array R[a, b, i, j] (antisymmetric in ab and ij); Omega_ab =
    sum_{i<j} R_abij xi^i xi^j.  twist: array F[r, s, i, j] of the bundle
    curvature, or None for the trivial bundle of rank n_twist.
    Computed as exp(1/2 tr log f(A)) with A = i Omega / 2 pi.
    """
    if m % 2:
        raise ValueError("the index density needs even m")
    Om = _matrix_of_forms(curvature, m, exact)
    K = m // 2
    b = _z_over_tanh_coeffs(K)
    lc = _log_series(b)  # log f as series in z^2
    one = GrassmannElement.one(m, exact)
    # (A^2) = -(Omega/2pi)^2; accumulate sum_k lc_k tr(A^{2k})
    O2 = _mat_mul(Om, Om, m, exact)
    A2 = [[x * (-1 if not exact else Fraction(-1)) for x in row] for row in O2]
    P = A2
    expo = GrassmannElement.zero(m, object if exact else np.float64)
    for k in range(1, K + 1):
        expo = expo + _trace(P, m, exact) * (lc[k] if exact else float(lc[k]))
        P = _mat_mul(P, A2, m, exact)
    half = expo * (Fraction(1, 2) if exact else 0.5)
    ahat = _exp_nilpotent(half, m, exact)
    ch = _chern_character(twist, n_twist, m, exact)
    integrand = gr_mul(ch, ahat)
    top = integrand.project((1 << m) - 1)
    return IndexDensity(m, integrand, top, float(top) / (2 * math.pi) ** K)


def _exp_nilpotent(x: GrassmannElement, m: int, exact: bool) -> GrassmannElement:
    """exp(x) for an even element without body, by the finite Taylor series."""
    out = GrassmannElement.one(m, exact)
    term = GrassmannElement.one(m, exact)
    for k in range(1, m // 2 + 1):
        term = gr_mul(term, x) * (Fraction(1, k) if exact else 1.0 / k)
        out = out + term
    return out


def _chern_character(twist, n_twist, m, exact):
    if twist is None:
        return GrassmannElement.scalar(Fraction(n_twist) if exact else float(n_twist), m)
    F = _matrix_of_forms(twist, m, exact)
    negF = [[x * (Fraction(-1) if exact else -1.0) for x in row] for row in F]
    out = GrassmannElement.scalar(Fraction(len(F)) if exact else float(len(F)), m)
    P = negF
    for k in range(1, m // 2 + 1):
        out = out + _trace(P, m, exact) * (Fraction(1, math.factorial(k)) if exact else 1.0 / math.factorial(k))
        P = _mat_mul(P, negF, m, exact)
    return out


def index_density_bruteforce(m: int, curvature, twist=None, n_twist: int = 1) -> IndexDensity:
    """Independent route: Leibniz determinant of the z/tanh z matrix series, then the binomial square root."""
    if m % 2:
        raise ValueError("the index density needs even m")
    exact = True
    Om = _matrix_of_forms(curvature, m, exact)
    K = m // 2
    b = _z_over_tanh_coeffs(K)
    k = len(Om)
    A2 = [[x * Fraction(-1) for x in row] for row in _mat_mul(Om, Om, m, exact)]
    # f(A) = sum_j b_j (A^2)^j
    ident = [[GrassmannElement.one(m, True) if a == c else GrassmannElement.zero(m, object) for c in range(k)]
             for a in range(k)]
    fA = [[x * b[0] for x in row] for row in ident]
    P = ident
    for j in range(1, K + 1):
        P = _mat_mul(P, A2, m, exact)
        fA = [[fA[a][c] + P[a][c] * b[j] for c in range(k)] for a in range(k)]
    det = GrassmannElement.zero(m, object)
    for perm in itertools.permutations(range(k)):
        sgn = _perm_sign(perm)
        term = GrassmannElement.one(m, True) * Fraction(sgn)
        for a in range(k):
            term = gr_mul(term, fA[a][perm[a]])
        det = det + term
    x = det - GrassmannElement.one(m, True)
    root = GrassmannElement.one(m, True)
    xp = GrassmannElement.one(m, True)
    for j in range(1, K + 1):
        xp = gr_mul(xp, x)
        root = root + xp * _binom_half(j)
    ch = _chern_character(twist, n_twist, m, exact)
    integrand = gr_mul(ch, root)
    top = integrand.project((1 << m) - 1)
    return IndexDensity(m, integrand, top, float(top) / (2 * math.pi) ** K)


def _perm_sign(p) -> int:
    s = 1
    p = list(p)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            s = -s
    return s


def _binom_half(j: int) -> Fraction:
    out = Fraction(1)
    for i in range(j):
        out *= Fraction(1, 2) - i
    return out / math.factorial(j)


def constant_curvature_data(m: int, K) -> np.ndarray:
    """R[a, b, i, j] = K (delta_ai delta_bj - delta_aj delta_bi) as an object array."""
    R = np.zeros((m, m, m, m), dtype=object)
    for a, b_, i, j in itertools.product(range(m), repeat=4):
        R[a, b_, i, j] = K * ((a == i) * (b_ == j) - (a == j) * (b_ == i))
    return R
