"""Finitely generated Grassmann algebra, odd calculus and fermionic operators.

Monomials are stored as bitmasks: bit ``i-1`` set means generator ``i`` is
present, and a monomial is always written with its generators in increasing
order.  Coefficients live in a numpy array whose dtype is ``float64``,
``complex128`` or ``object`` (the exact mode, used with ``fractions.Fraction``
or plain ints).

Conventions fixed here and used everywhere else in the package:

* Berezin integration over a block of generators ``G`` extracts the
  coefficient of ``xi^G`` after writing every term as ``c * xi^rest * xi^G``
  (coefficients and spectators on the left).
* The kernel of an operator ``K`` on functions of ``n`` odd variables is the
  element ``K(xi, theta)`` with ``xi`` on generators ``1..n`` and ``theta`` on
  ``n+1..2n`` such that ``K F(xi) = int d^n theta K(xi, theta) F(theta)``.
  The delta function ``prod_i (xi^i - theta^i)`` is the kernel of the identity
  only for even ``n``, so everything routed through kernels requires even ``n``.
* ``FermionOperator`` matrices act on coefficient vectors indexed by the mask
  integer, i.e. lexicographic order on bitmasks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from numbers import Number
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

MAX_GENERATORS = 64


class GrassmannError(ValueError):
    """Raised on invalid generator labels, mismatched algebras or unsupported sizes."""


class GeneratorBudgetError(GrassmannError):
    """Raised when a construction needs more than ``MAX_GENERATORS`` generators."""


def check_budget(count: int, what: str = "construction") -> None:
    if count > MAX_GENERATORS:
        raise GeneratorBudgetError(
            f"{what} needs {count} odd generators; the budget is {MAX_GENERATORS}"
        )


# ---------------------------------------------------------------------------
# multi-indices

def mask_of(indices: Iterable[int]) -> int:
    m = 0
    for i in indices:
        m |= 1 << (i - 1)
    return m


def indices_of(mask: int) -> tuple[int, ...]:
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


@dataclass(frozen=True)
class MultiIndex:
    """Strictly increasing tuple of generator labels (1-based)."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 1 or i > MAX_GENERATORS for i in idx):
            raise GrassmannError(f"generator labels must lie in 1..{MAX_GENERATORS}: {idx}")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise GrassmannError(f"multi-index must be strictly increasing: {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def mask(self) -> int:
        return mask_of(self.indices)

    @property
    def length(self) -> int:
        return len(self.indices)

    @classmethod
    def from_mask(cls, mask: int) -> "MultiIndex":
        return cls(indices_of(mask))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def _as_mask(lam) -> int:
    if isinstance(lam, MultiIndex):
        return lam.mask
    if isinstance(lam, (int, np.integer)):
        return int(lam)
    return MultiIndex(tuple(lam)).mask


# ---------------------------------------------------------------------------
# sign bookkeeping

def _as_u64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint64)


def reorder_sign(a, b, nbits: int = MAX_GENERATORS) -> np.ndarray:
    """Sign s with xi^a xi^b = s xi^(a|b) for disjoint masks (vectorised).

    The parity is the number of pairs (i in a, j in b) with i > j, counted
    one bit of ``b`` at a time with a popcount of the higher part of ``a``.
    """
    a = _as_u64(a)
    b = _as_u64(b)
    a, b = np.broadcast_arrays(a, b)
    par = np.zeros(a.shape, dtype=np.uint8)
    one = np.uint64(1)
    for j in range(min(nbits, MAX_GENERATORS - 1)):
        sel = ((b >> np.uint64(j)) & one).astype(bool)
        if sel.any():
            par[sel] += np.bitwise_count(a[sel] >> np.uint64(j + 1)).astype(np.uint8)
    return 1 - 2 * (par & 1).astype(np.int64)


def mask_sign(a: int, b: int) -> int:
    """Scalar version of :func:`reorder_sign`; 0 if the masks overlap."""
    if a & b:
        return 0
    s = 0
    while b:
        low = b & -b
        s += (a >> low.bit_length()).bit_count()
        b ^= low
    return -1 if s & 1 else 1


def _is_zero(c) -> bool:
    return c == 0


def _result_dtype(*dts):
    if any(d == object for d in dts):
        return np.dtype(object)
    return np.result_type(*dts)


def _scalar_dtype(c):
    if isinstance(c, (Fraction, int)) and not isinstance(c, bool):
        return np.dtype(object) if isinstance(c, Fraction) else np.dtype(np.int64)
    if isinstance(c, complex) or np.iscomplexobj(c):
        return np.dtype(np.complex128)
    return np.dtype(np.float64)


# ---------------------------------------------------------------------------
# elements

class GrassmannElement:
    """Element of the Grassmann algebra on ``n`` generators.

    Immutable.  ``masks`` is a sorted array of distinct uint64 bitmasks and
    ``coeffs`` the matching nonzero coefficients.
    """

    __slots__ = ("n", "masks", "coeffs")

    def __init__(self, masks, coeffs, n: int, *, canonical: bool = False):
        n = int(n)
        if n < 0 or n > MAX_GENERATORS:
            raise GeneratorBudgetError(f"generator count {n} outside 0..{MAX_GENERATORS}")
        masks = _as_u64(masks).ravel()
        coeffs = np.asarray(coeffs)
        if coeffs.dtype == np.int64 or coeffs.dtype == np.int32:
            coeffs = coeffs.astype(np.float64)
        if coeffs.dtype.kind not in "fcO":
            coeffs = coeffs.astype(np.float64)
        coeffs = coeffs.ravel()
        if not canonical:
            masks, coeffs = _accumulate(masks, coeffs)
            if len(masks) and n < MAX_GENERATORS and int(masks.max()) >> n:
                raise GrassmannError(f"monomial uses a generator beyond n={n}")
        masks.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "coeffs", coeffs)

    def __setattr__(self, key, value):
        raise AttributeError("GrassmannElement is immutable")

    # constructors ---------------------------------------------------------
    @classmethod
    def zero(cls, n: int, dtype=np.float64) -> "GrassmannElement":
        return cls(np.zeros(0, np.uint64), np.zeros(0, dtype), n, canonical=True)

    @classmethod
    def scalar(cls, c, n: int) -> "GrassmannElement":
        dt = _scalar_dtype(c)
        if dt == np.int64:
            dt = np.dtype(np.float64)
        arr = np.empty(1, dtype=dt)
        arr[0] = c
        return cls([0], arr, n)

    @classmethod
    def one(cls, n: int, exact: bool = False) -> "GrassmannElement":
        return cls.scalar(Fraction(1) if exact else 1.0, n)

    @classmethod
    def generator(cls, i: int, n: int, coeff=1.0) -> "GrassmannElement":
        if not 1 <= i <= n:
            raise GrassmannError(f"generator {i} outside 1..{n}")
        return cls.monomial((i,), n, coeff)

    @classmethod
    def monomial(cls, indices, n: int, coeff=1.0) -> "GrassmannElement":
        mi = indices if isinstance(indices, MultiIndex) else MultiIndex(tuple(indices))
        if mi.indices and mi.indices[-1] > n:
            raise GrassmannError(f"multi-index {mi.indices} exceeds n={n}")
        arr = np.empty(1, dtype=_scalar_dtype(coeff) if not isinstance(coeff, int) else np.float64)
        arr[0] = coeff
        return cls([mi.mask], arr, n)

    @classmethod
    def from_dict(cls, terms: Mapping, n: int, dtype=None) -> "GrassmannElement":
        keys = [_as_mask(k) for k in terms]
        vals = list(terms.values())
        if dtype is None:
            if any(isinstance(v, Fraction) for v in vals):
                dtype = object
            elif any(isinstance(v, complex) or np.iscomplexobj(v) for v in vals):
                dtype = np.complex128
            else:
                dtype = np.float64
        arr = np.empty(len(vals), dtype=dtype)
        for k, v in enumerate(vals):
            arr[k] = v
        return cls(np.array(keys, dtype=np.uint64), arr, n)

    # views ----------------------------------------------------------------
    def terms(self) -> dict[int, object]:
        return {int(m): c for m, c in zip(self.masks, self.coeffs)}

    def __len__(self):
        return len(self.masks)

    def __bool__(self):
        return len(self.masks) > 0

    def __iter__(self):
        return iter(self.terms().items())

    def project(self, lam) -> object:
        m = _as_mask(lam)
        k = np.searchsorted(self.masks, np.uint64(m))
        if k < len(self.masks) and int(self.masks[k]) == m:
            return self.coeffs[k]
        return self.coeffs.dtype.type(0) if self.coeffs.dtype != object else 0

    def body(self):
        return self.project(0)

    def grades(self) -> np.ndarray:
        return np.bitwise_count(self.masks).astype(np.int64)

    def is_even(self) -> bool:
        return bool(np.all(self.grades() % 2 == 0))

    def is_odd(self) -> bool:
        return bool(np.all(self.grades() % 2 == 1))

    def even_part(self) -> "GrassmannElement":
        keep = self.grades() % 2 == 0
        return GrassmannElement(self.masks[keep], self.coeffs[keep], self.n, canonical=True)

    def odd_part(self) -> "GrassmannElement":
        keep = self.grades() % 2 == 1
        return GrassmannElement(self.masks[keep], self.coeffs[keep], self.n, canonical=True)

    def with_n(self, n: int) -> "GrassmannElement":
        """Same element viewed in an algebra with ``n`` generators."""
        return GrassmannElement(self.masks, self.coeffs, n)

    def astype(self, dtype) -> "GrassmannElement":
        return GrassmannElement(self.masks, self.coeffs.astype(dtype), self.n, canonical=True)

    # arithmetic -----------------------------------------------------------
    def _check(self, other: "GrassmannElement"):
        if self.n != other.n:
            raise GrassmannError(f"generator counts differ: {self.n} vs {other.n}")

    def __add__(self, other):
        if isinstance(other, GrassmannElement):
            self._check(other)
            dt = _result_dtype(self.coeffs.dtype, other.coeffs.dtype)
            return GrassmannElement(
                np.concatenate([self.masks, other.masks]),
                np.concatenate([self.coeffs.astype(dt), other.coeffs.astype(dt)]),
                self.n,
            )
        if isinstance(other, Number):
            return self + GrassmannElement.scalar(other, self.n)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement(self.masks, -self.coeffs, self.n, canonical=True)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, GrassmannElement):
            return gr_mul(self, other)
        if isinstance(other, (Number, np.number)):
            if other == 0:
                return GrassmannElement.zero(self.n, self.coeffs.dtype)
            dt = _result_dtype(self.coeffs.dtype, _scalar_dtype(other))
            return GrassmannElement(self.masks, self.coeffs.astype(dt) * other, self.n, canonical=True)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (Number, np.number)):
            return self * other
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, (Number, np.number)):
            if self.coeffs.dtype == object:
                vals = np.array([c / other for c in self.coeffs], dtype=object)
                return GrassmannElement(self.masks, vals, self.n, canonical=True)
            return self * (1.0 / other)
        return NotImplemented

    def __eq__(self, other):
        if isinstance(other, (Number, np.number)):
            other = GrassmannElement.scalar(other, self.n)
        if not isinstance(other, GrassmannElement):
            return NotImplemented
        if self.n != other.n:
            return False
        d = self - other
        return len(d) == 0

    __hash__ = None

    def allclose(self, other: "GrassmannElement", atol: float = 1e-12) -> bool:
        d = self - other
        if not len(d):
            return True
        return bool(np.max(np.abs(d.coeffs.astype(np.complex128))) <= atol)

    def __repr__(self):
        if not len(self):
            return f"GrassmannElement(0, n={self.n})"
        parts = []
        for m, c in zip(self.masks, self.coeffs):
            idx = indices_of(int(m))
            parts.append(f"{c}" + ("*" + "".join(f"b{i}" for i in idx) if idx else ""))
        return f"GrassmannElement({' + '.join(parts)}, n={self.n})"

    def to_vector(self, n: int | None = None, dtype=None) -> np.ndarray:
        """Dense coefficient vector of length 2^n indexed by mask."""
        n = self.n if n is None else n
        if len(self.masks) and int(self.masks.max()) >> n:
            raise GrassmannError(f"element uses generators beyond {n}")
        v = np.zeros(1 << n, dtype=dtype or _result_dtype(self.coeffs.dtype, np.float64))
        v[self.masks.astype(np.int64)] = self.coeffs
        return v

    @classmethod
    def from_vector(cls, v, n: int | None = None) -> "GrassmannElement":
        v = np.asarray(v)
        nv = int(len(v)).bit_length() - 1
        if 1 << nv != len(v):
            raise GrassmannError("vector length must be a power of two")
        nz = np.nonzero(v != 0)[0]
        return cls(nz.astype(np.uint64), v[nz], nv if n is None else n, canonical=True)

    # calculus -------------------------------------------------------------
    def berezin(self, gens) -> "GrassmannElement":
        """Berezin integral over the generators in ``gens`` (labels or a mask)."""
        return berezin_partial(self, gens)

    def exp(self) -> "GrassmannElement":
        return gr_exp(self)

    def substitute(self, images: Sequence["GrassmannElement"], n: int | None = None) -> "GrassmannElement":
        return substitute(self, images, n)

    def to_text(self) -> str:
        return element_to_text(self)


def _accumulate(masks: np.ndarray, coeffs: np.ndarray):
    if len(masks) == 0:
        return masks.astype(np.uint64), coeffs
    uniq, inv = np.unique(masks, return_inverse=True)
    if len(uniq) == len(masks):
        order = np.argsort(masks, kind="stable")
        out = coeffs[order]
        masks = masks[order]
    else:
        out = np.zeros(len(uniq), dtype=coeffs.dtype)
        if coeffs.dtype == object:
            out[:] = 0
            for k, c in zip(inv.ravel(), coeffs):
                out[k] = out[k] + c
        else:
            np.add.at(out, inv.ravel(), coeffs)
        masks = uniq
    if out.dtype == object:
        keep = np.array([not _is_zero(c) for c in out], dtype=bool)
    else:
        keep = out != 0
    return np.ascontiguousarray(masks[keep]), np.ascontiguousarray(out[keep])


def gr_mul(a: GrassmannElement, b: GrassmannElement) -> GrassmannElement:
    """Product in the Grassmann algebra; repeated generators annihilate a term."""
    a._check(b)
    dt = _result_dtype(a.coeffs.dtype, b.coeffs.dtype)
    if not len(a) or not len(b):
        return GrassmannElement.zero(a.n, dt)
    am = a.masks[:, None]
    bm = b.masks[None, :]
    ok = (am & bm) == 0
    ia, ib = np.nonzero(ok)
    if len(ia) == 0:
        return GrassmannElement.zero(a.n, dt)
    ma = a.masks[ia]
    mb = b.masks[ib]
    sign = reorder_sign(ma, mb, a.n)
    ca = a.coeffs.astype(dt)[ia]
    cb = b.coeffs.astype(dt)[ib]
    if dt == object:
        vals = np.array([int(s) * x * y for s, x, y in zip(sign, ca, cb)], dtype=object)
    else:
        vals = sign * ca * cb
    return GrassmannElement(ma | mb, vals, a.n)


def gr_project(a: GrassmannElement, lam) -> object:
    """Coefficient of the monomial ``lam`` (a MultiIndex, label tuple or mask)."""
    return a.project(lam)


def augmentation(a: GrassmannElement) -> object:
    """Body map: the coefficient of the unit."""
    return a.body()


def gr_exp(x: GrassmannElement) -> GrassmannElement:
    """exp of an even element.

    The soul of an even element is a sum of even monomials, each squaring to
    zero and all commuting, so exp(soul) is the exact finite product of
    (1 + c m) over its terms.  No factorials appear, which keeps the exact mode
    exact.
    """
    if not x.is_even():
        raise GrassmannError("exp is only defined here for even elements")
    body = x.body()
    out = GrassmannElement.scalar(1.0 if x.coeffs.dtype != object else Fraction(1), x.n)
    for m, c in zip(x.masks, x.coeffs):
        if int(m) == 0:
            continue
        f = GrassmannElement(np.array([0, m], dtype=np.uint64),
                             np.array([1, c], dtype=_result_dtype(x.coeffs.dtype, np.float64)),
                             x.n, canonical=True)
        out = gr_mul(out, f)
    if body != 0:
        out = out * complex(np.exp(body)) if np.iscomplexobj(body) else out * float(np.exp(body))
    return out


def berezin_partial(F: GrassmannElement, gens) -> GrassmannElement:
    """Integrate over a block of generators, spectators kept on the left."""
    G = _as_mask(gens)
    sel = (F.masks & np.uint64(G)) == np.uint64(G)
    if not sel.any():
        return GrassmannElement.zero(F.n, F.coeffs.dtype)
    rest = F.masks[sel] ^ np.uint64(G)
    sign = reorder_sign(rest, np.full(rest.shape, G, dtype=np.uint64), F.n)
    c = F.coeffs[sel]
    vals = np.array([int(s) * v for s, v in zip(sign, c)], dtype=object) if c.dtype == object else sign * c
    return GrassmannElement(rest, vals, F.n)


def berezin(F, n: int | None = None):
    """Full Berezin integral: the coefficient of xi^1...xi^n."""
    if isinstance(F, SuperPolynomial):
        F = F.as_element()
    n = F.n if n is None else n
    return F.project((1 << n) - 1)


def substitute(F: GrassmannElement, images: Sequence[GrassmannElement], n: int | None = None) -> GrassmannElement:
    """Evaluate F at xi^i -> images[i-1], keeping monomial order.

    Terms are built as ordered products images[i1] ... images[ik], so odd
    images reproduce the sign structure of F.
    """
    if len(images) < F.n and len(F) and int(F.masks.max()) >> len(images):
        raise GrassmannError("not enough images for the generators used")
    target_n = images[0].n if images else (F.n if n is None else n)
    cache: dict[int, GrassmannElement] = {0: GrassmannElement.one(target_n, F.coeffs.dtype == object)}

    def prod(m: int) -> GrassmannElement:
        if m in cache:
            return cache[m]
        hi = m.bit_length()
        r = gr_mul(prod(m ^ (1 << (hi - 1))), images[hi - 1])
        cache[m] = r
        return r

    out = GrassmannElement.zero(target_n, _result_dtype(F.coeffs.dtype, *(g.coeffs.dtype for g in images)) if images else F.coeffs.dtype)
    for m, c in zip(F.masks, F.coeffs):
        out = out + prod(int(m)) * c
    return out


def element_to_text(a: GrassmannElement) -> str:
    """Text record: header line then ``<indices> <coefficient>`` per term.

    Indices are dot-separated labels, ``-`` for the unit.  Floats use
    ``repr``; complex values are written ``re,im``; exact values as ``p/q``.
    """
    lines = [f"grassmann n={a.n} terms={len(a)}"]
    for m, c in zip(a.masks, a.coeffs):
        idx = indices_of(int(m))
        key = ".".join(str(i) for i in idx) if idx else "-"
        lines.append(f"{key} {_fmt(c)}")
    return "\n".join(lines) + "\n"


def _fmt(c) -> str:
    if isinstance(c, Fraction):
        return f"{c.numerator}/{c.denominator}"
    if isinstance(c, (complex, np.complexfloating)):
        return f"{float(c.real)!r},{float(c.imag)!r}"
    if isinstance(c, (int, np.integer)):
        return f"{int(c)}/1"
    return repr(float(c))


def _parse(s: str):
    if "/" in s:
        return Fraction(s)
    if "," in s:
        re, im = s.split(",")
        return complex(float(re), float(im))
    return float(s)


def element_from_text(text: str) -> GrassmannElement:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "grassmann":
        raise GrassmannError("not a grassmann record")
    n = int(head[1].split("=")[1])
    terms = {}
    for ln in lines[1:]:
        key, val = ln.split()
        idx = () if key == "-" else tuple(int(i) for i in key.split("."))
        terms[mask_of(idx)] = _parse(val)
    return GrassmannElement.from_dict(terms, n)


# ---------------------------------------------------------------------------
# functions on R^{m|n}

class SuperPolynomial:
    """Sum_mu F_mu(x) xi^mu on R^{m|n}.

    Each coefficient is either a constant or a callable taking an array of
    shape (..., m) and returning values of shape (...).  With m = 0 the
    object is just a Grassmann element in n generators.
    """

    def __init__(self, coeffs: Mapping, n: int, m: int = 0):
        self.n = int(n)
        self.m = int(m)
        self._coeffs = {_as_mask(k): v for k, v in coeffs.items()}
        for k in self._coeffs:
            if k >> self.n:
                raise GrassmannError(f"multi-index {indices_of(k)} exceeds odd dimension {n}")

    @classmethod
    def from_element(cls, a: GrassmannElement, m: int = 0) -> "SuperPolynomial":
        return cls(a.terms(), a.n, m)

    @property
    def coeffs(self) -> dict:
        return dict(self._coeffs)

    def coefficient(self, lam):
        return self._coeffs.get(_as_mask(lam), 0)

    def as_element(self) -> GrassmannElement:
        if any(callable(v) for v in self._coeffs.values()):
            raise GrassmannError("coefficients depend on x; evaluate first")
        return GrassmannElement.from_dict(self._coeffs, self.n)

    def component_values(self, x) -> dict[int, np.ndarray]:
        x = np.asarray(x, dtype=float)
        out = {}
        for k, v in self._coeffs.items():
            out[k] = np.asarray(v(x)) if callable(v) else np.broadcast_to(v, x.shape[:-1] if self.m else ())
        return out

    def evaluate(self, x=None) -> GrassmannElement:
        if self.m == 0:
            return self.as_element()
        vals = self.component_values(np.asarray(x, dtype=float))
        return GrassmannElement.from_dict({k: complex(v) if np.iscomplexobj(v) else float(v) for k, v in vals.items()}, self.n)

    def __call__(self, x=None):
        return self.evaluate(x)

    def map_coefficients(self, fn: Callable[[int, object], tuple[int, int, object] | None]) -> "SuperPolynomial":
        out: dict = {}
        for k, v in self._coeffs.items():
            r = fn(k, v)
            if r is None:
                continue
            newk, sign, newv = r
            if newk in out:
                prev = out[newk]
                out[newk] = _add_coeff(prev, _scale_coeff(newv, sign))
            else:
                out[newk] = _scale_coeff(newv, sign)
        return SuperPolynomial(out, self.n, self.m)


def _scale_coeff(v, s):
    if callable(v):
        return lambda x, v=v, s=s: s * v(x)
    return s * v


def _add_coeff(a, b):
    if callable(a) or callable(b):
        fa = a if callable(a) else (lambda x, a=a: a)
        fb = b if callable(b) else (lambda x, b=b: b)
        return lambda x: fa(x) + fb(x)
    return a + b


def odd_derive(F, j: int):
    """Left derivative d/dxi^j: sign (-1)^(k-1) when xi^j sits at position k."""
    n = F.n
    if not 1 <= j <= n:
        raise GrassmannError(f"generator {j} outside 1..{n}")
    bit = 1 << (j - 1)
    if isinstance(F, GrassmannElement):
        sel = (F.masks & np.uint64(bit)) != 0
        rest = F.masks[sel] ^ np.uint64(bit)
        below = np.bitwise_count(rest & np.uint64(bit - 1)).astype(np.int64)
        sign = 1 - 2 * (below & 1)
        c = F.coeffs[sel]
        vals = np.array([int(s) * v for s, v in zip(sign, c)], dtype=object) if c.dtype == object else sign * c
        return GrassmannElement(rest, vals, n)

    def rule(k, v):
        if not k & bit:
            return None
        return k ^ bit, -1 if (k & (bit - 1)).bit_count() & 1 else 1, v

    return F.map_coefficients(rule)


# ---------------------------------------------------------------------------
# Fourier transform and kernels

def _pair_exp(n: int, left: int, right: int, coef, total: int) -> GrassmannElement:
    """exp(coef * sum_i g[left+i] g[right+i]) on ``total`` generators."""
    out = GrassmannElement.one(total)
    for i in range(1, n + 1):
        m = (1 << (left + i - 1)) | (1 << (right + i - 1))
        s = mask_sign(1 << (left + i - 1), 1 << (right + i - 1))
        f = GrassmannElement(np.array([0, m], np.uint64), np.array([1, s * coef], np.complex128), total)
        out = gr_mul(out, f)
    return out


def _require_even(n: int, what: str):
    if n % 2:
        raise GrassmannError(f"{what} requires an even number of odd variables, got n={n}")


def fourier(F) -> GrassmannElement:
    """F^(rho) = int d^n xi F(xi) exp(i rho.xi), for even n.

    The result is returned as a function of n variables (rho relabelled to
    generators 1..n).  With this convention fourier(fourier(F)) = F exactly.
    """
    if isinstance(F, SuperPolynomial):
        F = F.as_element()
    n = F.n
    _require_even(n, "fourier")
    if n == 0:
        return F.astype(np.complex128)
    total = 2 * n
    # layout: rho on 1..n, xi on n+1..2n so the xi block integrates on the right
    Fx = GrassmannElement(F.masks << np.uint64(n), F.coeffs.astype(np.complex128), total, canonical=True)
    # exp(i rho.xi) = prod_i (1 + i rho^i xi^i)
    E = _pair_exp(n, 0, n, 1j, total)
    r = berezin_partial(gr_mul(Fx, E), ((1 << n) - 1) << n)
    return GrassmannElement(r.masks, r.coeffs, n)


def delta_kernel(n: int) -> GrassmannElement:
    """prod_{i=1..n} (xi^i - theta^i) with xi on 1..n and theta on n+1..2n."""
    if n < 1:
        raise GrassmannError("delta kernel needs n >= 1")
    check_budget(2 * n, "delta kernel")
    total = 2 * n
    out = GrassmannElement.one(total)
    for i in range(1, n + 1):
        out = gr_mul(out, GrassmannElement.generator(i, total) - GrassmannElement.generator(n + i, total))
    return out


def apply_kernel(K: GrassmannElement, F) -> GrassmannElement:
    """(K F)(xi) = int d^n theta K(xi, theta) F(theta) for a kernel on 2n generators."""
    if isinstance(F, SuperPolynomial):
        F = F.as_element()
    n = F.n
    if K.n != 2 * n:
        raise GrassmannError(f"kernel has {K.n} generators, expected {2 * n}")
    _require_even(n, "kernel application")
    Ft = GrassmannElement(F.masks << np.uint64(n), F.coeffs, 2 * n, canonical=True)
    r = berezin_partial(gr_mul(K, Ft), ((1 << n) - 1) << n)
    return GrassmannElement(r.masks, r.coeffs, n)


# ---------------------------------------------------------------------------
# operators

def xi_matrix(i: int, n: int) -> np.ndarray:
    """Matrix of left multiplication by xi^i on the 2^n mask basis."""
    bit = 1 << (i - 1)
    mu = np.arange(1 << n, dtype=np.int64)
    free = mu[(mu & bit) == 0]
    below = np.bitwise_count((free & (bit - 1)).astype(np.uint64)).astype(np.int64)
    M = np.zeros((1 << n, 1 << n))
    M[free | bit, free] = 1 - 2 * (below & 1)
    return M


def d_matrix(i: int, n: int) -> np.ndarray:
    """Matrix of the left derivative d/dxi^i (transpose of xi^i)."""
    return xi_matrix(i, n).T.copy()


def grading_matrix(n: int) -> np.ndarray:
    """gamma: +1 on even monomials, -1 on odd ones."""
    par = np.bitwise_count(np.arange(1 << n, dtype=np.uint64)) & np.uint64(1)
    return np.diag(1.0 - 2.0 * par.astype(float))


def number_operator(n: int) -> np.ndarray:
    return np.diag(np.bitwise_count(np.arange(1 << n, dtype=np.uint64)).astype(float))


CLIFFORD_SCALES = {"dirac": 1, "delta": Fraction(1, 2)}


@dataclass(frozen=True, eq=False)
class FermionOperator:
    """Linear operator on functions of n odd variables, as a dense matrix.

    Row/column index = bitmask of the basis monomial.
    """

    n: int
    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix)
        if M.shape != (1 << self.n, 1 << self.n):
            raise GrassmannError(f"matrix shape {M.shape} does not match n={self.n}")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls, n: int) -> "FermionOperator":
        return cls(n, np.eye(1 << n))

    @classmethod
    def xi(cls, i: int, n: int) -> "FermionOperator":
        return cls(n, xi_matrix(i, n))

    @classmethod
    def d(cls, i: int, n: int) -> "FermionOperator":
        return cls(n, d_matrix(i, n))

    def __matmul__(self, other):
        if isinstance(other, FermionOperator):
            self._check(other)
            return FermionOperator(self.n, self.matrix @ other.matrix)
        if isinstance(other, (GrassmannElement, SuperPolynomial)):
            return self.apply(other)
        return NotImplemented

    def _check(self, other):
        if self.n != other.n:
            raise GrassmannError(f"operators on different spaces: n={self.n} vs n={other.n}")

    def __add__(self, other):
        self._check(other)
        return FermionOperator(self.n, self.matrix + other.matrix)

    def __sub__(self, other):
        self._check(other)
        return FermionOperator(self.n, self.matrix - other.matrix)

    def __neg__(self):
        return FermionOperator(self.n, -self.matrix)

    def __mul__(self, c):
        return FermionOperator(self.n, self.matrix * c)

    __rmul__ = __mul__

    def apply(self, F) -> GrassmannElement:
        if isinstance(F, SuperPolynomial):
            F = F.as_element()
        if F.n != self.n:
            raise GrassmannError(f"function has n={F.n}, operator n={self.n}")
        if F.coeffs.dtype == object:
            v = np.array(F.to_vector(dtype=object))
            out = np.array([sum(self.matrix[r, c] * v[c] for c in range(len(v)) if self.matrix[r, c] != 0 and v[c] != 0) for r in range(len(v))], dtype=object)
            return GrassmannElement.from_vector(out, self.n)
        return GrassmannElement.from_vector(self.matrix @ F.to_vector(), self.n)

    def kernel(self) -> GrassmannElement:
        return op_kernel(self)

    def to_text(self) -> str:
        """Text record: header then one ``row col value`` line per nonzero entry."""
        lines = [f"fermion_operator n={self.n}"]
        rows, cols = np.nonzero(self.matrix)
        for r, c in zip(rows, cols):
            lines.append(f"{'.'.join(map(str, indices_of(int(r)))) or '-'} "
                         f"{'.'.join(map(str, indices_of(int(c)))) or '-'} {_fmt(self.matrix[r, c])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FermionOperator":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        n = int(lines[0].split()[1].split("=")[1])
        entries = []
        for ln in lines[1:]:
            r, c, v = ln.split()
            entries.append((mask_of(() if r == "-" else map(int, r.split("."))),
                            mask_of(() if c == "-" else map(int, c.split("."))), _parse(v)))
        cplx = any(isinstance(v, complex) for *_, v in entries)
        M = np.zeros((1 << n, 1 << n), complex if cplx else float)
        for r, c, v in entries:
            M[r, c] = complex(v) if cplx else float(v)
        return cls(n, M)


def clifford(i: int, n: int, scale=1) -> FermionOperator:
    """psi^i = xi^i + scale * d/dxi^i, so that {psi^i, psi^j} = 2*scale*delta^ij.

    ``scale`` may be a number or one of the names in ``CLIFFORD_SCALES``:
    ``"dirac"`` (scale 1, the 2-delta relations) or ``"delta"`` (scale 1/2,
    the delta-normalised relations).
    """
    if not 1 <= i <= n:
        raise GrassmannError(f"clifford index {i} outside 1..{n}")
    c = CLIFFORD_SCALES[scale] if isinstance(scale, str) else scale
    return FermionOperator(n, xi_matrix(i, n) + float(c) * d_matrix(i, n))


def psi_word(mu, n: int, scale=1) -> FermionOperator:
    """psi^{mu_1} ... psi^{mu_k} for a multi-index mu."""
    M = np.eye(1 << n)
    for i in (mu.indices if isinstance(mu, MultiIndex) else indices_of(_as_mask(mu))):
        M = M @ clifford(i, n, scale).matrix
    return FermionOperator(n, M)


def operator_from_function(F, scale=1) -> FermionOperator:
    """F(psi) = sum_mu F_mu psi^mu."""
    if isinstance(F, SuperPolynomial):
        F = F.as_element()
    n = F.n
    dt = np.complex128 if np.iscomplexobj(F.coeffs) else np.float64
    M = np.zeros((1 << n, 1 << n), dtype=dt)
    for m, c in zip(F.masks, F.coeffs):
        M = M + complex(c) * psi_word(int(m), n, scale).matrix if dt == np.complex128 else M + float(c) * psi_word(int(m), n, scale).matrix
    return FermionOperator(n, M)


def op_kernel(K: FermionOperator) -> GrassmannElement:
    """Kernel K_xi delta(xi, theta) on 2n generators (xi first, then theta)."""
    n = K.n
    _require_even(n, "operator kernels")
    d = delta_kernel(n)
    lo = (1 << n) - 1
    masks = []
    vals = []
    for m, c in zip(d.masks, d.coeffs):
        a = int(m) & lo
        b = int(m) >> n
        col = K.matrix[:, a]
        for r in np.nonzero(col)[0]:
            masks.append(int(r) | (b << n))
            vals.append(c * col[r])
    dt = np.complex128 if np.iscomplexobj(K.matrix) else np.float64
    return GrassmannElement(np.array(masks, np.uint64), np.array(vals, dtype=dt), 2 * n)


def kernel_to_operator(K: GrassmannElement, n: int) -> FermionOperator:
    """Recover the matrix of the operator whose kernel is K."""
    _require_even(n, "operator kernels")
    dt = np.complex128 if np.iscomplexobj(K.coeffs) else np.float64
    M = np.zeros((1 << n, 1 << n), dtype=dt)
    for mu in range(1 << n):
        M[:, mu] = apply_kernel(K, GrassmannElement([mu], [1.0], n)).to_vector(dtype=dt)
    return FermionOperator(n, M)


def psi_mu_kernel(mu, n: int) -> GrassmannElement:
    """int d^n rho (xi + i rho)^mu exp(-i rho.(xi - theta)), xi on 1..n, theta on n+1..2n.

    This is the kernel of psi^mu with the unit (dirac) Clifford scale.
    """
    _require_even(n, "psi-word kernels")
    total = 3 * n
    check_budget(total, "psi-word kernel")
    X = [GrassmannElement.generator(i, total) for i in range(1, n + 1)]
    T = [GrassmannElement.generator(n + i, total) for i in range(1, n + 1)]
    R = [GrassmannElement.generator(2 * n + i, total) for i in range(1, n + 1)]
    E = GrassmannElement.one(total)
    for i in range(n):
        E = gr_mul(E, GrassmannElement.one(total) + gr_mul(R[i], X[i] - T[i]) * (-1j))
    P = GrassmannElement.one(total)
    for i in (mu.indices if isinstance(mu, MultiIndex) else indices_of(_as_mask(mu))):
        P = gr_mul(P, X[i - 1] + R[i - 1] * 1j)
    r = berezin_partial(gr_mul(P, E), ((1 << n) - 1) << (2 * n))
    return GrassmannElement(r.masks, r.coeffs, 2 * n)


def _coincident(K: GrassmannElement, n: int, sign: int) -> GrassmannElement:
    """K(xi, sign*xi) as a function of n variables."""
    images = [GrassmannElement.generator(i, n) for i in range(1, n + 1)]
    images += [GrassmannElement.generator(i, n) * sign for i in range(1, n + 1)]
    return substitute(K, images)


def fourier_matrix(n: int) -> np.ndarray:
    """Matrix of the Fourier transform on the 2^n basis (even n)."""
    _require_even(n, "fourier")
    M = np.zeros((1 << n, 1 << n), complex)
    for mu in range(1 << n):
        M[:, mu] = fourier(GrassmannElement([mu], [1.0], n)).to_vector(dtype=complex)
    return M


def supertrace(K: FermionOperator, mode: str = "grade", route: str = "matrix"):
    """Supertrace of K.

    mode ``grade``: trace(gamma K); ``plain``: trace(K); ``hodge``: trace(tau K)
    with tau the Fourier involution (the flat Hodge-type duality).
    route ``matrix`` uses the matrix directly, ``kernel`` evaluates Berezin
    integrals of the kernel at coincident (grade) or opposite (plain) points.
    """
    n = K.n
    if mode not in ("grade", "plain", "hodge"):
        raise GrassmannError(f"unknown supertrace mode {mode!r}")
    if route == "matrix":
        if mode == "grade":
            return np.trace(grading_matrix(n) @ K.matrix)
        if mode == "plain":
            return np.trace(K.matrix)
        return np.trace(fourier_matrix(n) @ K.matrix)
    if route != "kernel":
        raise GrassmannError(f"unknown route {route!r}")
    if mode == "hodge":
        raise GrassmannError("the hodge supertrace has no kernel route")
    ker = op_kernel(K)
    return berezin(_coincident(ker, n, 1 if mode == "grade" else -1))


def random_element(rng: np.random.Generator, n: int, n_terms: int | None = None, *,
                   parity: str | None = None, integer: bool = True, complex_: bool = False,
                   exact: bool = False) -> GrassmannElement:
    """Random element used by tests and the selftest (small integer coefficients by default)."""
    pool = np.arange(1 << n, dtype=np.uint64)
    if parity is not None:
        par = np.bitwise_count(pool) & np.uint64(1)
        pool = pool[par == (0 if parity == "even" else 1)]
    k = len(pool) if n_terms is None else min(n_terms, len(pool))
    masks = rng.choice(pool, size=k, replace=False)
    if integer:
        c = rng.integers(-4, 5, size=k).astype(float)
        if complex_:
            c = c + 1j * rng.integers(-4, 5, size=k)
    else:
        c = rng.normal(size=k) + (1j * rng.normal(size=k) if complex_ else 0)
    if exact:
        c = np.array([Fraction(int(v)) for v in c.real], dtype=object)
    return GrassmannElement(masks, c, n)


def all_multi_indices(n: int) -> Iterable[tuple[int, ...]]:
    for r in range(n + 1):
        yield from itertools.combinations(range(1, n + 1), r)
