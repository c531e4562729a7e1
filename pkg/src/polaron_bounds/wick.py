"""Vacuum moments of the displaced polaron Hamiltonian by Wick contraction.

The transformed Hamiltonian is stored as a constant plus a list of
:class:`OperatorMonomial` families.  A moment <0|H'^m|0> (H' = H - constant)
is computed by walking the m-fold operator product from right to left and
pairing every annihilator with a creator standing to its right.  Each
contraction identifies two wave-vector labels; after all pairings the
labels collapse into open *chains*, one independent wave vector each, whose
two ends carry the couplings.  A fully contracted term is therefore fixed by

* the weight symbols collected along every chain, and
* the dot-product factors between chains (and the external vectors P, C),

and is stored under a canonical key with an exact integer multiplicity.
Numerical values only enter when a kernel set evaluates those keys:

* :class:`ContinuumKernels` -- continuum of modes with the cutoff k0; every
  chain becomes ``8 alpha / pi * R(p, q)`` times an angular average,
* :class:`DiscreteKernels` -- a finite list of explicit modes; every chain is
  summed over the modes (used to cross-check against matrix moments).

Because the enumeration itself is exact, splitting it over workers cannot
change the result; evaluation runs over the sorted keys with ``math.fsum``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import threading
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence, TextIO

import numpy as np

from .closed_form import ClosedForm, DotMonomial, angular_average, evaluate, radial_integral
from .params import FChoice, FVariant, Mode, PolaronParams

__all__ = [
    "DEFAULT_MAX_ORDER",
    "ContinuumKernels",
    "DiscreteKernels",
    "HamiltonianSpec",
    "MomentExpr",
    "MomentOrderError",
    "MomentTable",
    "OperatorMonomial",
    "UnsupportedKernelError",
    "VolumeExponentError",
    "build_discrete_hamiltonian",
    "build_hamiltonian",
    "central_moments",
    "check_hermitian",
    "connected_vacuum_moment",
    "contraction_terms",
    "dump_terms",
    "moment_table",
    "set_partition_moment",
    "symbolic_central_moment",
    "symbolic_moment",
    "vacuum_moment",
]

DEFAULT_MAX_ORDER = 5

# external vectors in dot factors; chains are numbered 0, 1, ...
P_VEC = -1
C_VEC = -2


class MomentOrderError(ValueError):
    pass


class UnsupportedKernelError(ValueError):
    pass


class VolumeExponentError(RuntimeError):
    """A contracted chain did not carry exactly two couplings."""


# ---------------------------------------------------------------------------
# operator monomials


@dataclass(frozen=True)
class OperatorMonomial:
    """``coeff * sum_{labels} weights * dots * ladder``.

    ``ladder`` lists ``(is_creator, label)`` from left to right.  ``weights``
    gives, per label, the scalar kernel symbols: ``"f"`` (displacement f_k),
    ``"c"`` (linear coupling (k+k^2) f_k + V_k) and ``"mag"`` (|k|).  ``dots``
    are full vector products ``(k_x . k_y)``; an entry may also be ``"P"`` or
    ``"C"`` for the total momentum and for ``C = sum_k k f_k^2``.
    """

    family: str
    coeff: int
    ladder: tuple[tuple[bool, int], ...]
    weights: tuple[tuple[str, ...], ...]
    dots: tuple[tuple, ...] = ()

    @property
    def n_labels(self) -> int:
        return len(self.weights)

    @property
    def symbols(self) -> set[str]:
        return {s for w in self.weights for s in w}

    @property
    def externals(self) -> set[str]:
        return {x for d in self.dots for x in d if isinstance(x, str)}

    @property
    def volume_exponent(self) -> Fraction:
        """Powers of the crystal volume before contraction.

        Each label sum carries V**1, each coupling-bearing symbol V**(-1/2).
        """
        n_v = sum(1 for w in self.weights for s in w if s in ("f", "c"))
        return Fraction(self.n_labels) - Fraction(n_v, 2)

    def adjoint(self) -> "OperatorMonomial":
        ladder = tuple((not cr, lab) for cr, lab in reversed(self.ladder))
        return OperatorMonomial(self.family + "^+", self.coeff, ladder, self.weights, self.dots)

    def canonical(self) -> tuple:
        best = None
        for perm in itertools.permutations(range(self.n_labels)):
            lad = tuple((cr, perm[lab]) for cr, lab in self.ladder)
            w = [None] * self.n_labels
            for lab, sym in enumerate(self.weights):
                w[perm[lab]] = tuple(sorted(sym))
            dots = tuple(sorted(tuple(sorted((perm[x] if isinstance(x, int) else x for x in d), key=str)) for d in self.dots))
            key = (lad, tuple(w), dots, self.coeff)
            if best is None or key < best:
                best = key
        return best


def _mono(family, coeff, ladder, weights, dots=()):
    return OperatorMonomial(family, coeff, tuple(ladder), tuple(tuple(w) for w in weights), tuple(dots))


# The ladder families of the displaced Hamiltonian (everything but the
# constant).  Obtained by normal ordering the square (P - sum_k k b_k^+ b_k)^2
# with b_k = a_k + f_k.
_FAMILIES = [
    _mono("number", 1, [(True, 0), (False, 0)], [("mag",)]),
    _mono("recoil", 1, [(True, 0), (False, 0), (True, 1), (False, 1)], [(), ()], [(0, 1)]),
    _mono("linear+", 1, [(True, 0)], [("c",)]),
    _mono("linear-", 1, [(False, 0)], [("c",)]),
    _mono("hop", 2, [(True, 0), (False, 1)], [("f",), ("f",)], [(0, 1)]),
    _mono("pair+", 1, [(True, 0), (True, 1)], [("f",), ("f",)], [(0, 1)]),
    _mono("pair-", 1, [(False, 0), (False, 1)], [("f",), ("f",)], [(0, 1)]),
    _mono("cubic+", 2, [(True, 0), (True, 1), (False, 1)], [("f",), ()], [(0, 1)]),
    _mono("cubic-", 2, [(True, 1), (False, 1), (False, 0)], [("f",), ()], [(0, 1)]),
    _mono("P-number", -2, [(True, 0), (False, 0)], [()], [("P", 0)]),
    _mono("P-linear+", -2, [(True, 0)], [("f",)], [("P", 0)]),
    _mono("P-linear-", -2, [(False, 0)], [("f",)], [("P", 0)]),
    _mono("C-number", 2, [(True, 0), (False, 0)], [()], [("C", 0)]),
    _mono("C-linear+", 2, [(True, 0)], [("f",)], [("C", 0)]),
    _mono("C-linear-", 2, [(False, 0)], [("f",)], [("C", 0)]),
]


def check_hermitian(monomials: Sequence[OperatorMonomial]) -> bool:
    """True when every monomial's adjoint occurs with the same multiplicity."""
    have = Counter(m.canonical() for m in monomials)
    want = Counter(m.adjoint().canonical() for m in monomials)
    return have == want


# ---------------------------------------------------------------------------
# symbolic moment values


class MomentExpr:
    """Polynomial in g = 8 alpha / pi and P with closed-form coefficients.

    ``terms[(c, d)]`` multiplies ``g**c * P**d``.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: dict[tuple[int, int], ClosedForm] | None = None):
        self.terms = {k: v for k, v in (terms or {}).items() if not v.is_zero()}

    @classmethod
    def const(cls, c) -> "MomentExpr":
        return cls({(0, 0): ClosedForm.const(c)})

    def __add__(self, other):
        if isinstance(other, (int, Fraction)):
            other = MomentExpr.const(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v
        return MomentExpr(out)

    __radd__ = __add__

    def __neg__(self):
        return MomentExpr({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return MomentExpr({k: v * other for k, v in self.terms.items()})
        out: dict[tuple[int, int], ClosedForm] = {}
        for (c1, d1), v1 in self.terms.items():
            for (c2, d2), v2 in other.terms.items():
                key = (c1 + c2, d1 + d2)
                out[key] = out[key] + v1 * v2 if key in out else v1 * v2
        return MomentExpr(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = MomentExpr.const(1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, MomentExpr):
            return NotImplemented
        return self.terms == other.terms

    def coefficient(self, c: int, d: int = 0) -> ClosedForm:
        return self.terms.get((c, d), ClosedForm())

    def evaluate(self, alpha: float, k0: float, P: float = 0.0) -> float:
        g = 8.0 * alpha / math.pi
        return math.fsum(g**c * P**d * evaluate(v, k0) for (c, d), v in sorted(self.terms.items()))

    def __repr__(self):
        body = ", ".join(f"g^{c} P^{d}: {v!r}" for (c, d), v in sorted(self.terms.items()))
        return f"MomentExpr({body})"


# ---------------------------------------------------------------------------
# kernel sets


@dataclass(frozen=True)
class ContinuumKernels:
    """Couplings of the continuum model with the cutoff k0.

    Each symbol maps to ``(sign, n_V, power of k, power of 1/(1+k))`` with
    V_k**2 = (16 pi alpha / volume) k; ``None`` marks an identically zero
    kernel.
    """

    alpha: float
    k0: float
    P: float
    variant: FVariant

    @property
    def symbol_table(self) -> dict[str, tuple[int, int, int, int] | None]:
        if self.variant in (FVariant.OPTIMAL_REST, FVariant.SIMPLEST):
            # f_k = -V_k / (k (1+k)); (k+k^2) f_k + V_k = 0
            return {"f": (-1, 1, -1, 1), "c": None, "mag": (1, 0, 1, 0)}
        if self.variant is FVariant.ZERO:
            return {"f": None, "c": (1, 1, 0, 0), "mag": (1, 0, 1, 0)}
        raise UnsupportedKernelError(
            f"f-choice {self.variant.value!r} leaves the k^p/(k+k^2)^q integral family"
        )

    def vanishes(self, mono: OperatorMonomial) -> bool:
        table = self.symbol_table
        if any(table[s] is None for s in mono.symbols):
            return True
        if "P" in mono.externals and self.P == 0:
            return True
        # sum_k k f_k^2 vanishes for every spherically symmetric f
        return "C" in mono.externals

    def fingerprint(self) -> tuple:
        return ("continuum", self.variant.value)


@dataclass(frozen=True, eq=False)
class DiscreteKernels:
    """A finite set of phonon modes with explicit wave vectors.

    ``vectors`` has shape (n, 3); ``V`` and ``f`` are per-mode couplings and
    displacements; ``P`` is the total-momentum vector.  No continuum
    normalization is applied.
    """

    vectors: np.ndarray
    V: np.ndarray
    f: np.ndarray
    P: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=float).reshape(-1, 3))
        n = len(self.vectors)
        for name in ("V", "f"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per mode")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float).reshape(3))

    @property
    def mag(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    @property
    def C(self) -> np.ndarray:
        return (self.vectors * (self.f**2)[:, None]).sum(axis=0)

    @property
    def c(self) -> np.ndarray:
        k = self.mag
        return (k + k**2) * self.f + self.V

    def symbol_array(self, sym: str) -> np.ndarray:
        return {"f": self.f, "c": self.c, "mag": self.mag}[sym]

    def vanishes(self, mono: OperatorMonomial) -> bool:
        if any(not np.any(self.symbol_array(s)) for s in mono.symbols):
            return True
        if "P" in mono.externals and not np.any(self.P):
            return True
        return "C" in mono.externals and not np.any(self.C)

    def constant(self) -> float:
        k = self.mag
        C = self.C
        return float(
            self.P @ self.P
            - 2 * self.P @ C
            + C @ C
            + np.sum((k + k**2) * self.f**2)
            + 2 * np.sum(self.V * self.f)
        )

    def fingerprint(self) -> tuple:
        h = hashlib.sha256()
        for arr in (self.vectors, self.V, self.f, self.P):
            h.update(np.ascontiguousarray(arr).tobytes())
        return ("discrete", h.hexdigest())


# ---------------------------------------------------------------------------
# Hamiltonian


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Displaced Hamiltonian: ``constant + sum(monomials)``.

    ``constant`` is a :class:`MomentExpr` for continuum kernels (it holds
    P^2 - alpha') and a float for discrete kernels.
    """

    monomials: tuple[OperatorMonomial, ...]
    constant: object
    kernels: ContinuumKernels | DiscreteKernels
    params: PolaronParams | None = None
    max_order: int = DEFAULT_MAX_ORDER

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256(repr(tuple(m.canonical() for m in self.monomials)).encode())
        h.update(repr(self.kernels.fingerprint()).encode())
        return h.hexdigest()[:16]

    @property
    def families(self) -> list[str]:
        return [m.family for m in self.monomials]

    def constant_value(self) -> float:
        if isinstance(self.constant, MomentExpr):
            k = self.kernels
            return self.constant.evaluate(k.alpha, k.k0, k.P)
        return float(self.constant)


def build_hamiltonian(params: PolaronParams, f: FChoice, max_order: int = DEFAULT_MAX_ORDER) -> HamiltonianSpec:
    """Continuum displaced Hamiltonian for the given f-choice.

    Families whose kernel vanishes identically are dropped: the linear term
    for the optimal f, every f-term for f = 0, the momentum terms at P = 0,
    and the C = sum_k k f_k^2 terms for every spherically symmetric f.
    """
    if not isinstance(f, FChoice):
        raise TypeError("f must be an FChoice")
    if not f.spherical:
        raise UnsupportedKernelError(
            f"f-choice {f.variant.value!r} is not spherically symmetric; use the polaron-model quadrature"
        )
    kernels = ContinuumKernels(params.alpha, params.k0, params.P, f.variant)
    monos = tuple(m for m in _FAMILIES if not kernels.vanishes(m))
    constant = MomentExpr({(0, 2): ClosedForm.const(1)})
    if f.variant is not FVariant.ZERO:
        # -alpha' = 2 sum V f + sum (k+k^2) f^2 = -sum V^2 / (k+k^2)
        constant = constant + MomentExpr({(1, 0): -radial_integral(3, 1)})
    return HamiltonianSpec(monos, constant, kernels, params, max_order)


def build_discrete_hamiltonian(vectors, V, f, P=(0.0, 0.0, 0.0), max_order: int = DEFAULT_MAX_ORDER) -> HamiltonianSpec:
    """Displaced Hamiltonian restricted to an explicit list of modes."""
    kernels = DiscreteKernels(vectors, V, f, P)
    monos = tuple(m for m in _FAMILIES if not kernels.vanishes(m))
    return HamiltonianSpec(monos, kernels.constant(), kernels, None, max_order)


# ---------------------------------------------------------------------------
# contraction enumeration


def _max_annihilators(monos) -> int:
    return max((sum(1 for cr, _ in m.ladder if not cr) for m in monos), default=0)


class _Enumerator:
    """Right-to-left Wick pairing over every sequence of m monomials."""

    def __init__(self, monos: Sequence[OperatorMonomial], m: int, connected: bool):
        self.monos = list(monos)
        self.m = m
        self.connected = connected
        self.max_ann = _max_annihilators(self.monos)
        self.out: Counter = Counter()

    def run(self, prefix: Sequence[int] = ()) -> Counter:
        """Enumerate with the rightmost factors fixed to ``prefix`` (monomial indices)."""
        self._place(self.m, [], [], [], 1, list(prefix))
        return self.out

    def _place(self, pos, open_, pairs, seq, coeff, forced):
        if pos == 0:
            if not open_:
                self._leaf(pairs, seq, coeff)
            return
        if len(open_) > self.max_ann * pos:
            return
        if self.connected and pos < self.m and not open_:
            return
        choices = [forced[0]] if forced else range(len(self.monos))
        rest = forced[1:]
        factor = pos - 1
        for idx in choices:
            mono = self.monos[idx]
            base = sum(self.monos[s].n_labels for s in seq)
            self._ops(mono, len(mono.ladder) - 1, base, factor, pos, open_, pairs, seq + [idx], coeff * mono.coeff, rest)

    def _ops(self, mono, i, base, factor, pos, open_, pairs, seq, coeff, forced):
        if i < 0:
            self._place(pos - 1, open_, pairs, seq, coeff, forced)
            return
        is_cr, loc = mono.ladder[i]
        gid = base + loc
        if is_cr:
            self._ops(mono, i - 1, base, factor, pos, open_ + [(gid, factor)], pairs, seq, coeff, forced)
            return
        for j, (cg, cf) in enumerate(open_):
            self._ops(
                mono, i - 1, base, factor, pos,
                open_[:j] + open_[j + 1:], pairs + [(gid, cg, factor, cf)], seq, coeff, forced,
            )

    def _leaf(self, pairs, seq, coeff):
        monos = [self.monos[s] for s in seq]
        n_labels = sum(m.n_labels for m in monos)
        parent = list(range(n_labels))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        fparent = list(range(self.m))

        def ffind(x):
            while fparent[x] != x:
                fparent[x] = fparent[fparent[x]]
                x = fparent[x]
            return x

        for a, c, fa, fc in pairs:
            ra, rc = find(a), find(c)
            if ra != rc:
                parent[ra] = rc
            ga, gc = ffind(fa), ffind(fc)
            if ga != gc:
                fparent[ga] = gc
        if self.connected and len({ffind(x) for x in range(self.m)}) > 1:
            return
        # chains: root -> collected symbols
        syms: dict[int, list[str]] = {}
        dots = []
        base = 0
        for mono in monos:
            for loc, w in enumerate(mono.weights):
                syms.setdefault(find(base + loc), []).extend(w)
            for d in mono.dots:
                dots.append(tuple(find(base + x) if isinstance(x, int) else x for x in d))
            base += mono.n_labels
        self.out[_raw_key(syms, dots)] += coeff


def _raw_key(syms: dict[int, list[str]], dots: list[tuple]) -> tuple:
    roots = sorted(syms, key=lambda r: (sorted(syms[r]), r))
    index = {r: i for i, r in enumerate(roots)}
    ext = {"P": P_VEC, "C": C_VEC}
    chains = tuple(tuple(sorted(syms[r])) for r in roots)
    mapped = []
    for x, y in dots:
        a = index[x] if isinstance(x, int) else ext[x]
        b = index[y] if isinstance(y, int) else ext[y]
        mapped.append((min(a, b), max(a, b)))
    return chains, tuple(sorted(mapped))


@lru_cache(maxsize=None)
def _canonical_key(key: tuple) -> tuple:
    chains, dots = key
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(chains):
        groups.setdefault(c, []).append(i)
    group_list = [groups[c] for c in sorted(groups)]
    best = None
    for perms in itertools.product(*(itertools.permutations(g) for g in group_list)):
        relabel = {}
        for g, p in zip(group_list, perms):
            for old, new in zip(g, p):
                relabel[old] = new
        mapped = tuple(sorted(
            (min(relabel.get(a, a), relabel.get(b, b)), max(relabel.get(a, a), relabel.get(b, b)))
            for a, b in dots
        ))
        if best is None or mapped < best:
            best = mapped
    return chains, best


def _enumerate_task(args):
    monos, m, connected, prefix = args
    return _Enumerator(monos, m, connected).run(prefix)


def contraction_terms(spec: HamiltonianSpec, m: int, connected: bool = False, workers: int = 1) -> Counter:
    """Exact multiplicities of canonical contraction terms of <0|H'^m|0>.

    H' is the spec without its constant.  With ``connected`` only pairings
    linking all m factors are kept.  ``workers > 1`` spreads the enumeration
    over processes; the merged counter is identical for any worker count.
    """
    if m < 0:
        raise ValueError("moment order must be non-negative")
    if m > spec.max_order:
        raise MomentOrderError(f"order {m} exceeds the configured maximum {spec.max_order}")
    if m == 0:
        return Counter({((), ()): 1})
    if not spec.monomials:
        return Counter()
    key = (spec.monomials, m, connected)
    with _terms_lock:
        hit = _terms_cache.get(key)
    if hit is not None:
        return Counter(hit)
    out = _enumerate_all(list(spec.monomials), m, connected, workers)
    with _terms_lock:
        _terms_cache.setdefault(key, out)
    return Counter(out)


# enumeration results depend only on the family list; shared across kernels
_terms_cache: dict[tuple, Counter] = {}
_terms_lock = threading.Lock()


def _enumerate_all(monos: list, m: int, connected: bool, workers: int) -> Counter:
    depth = 1 if m == 1 else 2
    prefixes = list(itertools.product(range(len(monos)), repeat=depth))
    tasks = [(tuple(monos), m, connected, p) for p in prefixes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_enumerate_task, tasks))
    else:
        parts = [_enumerate_task(t) for t in tasks]
    raw: Counter = Counter()
    for part in parts:
        raw.update(part)
    out: Counter = Counter()
    for key in sorted(raw):
        if raw[key]:
            out[_canonical_key(key)] += raw[key]
    return Counter({k: v for k, v in out.items() if v})


# ---------------------------------------------------------------------------
# term evaluation


@lru_cache(maxsize=None)
def _continuum_term(chains: tuple, dots: tuple, table_key: tuple) -> tuple[int, int, int, tuple, Fraction]:
    """Reduce a canonical term to (sign, n_chains, P power, radial (p,q) list, angular)."""
    table = dict(table_key)
    sign = 1
    kpow = [0] * len(chains)
    qpow = [0] * len(chains)
    for i, symbols in enumerate(chains):
        n_v = 0
        for s in symbols:
            entry = table[s]
            if entry is None:
                return 0, 0, 0, (), Fraction(0)
            sg, nv, kp, qp = entry
            sign *= sg
            n_v += nv
            kpow[i] += kp
            qpow[i] += qp
        if n_v != 2:
            raise VolumeExponentError(f"chain {symbols} carries {n_v} couplings; the volume does not cancel")
    p_power = 0
    angular = []
    for a, b in dots:
        if a == C_VEC or b == C_VEC:
            raise UnsupportedKernelError("C-dependent term in a spherically symmetric continuum")
        if a == P_VEC:
            p_power += 1
            kpow[b] += 1
            angular.append(("P", b))
        elif a == b:
            kpow[a] += 2
        else:
            kpow[a] += 1
            kpow[b] += 1
            angular.append((a, b))
    avg = angular_average(DotMonomial(angular)) if angular else Fraction(1)
    # measure k^2 dk and V_k^2 ~ k: k^(3 + kpow) (1+k)^-q = k^(3+kpow+q) / (k+k^2)^q
    radial = tuple(sorted((3 + kp + qp, qp) for kp, qp in zip(kpow, qpow)))
    for p, q in radial:
        if p < q:
            raise UnsupportedKernelError(f"radial factor k^{p}/(k+k^2)^{q} diverges")
    return sign, len(chains), p_power, radial, avg


def _table_key(kernels: ContinuumKernels) -> tuple:
    return tuple(sorted(kernels.symbol_table.items()))


@lru_cache(maxsize=None)
def _radial_product(radial: tuple) -> ClosedForm:
    out = ClosedForm.const(1)
    for p, q in radial:
        out = out * radial_integral(p, q)
    return out


def _continuum_symbolic(terms: Counter, kernels: ContinuumKernels) -> MomentExpr:
    tk = _table_key(kernels)
    grouped: dict[tuple, Fraction] = {}
    for (chains, dots), count in sorted(terms.items()):
        sign, nc, pp, radial, avg = _continuum_term(chains, dots, tk)
        if not avg or not sign:
            continue
        key = (nc, pp, radial)
        grouped[key] = grouped.get(key, Fraction(0)) + count * sign * avg
    out: dict[tuple[int, int], ClosedForm] = {}
    for (nc, pp, radial), c in sorted(grouped.items()):
        if not c:
            continue
        val = _radial_product(radial) * c
        out[(nc, pp)] = out[(nc, pp)] + val if (nc, pp) in out else val
    return MomentExpr(out)


@lru_cache(maxsize=4096)
def _radial_float(p: int, q: int, k0: float) -> float:
    return evaluate(radial_integral(p, q), k0)


def _continuum_float(terms: Counter, kernels: ContinuumKernels) -> float:
    tk = _table_key(kernels)
    g = 8.0 * kernels.alpha / math.pi
    values = []
    for (chains, dots), count in sorted(terms.items()):
        sign, nc, pp, radial, avg = _continuum_term(chains, dots, tk)
        if not avg or not sign:
            continue
        v = float(count * sign * avg) * g**nc * kernels.P**pp
        for p, q in radial:
            v *= _radial_float(p, q, kernels.k0)
        values.append(v)
    return math.fsum(values)


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _discrete_float(terms: Counter, kernels: DiscreteKernels) -> float:
    vec = kernels.vectors
    gram = vec @ vec.T
    ksq = np.einsum("ij,ij->i", vec, vec)
    ext = {P_VEC: vec @ kernels.P, C_VEC: vec @ kernels.C}
    arrays = {s: kernels.symbol_array(s) for s in ("f", "c", "mag")}
    values = []
    for (chains, dots), count in sorted(terms.items()):
        if not chains:
            values.append(float(count))
            continue
        if len(chains) > len(_LETTERS):
            raise UnsupportedKernelError("too many chains for einsum")
        operands, subs = [], []
        for i, symbols in enumerate(chains):
            w = np.ones(len(vec))
            for s in symbols:
                w = w * arrays[s]
            operands.append(w)
            subs.append(_LETTERS[i])
        for a, b in dots:
            if a < 0:
                operands.append(ext[a])
                subs.append(_LETTERS[b])
            elif a == b:
                operands.append(ksq)
                subs.append(_LETTERS[a])
            else:
                operands.append(gram)
                subs.append(_LETTERS[a] + _LETTERS[b])
        expr = ",".join(subs) + "->"
        values.append(count * float(np.einsum(expr, *operands, optimize=len(operands) > 3)))
    return math.fsum(values)


def _evaluate_terms(terms: Counter, spec: HamiltonianSpec) -> float:
    if isinstance(spec.kernels, ContinuumKernels):
        return _continuum_float(terms, spec.kernels)
    return _discrete_float(terms, spec.kernels)


# ---------------------------------------------------------------------------
# public moment API


def _exact_wanted(spec: HamiltonianSpec, m: int) -> bool:
    return (
        isinstance(spec.kernels, ContinuumKernels)
        and spec.params is not None
        and spec.params.mode is Mode.EXACT
    )


def _central(spec: HamiltonianSpec, m: int, workers: int = 1):
    """<0|H'^m|0>, exact MomentExpr (continuum) or float."""
    terms = contraction_terms(spec, m, connected=False, workers=workers)
    if isinstance(spec.kernels, ContinuumKernels) and _exact_wanted(spec, m):
        return _continuum_symbolic(terms, spec.kernels)
    return _evaluate_terms(terms, spec)


def symbolic_moment(spec: HamiltonianSpec, m: int, workers: int = 1) -> MomentExpr:
    """Exact <0|H^m|0> as a polynomial in 8 alpha/pi and P over closed forms."""
    if not isinstance(spec.kernels, ContinuumKernels):
        raise UnsupportedKernelError("symbolic moments need continuum kernels")
    const = spec.constant
    total = MomentExpr()
    for j in range(m + 1):
        terms = contraction_terms(spec, j, workers=workers)
        cj = _continuum_symbolic(terms, spec.kernels)
        total = total + cj * const ** (m - j) * math.comb(m, j)
    return total


def symbolic_central_moment(spec: HamiltonianSpec, m: int, workers: int = 1) -> MomentExpr:
    """Exact <0|(H - <0|H|0>)^m|0> for m >= 2 (H minus its constant for m = 1)."""
    if not isinstance(spec.kernels, ContinuumKernels):
        raise UnsupportedKernelError("symbolic moments need continuum kernels")
    if m > spec.max_order:
        raise MomentOrderError(f"order {m} exceeds the configured maximum {spec.max_order}")
    return _continuum_symbolic(contraction_terms(spec, m, workers=workers), spec.kernels)


def vacuum_moment(spec: HamiltonianSpec, m: int, workers: int = 1) -> float:
    """<0|H^m|0> by direct enumeration of all full contractions.

    In exact mode the closed form is assembled first and evaluated at the
    end; otherwise every term is evaluated and summed with ``math.fsum``.
    """
    if m > spec.max_order:
        raise MomentOrderError(f"order {m} exceeds the configured maximum {spec.max_order}")
    if m == 0:
        return 1.0
    if _exact_wanted(spec, m):
        k = spec.kernels
        return symbolic_moment(spec, m, workers).evaluate(k.alpha, k.k0, k.P)
    c = spec.constant_value()
    parts = [math.comb(m, j) * c ** (m - j) * _evaluate_terms(contraction_terms(spec, j, workers=workers), spec) for j in range(m + 1)]
    return math.fsum(parts)


_connected_cache: dict[tuple[str, int, str], float] = {}
_cache_lock = threading.Lock()


def connected_vacuum_moment(spec: HamiltonianSpec, m: int, workers: int = 1) -> float:
    """Connected part (cumulant) of order m of H in the phonon vacuum.

    Only contraction patterns joining all m factors are enumerated.  For
    m = 1 the constant is included.  Results are cached per spec fingerprint.
    """
    if m < 1:
        raise ValueError("connected parts start at order 1")
    if m > spec.max_order:
        raise MomentOrderError(f"order {m} exceeds the configured maximum {spec.max_order}")
    mode = spec.params.mode.value if spec.params is not None else "float"
    key = (spec.fingerprint + repr(_param_key(spec)), m, mode)
    with _cache_lock:
        if key in _connected_cache:
            return _connected_cache[key]
    terms = contraction_terms(spec, m, connected=True, workers=workers)
    if _exact_wanted(spec, m):
        k = spec.kernels
        value = _continuum_symbolic(terms, k).evaluate(k.alpha, k.k0, k.P)
    else:
        value = _evaluate_terms(terms, spec)
    if m == 1:
        value += spec.constant_value()
    with _cache_lock:
        _connected_cache.setdefault(key, value)
        return _connected_cache[key]


def _param_key(spec: HamiltonianSpec) -> tuple:
    k = spec.kernels
    if isinstance(k, ContinuumKernels):
        return (k.alpha, k.k0, k.P)
    return ()


def set_partition_moment(cumulants: dict[int, float], m: int) -> float:
    """Moment of order m from cumulants via the set-partition recursion.

    M_m = sum_{j=1}^{m} C(m-1, j-1) kappa_j M_{m-j}.
    """
    moments = [1.0]
    for n in range(1, m + 1):
        moments.append(math.fsum(math.comb(n - 1, j - 1) * cumulants[j] * moments[n - j] for j in range(1, n + 1)))
    return moments[m]


# ---------------------------------------------------------------------------
# moment tables


@dataclass
class MomentTable:
    """Raw moments M_0..M_max and central moments K_0..K_max.

    ``central`` is filled either directly (engine) or from ``raw`` by
    :func:`central_moments`.  Entries may be floats or exact Fractions.
    """

    raw: list
    central: list | None = None

    def __post_init__(self):
        if not self.raw:
            raise ValueError("moment table needs at least M_0")
        if self.raw[0] != 1:
            raise ValueError(f"M_0 must be 1, got {self.raw[0]}")

    @property
    def max_order(self) -> int:
        return len(self.raw) - 1

    @property
    def reference_energy(self):
        return self.raw[1]

    @property
    def K2(self):
        return self._central()[2]

    @property
    def K3(self):
        return self._central()[3]

    def _central(self):
        if self.central is None:
            self.central = central_moments(self).central
        return self.central


def _binomial_shift(moments: Sequence, s) -> list:
    out = []
    for m in range(len(moments)):
        terms = [math.comb(m, j) * moments[j] * (-s) ** (m - j) for j in range(m + 1)]
        out.append(sum(terms) if _all_exact(terms) else math.fsum(terms))
    return out


def _all_exact(values) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in values)


def central_moments(t: MomentTable) -> MomentTable:
    """Fill K_m = <(H - M_1)^m> by binomial expansion of the raw moments."""
    if len(t.raw) < 2:
        return MomentTable(list(t.raw), [1])
    central = _binomial_shift(t.raw, t.raw[1])
    central[1] = 0 * central[1]
    return MomentTable(list(t.raw), central)


def moment_table(spec: HamiltonianSpec, max_order: int, workers: int = 1) -> MomentTable:
    """Raw and central vacuum moments up to ``max_order``.

    Central moments come straight from <0|H'^m|0> (every ladder monomial has
    zero vacuum expectation, so H' is already centred); raw moments follow
    by the binomial expansion around the constant.
    """
    if max_order > spec.max_order:
        raise MomentOrderError(f"order {max_order} exceeds the configured maximum {spec.max_order}")
    if _exact_wanted(spec, max_order):
        k = spec.kernels
        exprs = [MomentExpr.const(1)] + [
            _continuum_symbolic(contraction_terms(spec, j, workers=workers), k) for j in range(1, max_order + 1)
        ]
        central = [e.evaluate(k.alpha, k.k0, k.P) for e in exprs]
    else:
        central = [1.0] + [_evaluate_terms(contraction_terms(spec, j, workers=workers), spec) for j in range(1, max_order + 1)]
    shift = central[1]
    c = spec.constant_value() + shift
    centred = _binomial_shift(central, shift) if shift else list(central)
    raw = _binomial_shift(centred, -c)
    raw[0] = 1
    return MomentTable(raw, centred)


def dump_terms(spec: HamiltonianSpec, m: int, out: TextIO, connected: bool = False) -> int:
    """Write one contraction term per line; returns the number of lines.

    Continuum format (tab separated)::

        count  radial=(p,q);(p,q)...  angular=(a.b)(b.P)...  <avg>=r  g^c P^d

    Discrete specs dump the raw chain structure instead of radial factors.
    """
    terms = contraction_terms(spec, m, connected=connected)
    n = 0
    for (chains, dots), count in sorted(terms.items()):
        ang = "".join(f"({_lab(a)}.{_lab(b)})" for a, b in dots if a != b) or "1"
        if isinstance(spec.kernels, ContinuumKernels):
            sign, nc, pp, radial, avg = _continuum_term(chains, dots, _table_key(spec.kernels))
            if not sign:
                continue
            rad = ";".join(f"({p},{q})" for p, q in radial)
            out.write(f"{count * sign}\tradial={rad}\tangular={ang}\t<avg>={avg}\tg^{nc} P^{pp}\n")
        else:
            ch = ";".join("*".join(c) or "1" for c in chains)
            out.write(f"{count}\tchains={ch}\tangular={ang}\n")
        n += 1
    return n


def _lab(x):
    return {P_VEC: "P", C_VEC: "C"}.get(x, f"k{x}")
