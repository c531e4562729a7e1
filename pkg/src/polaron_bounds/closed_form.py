"""Exact radial integrals and isotropic angular averages.

Every radial integral met in the vacuum moments has the form

    R(p, q; k0) = int_0^k0 k**p / (k + k**2)**q dk,

which the substitution u = 1 + k turns into a finite Laurent polynomial in u
plus, when the exponent -1 is hit, a ``ln u`` term.  Products of such values
(needed once several phonon lines meet in one moment) stay inside the ring
spanned by ``u**e * ln(u)**b``, so :class:`ClosedForm` stores exactly that:
rational coefficients keyed by ``(e, b)``.  The representation is canonical
because ``u`` and ``ln u`` are algebraically independent, which makes
equality of closed forms a structural test.
"""

from __future__ import annotations

import itertools
from collections import Counter
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Hashable, Iterable, Mapping

import mpmath

__all__ = [
    "ClosedForm",
    "DivergentIntegralError",
    "DotMonomial",
    "angular_average",
    "evaluate",
    "radial_integral",
]

# Working precision for evaluate(); coefficients can reach ~1e6 with
# alternating signs at p ~ 12, so double precision is not enough.
_EVAL_DPS = 50


class DivergentIntegralError(ValueError):
    """Raised for R(p, q) with p < q (non-integrable at the origin)."""


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    raise TypeError(f"exact coefficient expected, got {type(x).__name__}")


class ClosedForm:
    """Exact function of the cutoff k0 in the basis ``(1+k0)**e * ln(1+k0)**b``.

    Instances are immutable.  Supports ``+``, ``-``, ``*`` (by another closed
    form, an ``int`` or a ``Fraction``) and integer powers.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[tuple[int, int], Fraction] | None = None):
        clean = {}
        for key, c in (terms or {}).items():
            c = _frac(c)
            if c:
                clean[(int(key[0]), int(key[1]))] = c
        self._terms = clean
        self._hash = None

    # -- constructors -------------------------------------------------
    @classmethod
    def const(cls, c) -> "ClosedForm":
        return cls({(0, 0): _frac(c)})

    @classmethod
    def k0_power(cls, a: int) -> "ClosedForm":
        """k0**a expanded as ((1+k0) - 1)**a."""
        if a < 0:
            raise ValueError("negative powers of k0 are outside the basis")
        return cls({(e, 0): Fraction(comb(a, e) * (-1) ** (a - e)) for e in range(a + 1)})

    @classmethod
    def log(cls) -> "ClosedForm":
        return cls({(0, 1): Fraction(1)})

    @classmethod
    def inv_power(cls, j: int) -> "ClosedForm":
        """(1+k0)**(-j)."""
        return cls({(-j, 0): Fraction(1)})

    # -- arithmetic ---------------------------------------------------
    @property
    def coefficients(self) -> dict[tuple[int, int], Fraction]:
        """Raw ``{(e, b): c}`` map in the ``u = 1 + k0`` representation."""
        return dict(self._terms)

    def _coerce(self, other) -> "ClosedForm":
        if isinstance(other, ClosedForm):
            return other
        if isinstance(other, (int, Fraction)):
            return ClosedForm.const(other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for k, c in other._terms.items():
            out[k] = out.get(k, 0) + c
        return ClosedForm(out)

    __radd__ = __add__

    def __neg__(self):
        return ClosedForm({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return ClosedForm({k: c * other for k, c in self._terms.items()})
        if not isinstance(other, ClosedForm):
            return NotImplemented
        out: dict[tuple[int, int], Fraction] = {}
        for (e1, b1), c1 in self._terms.items():
            for (e2, b2), c2 in other._terms.items():
                key = (e1 + e2, b1 + b2)
                out[key] = out.get(key, 0) + c1 * c2
        return ClosedForm(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            return NotImplemented
        out = ClosedForm.const(1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def is_zero(self) -> bool:
        return not self._terms

    # -- views --------------------------------------------------------
    def terms(self) -> dict[tuple[str, int, int], Fraction]:
        """Coefficients in the k0 basis.

        Keys are ``(kind, exponent, log_power)`` with ``kind`` one of
        ``"const"``, ``"power"`` (k0**a, a >= 1) or ``"invpow"``
        ((1+k0)**-j, j >= 1); each is multiplied by ``ln(1+k0)**log_power``.
        """
        out: dict[tuple[str, int, int], Fraction] = {}

        def put(key, c):
            out[key] = out.get(key, 0) + c

        for (e, b), c in self._terms.items():
            if e < 0:
                put(("invpow", -e, b), c)
                continue
            for a in range(e + 1):
                key = ("const", 0, b) if a == 0 else ("power", a, b)
                put(key, c * comb(e, a))
        return {k: c for k, c in sorted(out.items()) if c}

    def __repr__(self):
        if not self._terms:
            return "ClosedForm(0)"
        parts = []
        for (kind, a, b), c in self.terms().items():
            base = {"const": "", "power": f"k0^{a}", "invpow": f"(1+k0)^-{a}"}[kind]
            logs = "" if b == 0 else ("ln(1+k0)" if b == 1 else f"ln(1+k0)^{b}")
            sym = "*".join(s for s in (base, logs) if s)
            parts.append(f"{c}*{sym}" if sym else f"{c}")
        return "ClosedForm(" + " + ".join(parts) + ")"

    def evaluate(self, k0: float) -> float:
        return evaluate(self, k0)


def evaluate(cf: ClosedForm, k0) -> float:
    """Numerical value of ``cf`` at cutoff ``k0`` (> 0, or exactly 0)."""
    if k0 < 0:
        raise ValueError("k0 must be non-negative")
    with mpmath.workdps(_EVAL_DPS):
        u = 1 + mpmath.mpf(k0)
        lu = mpmath.log(u)
        total = mpmath.mpf(0)
        for (e, b), c in cf._terms.items():
            term = mpmath.mpf(c.numerator) / c.denominator * u**e
            if b:
                term *= lu**b
            total += term
        return float(total)


@lru_cache(maxsize=None)
def radial_integral(p: int, q: int) -> ClosedForm:
    """Exact ``int_0^k0 k**p / (k + k**2)**q dk`` as a function of k0."""
    if p < 0 or q < 0:
        raise ValueError("exponents must be non-negative")
    if p < q:
        raise DivergentIntegralError(f"integral diverges at k=0 for p={p} < q={q}")
    r = p - q
    # k**r (1+k)**-q with u = 1+k  ->  sum_i C(r,i) (-1)**(r-i) u**(i-q)
    out: dict[tuple[int, int], Fraction] = {}
    for i in range(r + 1):
        c = Fraction(comb(r, i) * (-1) ** (r - i))
        e = i - q
        if e == -1:
            out[(0, 1)] = out.get((0, 1), 0) + c
        else:
            c = c / (e + 1)
            out[(e + 1, 0)] = out.get((e + 1, 0), 0) + c
            out[(0, 0)] = out.get((0, 0), 0) - c
    return ClosedForm(out)


# ---------------------------------------------------------------------------
# angular averages


class DotMonomial:
    """Product of dot products of unit vectors, e.g. (a.b)**2 (b.c).

    ``factors`` maps unordered pairs of labels to multiplicities.  Self pairs
    (u.u) are unit and dropped on construction.
    """

    __slots__ = ("factors",)

    def __init__(self, factors: Iterable[tuple[Hashable, Hashable]] | Mapping = ()):
        if isinstance(factors, Mapping):
            items = factors.items()
        else:
            items = Counter(factors).items()
        clean: Counter = Counter()
        for pair, mult in items:
            u, v = pair
            if u == v or mult == 0:
                continue
            clean[_pair(u, v)] += mult
        self.factors = clean

    @property
    def vectors(self) -> list:
        seen = {}
        for (u, v) in self.factors:
            seen[u] = None
            seen[v] = None
        return list(seen)

    def degree(self, label) -> int:
        return sum(m for (u, v), m in self.factors.items() if label in (u, v))

    def __repr__(self):
        body = " ".join(f"({u}.{v})^{m}" if m > 1 else f"({u}.{v})" for (u, v), m in sorted(self.factors.items(), key=repr))
        return f"DotMonomial({body or '1'})"


def _pair(u, v):
    return (u, v) if repr(u) <= repr(v) else (v, u)


def _canonical(factors: Mapping) -> tuple:
    """Relabel vectors to 0..n-1 by first appearance in a sorted scan."""
    # Not a full graph canonicalization; only used as a memo key.
    order: dict = {}
    for (u, v) in sorted(factors, key=repr):
        for w in (u, v):
            if w not in order:
                order[w] = len(order)
    out = Counter()
    for (u, v), m in factors.items():
        a, b = order[u], order[v]
        out[(min(a, b), max(a, b))] += m
    return tuple(sorted(out.items()))


def _matchings(items: list) -> Iterable[list[tuple]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for tail in _matchings(rest[:i] + rest[i + 1:]):
            yield [(first, other)] + tail


def _double_factorial_odd(n: int) -> int:
    # (2n+1)!!
    out = 1
    for j in range(1, 2 * n + 2, 2):
        out *= j
    return out


@lru_cache(maxsize=200_000)
def _average(key: tuple, pick: str) -> Fraction:
    factors = Counter(dict(key))
    if not factors:
        return Fraction(1)
    degree: Counter = Counter()
    for (u, v), m in factors.items():
        degree[u] += m
        degree[v] += m
    if any(d % 2 for d in degree.values()):
        return Fraction(0)
    if pick == "lowest":
        target = min(degree, key=lambda w: (degree[w], w))
    else:
        target = max(degree, key=lambda w: (degree[w], w))
    partners = []
    rest = Counter()
    for (u, v), m in factors.items():
        if target == u:
            partners.extend([v] * m)
        elif target == v:
            partners.extend([u] * m)
        else:
            rest[(u, v)] += m
    reduced: Counter = Counter()
    for matching in _matchings(partners):
        new = Counter(rest)
        for (x, y) in matching:
            if x != y:
                new[(min(x, y), max(x, y))] += 1
        reduced[_canonical(new)] += 1
    total = Fraction(0)
    for sub, count in reduced.items():
        total += count * _average(sub, pick)
    return total / _double_factorial_odd(len(partners) // 2)


def angular_average(m: DotMonomial, pick: str = "lowest") -> Fraction:
    """Exact average of ``m`` over independent uniform orientations.

    Vectors are eliminated one at a time with the isotropic tensor identity
    <n_i1 ... n_i2n> = (sum over pairings of deltas) / (2n+1)!!.  ``pick``
    selects the elimination order ("lowest" or "highest" degree first); the
    result does not depend on it.
    """
    if pick not in ("lowest", "highest"):
        raise ValueError("pick must be 'lowest' or 'highest'")
    return _average(_canonical(m.factors), pick)
