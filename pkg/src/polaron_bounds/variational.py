"""Moment-based upper bounds on the lowest eigenvalue.

Given moments M_m = <psi|H^m|psi>, the monic polynomial
P_n(x) = x^n + X_1 x^(n-1) + ... + X_n solving the Hankel system
sum_j M_{2n-(i+j)} X_j + M_{2n-i} = 0 (i = 1..n) has real roots; the
smallest one bounds the ground energy from above and does not increase
with n.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .wick import MomentTable, central_moments

__all__ = [
    "BoundResult",
    "MonotonicityError",
    "NonRealRootError",
    "SingularHankelError",
    "bound_sequence",
    "hankel_system",
    "polynomial_roots",
    "second_order_bound_closed",
    "second_order_roots",
    "shift_spectrum",
    "solve_order",
]

log = logging.getLogger(__name__)

TAU_IM = 1e-8
COND_LIMIT = 1e13
MONOTONE_RTOL = 1e-12


class SingularHankelError(np.linalg.LinAlgError):
    """The Hankel matrix is (numerically) rank deficient at this order."""


class NonRealRootError(ValueError):
    """The moment polynomial has complex roots: moments are inconsistent."""


class MonotonicityError(ArithmeticError):
    """A higher-order bound came out above a lower-order one."""


@dataclass
class BoundResult:
    order: int
    coefficients: tuple
    roots: tuple
    shift: float = 0.0
    scale: float = 1.0
    condition: float = 1.0
    conditioning: dict = field(default_factory=dict)

    @property
    def bound(self) -> float:
        return self.roots[0]

    @property
    def gap(self) -> float | None:
        if self.order < 2:
            return None
        return self.roots[1] - self.roots[0]


def _is_exact(values) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in values)


def _solve_exact(A: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    n = len(A)
    M = [list(map(Fraction, row)) + [Fraction(bi)] for row, bi in zip(A, b)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            raise SingularHankelError(f"Hankel matrix of order {n} is singular (exact rank < {n})")
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                factor = M[r][col] / M[col][col]
                M[r] = [x - factor * y for x, y in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


def hankel_system(t: MomentTable, n: int) -> list:
    """Coefficients (1, X_1, ..., X_n) of P_n from the raw moments of ``t``.

    Exact (``Fraction``) moments are solved exactly; float moments raise
    :class:`SingularHankelError` above a condition number of 1e13.
    """
    if n < 1:
        raise ValueError("order must be at least 1")
    M = t.raw
    if len(M) < 2 * n:
        raise ValueError(f"order {n} needs moments up to M_{2 * n - 1}, have up to M_{len(M) - 1}")
    A = [[M[2 * n - (i + j)] for j in range(1, n + 1)] for i in range(1, n + 1)]
    Y = [M[2 * n - i] for i in range(1, n + 1)]
    if _is_exact(M[: 2 * n]):
        X = _solve_exact(A, [-y for y in Y])
        return [Fraction(1)] + X
    A = np.array(A, dtype=float)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularHankelError(f"Hankel matrix of order {n} has condition number {cond:.3g}")
    X = np.linalg.solve(A, -np.array(Y, dtype=float))
    return [1.0] + [float(x) for x in X]


def polynomial_roots(X: Sequence, tau_im: float = TAU_IM) -> tuple[float, ...]:
    """Real roots of sum_i X_i x^(n-i), ascending, via companion eigenvalues."""
    X = [float(x) for x in X]
    if X[0] != 1.0:
        raise ValueError("polynomial must be monic (X_0 = 1)")
    if not all(math.isfinite(x) for x in X):
        raise ValueError("non-finite polynomial coefficient")
    n = len(X) - 1
    if n == 0:
        return ()
    companion = np.zeros((n, n))
    companion[0, :] = -np.array(X[1:])
    companion[1:, :-1] = np.eye(n - 1)
    z = np.linalg.eigvals(companion)
    scale = float(np.max(np.abs(z)))
    if scale > 0 and np.max(np.abs(z.imag)) > tau_im * scale:
        raise NonRealRootError(f"complex roots {z[np.abs(z.imag) > tau_im * scale]}")
    return tuple(sorted(float(r) for r in z.real))


def shift_spectrum(t: MomentTable, s) -> MomentTable:
    """Moments of H - s, by binomial expansion of the raw moments."""
    raw = []
    for m in range(len(t.raw)):
        terms = [math.comb(m, j) * t.raw[j] * (-s) ** (m - j) for j in range(m + 1)]
        raw.append(sum(terms) if _is_exact(terms) else math.fsum(terms))
    raw[0] = 1
    return MomentTable(raw)


def _expand(coeffs_scaled: Sequence[float], s: float, c: float) -> list[float]:
    """Monic coefficients of c^n P((x - s) / c) given those of P."""
    n = len(coeffs_scaled) - 1
    out = np.zeros(n + 1)
    for i, x in enumerate(coeffs_scaled):
        # x c^i (x - s)^(n-i)
        poly = np.poly1d([1.0, -s]) ** (n - i) if n - i else np.poly1d([1.0])
        term = float(x) * c**i * poly.coeffs
        out[i:] += term
    return [float(v) for v in out]


def solve_order(t: MomentTable, n: int) -> BoundResult:
    """Order-n roots, solved in M_1-shifted (and sqrt(K_2)-scaled) variables.

    Float tables are shifted by M_1 and scaled by sqrt(K_2) so that the
    Hankel matrix is well conditioned; exact tables are only shifted, which
    keeps them rational.  Roots are mapped back to the original energy axis.
    """
    if len(t.raw) < 2 * n:
        raise ValueError(f"order {n} needs moments up to M_{2 * n - 1}")
    t = t if t.central is not None else central_moments(t)
    s = t.raw[1]
    K = t.central
    exact = _is_exact(K[: 2 * n])
    if n == 1:
        return BoundResult(1, (1, -s), (s if exact else float(s),), shift=float(s))
    if exact:
        c = 1
        mu = list(K[: 2 * n])
    else:
        K2 = float(K[2])
        if not K2 > 0:
            raise SingularHankelError("K_2 = 0: the trial state is an eigenstate")
        c = math.sqrt(K2)
        mu = [float(K[j]) / c**j for j in range(2 * n)]
    mu[0] = 1
    scaled = MomentTable(mu)
    X = hankel_system(scaled, n)
    A = np.array([[float(mu[2 * n - (i + j)]) for j in range(1, n + 1)] for i in range(1, n + 1)])
    cond = float(np.linalg.cond(A))
    r = polynomial_roots(X)
    roots = tuple(float(s) + c * x for x in r)
    coeffs = _expand([float(x) for x in X], float(s), float(c))
    return BoundResult(
        n, tuple(coeffs), roots, shift=float(s), scale=float(c), condition=cond,
        conditioning={"shift": float(s), "scale": float(c), "condition": cond},
    )


def bound_sequence(t: MomentTable, n_max: int, on_error: str = "truncate") -> list[BoundResult]:
    """Bounds for n = 1..n_max.

    A singular Hankel matrix or complex roots at some order end the sequence
    (``on_error="truncate"``, the valid prefix is returned) or propagate
    (``on_error="raise"``).  A bound that increases with the order always
    raises :class:`MonotonicityError`.
    """
    if on_error not in ("truncate", "raise"):
        raise ValueError("on_error must be 'truncate' or 'raise'")
    if len(t.raw) < 2 * n_max:
        raise ValueError(f"order {n_max} needs moments up to M_{2 * n_max - 1}")
    out: list[BoundResult] = []
    for n in range(1, n_max + 1):
        try:
            res = solve_order(t, n)
        except (SingularHankelError, NonRealRootError) as exc:
            if on_error == "raise":
                raise
            log.info("bound sequence stops at order %d: %s", n, exc)
            break
        if out:
            prev = out[-1].bound
            if res.bound > prev + MONOTONE_RTOL * abs(prev):
                raise MonotonicityError(f"bound at order {n} ({res.bound!r}) exceeds order {n - 1} ({prev!r})")
        out.append(res)
    return out


def second_order_roots(M1: float, K2: float, K3: float) -> tuple[float, float]:
    """Both order-2 roots from the mean and the 2nd and 3rd central moments."""
    if not K2 > 0:
        return M1, M1
    h = K3 / (2 * K2)
    w = math.sqrt(h * h + K2)
    return M1 + h - w, M1 + h + w


def second_order_bound_closed(M1: float, K2: float, K3: float) -> float:
    """M_1 + K_3/(2K_2) - sqrt((K_3/(2K_2))^2 + K_2); M_1 when K_2 <= 0."""
    if not K2 > 0:
        log.warning("K_2 <= 0: trial state is an eigenstate, bound = M_1")
    return second_order_roots(M1, K2, K3)[0]
