"""Acoustical-polaron closed forms, the moving polaron and effective mass.

Units: energies in 2 m s**2, wave vectors in 2 m s / hbar.  With
V_k**2 = 16 pi alpha k / volume, a continuum sum of V_k**2 g(k, cos) is
(4 alpha / pi) int_0^k0 k**3 dk int_{-1}^{1} g dx.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import constants
from scipy.optimize import brentq

from .closed_form import ClosedForm, radial_integral
from .params import OPTIMAL_REST, FChoice, FVariant, PolaronParams
from .variational import second_order_bound_closed
from .wick import build_hamiltonian, symbolic_central_moment

__all__ = [
    "ConvergenceError",
    "EtaSolution",
    "FitResult",
    "SubsonicError",
    "STRONG_COUPLING_MULTIPLIER",
    "bound_moving",
    "coupling_from_material",
    "e_strong",
    "e_strong_alt",
    "e_var2",
    "e_weak",
    "e_weak_quadrature",
    "effective_mass_estimate",
    "energy_unit",
    "engine_f_functions",
    "engine_k2_k3",
    "f_functions",
    "f_function_discrepancy",
    "printed_k2_k3",
    "solve_eta",
    "strong_coupling_region",
    "variational_energy",
    "wavevector_unit",
]

log = logging.getLogger(__name__)

STRONG_COUPLING_MULTIPLIER = 1.0
RADIAL_NODES = 256
ANGULAR_NODES = 64
QUAD_TOL = 1e-10
ETA_TOL = 1e-12


class SubsonicError(ValueError):
    """2 P (1 - eta) >= 1: some phonon denominator is not positive."""


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# material constants


def coupling_from_material(D: float, rho: float, s: float, m: float) -> float:
    """alpha = D^2 m^2 / (8 pi rho hbar^3 s), all inputs in SI units.

    D is the deformation potential (J), rho the mass density (kg/m^3), s the
    sound velocity (m/s) and m the band mass (kg).
    """
    for name, x in (("D", D), ("rho", rho), ("s", s), ("m", m)):
        if not x > 0:
            raise ValueError(f"{name} must be positive, got {x}")
    return D**2 * m**2 / (8 * math.pi * rho * constants.hbar**3 * s)


def energy_unit(s: float, m: float) -> float:
    """The energy unit 2 m s^2 in joules."""
    return 2 * m * s**2


def wavevector_unit(s: float, m: float) -> float:
    """The wave-vector unit 2 m s / hbar in 1/m."""
    return 2 * m * s / constants.hbar


# ---------------------------------------------------------------------------
# rest-frame bounds


def _check(alpha, k0):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not k0 > 0:
        raise ValueError(f"k0 must be positive, got {k0}")


def e_weak(alpha: float, k0: float) -> float:
    """Weak-coupling bound -(4 alpha/pi) [2 ln(1+k0) + k0^2 - 2 k0]."""
    _check(alpha, k0)
    if k0 < 1e-3:
        # series of the bracket: 2 k0^3/3 - k0^4/2 + 2 k0^5/5 - ...
        bracket = math.fsum(2 * (-1) ** (j + 1) * k0**j / j for j in range(3, 30))
    else:
        bracket = 2 * math.log1p(k0) + k0 * k0 - 2 * k0
    return -4 * alpha / math.pi * bracket


def e_weak_quadrature(alpha: float, k0: float) -> float:
    """-sum_k V_k^2/(k + k^2) by direct 3D quadrature of the continuum sum."""
    from scipy.integrate import quad

    # sum_k -> volume/(2 pi)^3 int d^3k ;  V^2 = 16 pi alpha k / volume
    radial, _ = quad(lambda k: k**2 * (16 * math.pi * alpha * k) / (k + k * k), 0.0, k0, epsabs=0.0, epsrel=1e-13)
    return -radial * 4 * math.pi / (2 * math.pi) ** 3


def e_strong(alpha: float, k0: float) -> float:
    """Strong-coupling bound -(8 alpha/3 pi) k0^3 + 2 sqrt(2) (3 alpha/5 pi)^(1/2) k0^(5/2)."""
    _check(alpha, k0)
    return -8 * alpha / (3 * math.pi) * k0**3 + 2 * math.sqrt(2) * math.sqrt(3 * alpha / (5 * math.pi)) * k0**2.5


def e_strong_alt(alpha: float, k0: float) -> float:
    """Same value as :func:`e_strong`, factored as k0^(5/2) (b sqrt(alpha) - a alpha sqrt(k0))."""
    a = 8 / (3 * math.pi)
    b = math.sqrt(24 / (5 * math.pi))
    return k0 * k0 * math.sqrt(k0) * (b * math.sqrt(alpha) - a * alpha * math.sqrt(k0))


def strong_coupling_region(alpha: float, k0: float) -> bool:
    """Advisory test alpha > 15 pi / (32 k0), strict.

    The "much greater" of the original condition is rendered with
    :data:`STRONG_COUPLING_MULTIPLIER` (1).  Affects no computation.
    """
    _check(alpha, k0)
    return alpha > STRONG_COUPLING_MULTIPLIER * 15 * math.pi / (32 * k0)


# -- F functions ------------------------------------------------------------

_K = ClosedForm.k0_power
_LOG = ClosedForm.log()
_INV = ClosedForm.inv_power(1)
_ONE = ClosedForm.const(1)


@lru_cache(maxsize=None)
def f_functions() -> tuple[ClosedForm, ClosedForm, ClosedForm]:
    """(F1, F2, F3) in their reference form, as closed forms in k0."""
    F1 = -_K(1) + _K(2) * Fraction(1, 2) + _LOG * 3 + _INV - _ONE
    F2 = _K(1) * 3 - _K(2) + _K(3) * Fraction(1, 3) - _LOG * 4 - _INV + _ONE
    F3 = (-_K(1) * 4 + _K(2) * Fraction(3, 2) - _K(3) * Fraction(2, 3) + _K(4) * Fraction(1, 4)
          + _LOG * 5 + _INV - _ONE)
    return F1, F2, F3


def engine_f_functions() -> tuple[ClosedForm, ClosedForm, ClosedForm]:
    """The radial integrals the contraction engine actually produces.

    F1 = int k^3/(1+k)^2, F2 = int k^4/(1+k)^2, F3 = int k^5/(1+k)^2 over
    [0, k0], i.e. R(5,2), R(6,2), R(7,2).
    """
    return radial_integral(5, 2), radial_integral(6, 2), radial_integral(7, 2)


def f_function_discrepancy() -> dict[str, ClosedForm]:
    """engine - printed for each F function (zero where they agree)."""
    printed = f_functions()
    derived = engine_f_functions()
    return {f"F{i + 1}": d - p for i, (p, d) in enumerate(zip(printed, derived))}


def printed_k2_k3(alpha: float, k0: float) -> tuple[float, float]:
    """K_2, K_3 from the reference formulas with the reference F functions."""
    _check(alpha, k0)
    F1, F2, F3 = (f.evaluate(k0) for f in f_functions())
    K2 = 128 * alpha**2 / (3 * math.pi**2) * F1**2
    K3 = 256 * alpha**2 / (3 * math.pi**2) * F1 * F2 + 4096 * alpha**3 / (9 * math.pi**3) * F3**3
    return K2, K3


@lru_cache(maxsize=None)
def _engine_k_exprs():
    spec = build_hamiltonian(PolaronParams(1.0, 1.0), OPTIMAL_REST, max_order=3)
    return symbolic_central_moment(spec, 2), symbolic_central_moment(spec, 3)


def engine_k2_k3(alpha: float, k0: float) -> tuple[float, float]:
    """K_2, K_3 of the optimal-f rest Hamiltonian from exact Wick enumeration."""
    _check(alpha, k0)
    K2, K3 = _engine_k_exprs()
    return K2.evaluate(alpha, k0), K3.evaluate(alpha, k0)


def e_var2(alpha: float, k0: float, source: str = "printed") -> float:
    """Second-order bound E_W + K3/(2 K2) - sqrt((K3/2K2)^2 + K2).

    ``source="printed"`` takes K_2, K_3 from the reference formulas,
    ``source="engine"`` from the contraction engine.  The two differ because
    the reference F1 has -k0 where the integral gives -2 k0, and the
    reference K_3 lacks the recoil integral and cubes F3 instead of F1.
    """
    if source == "printed":
        K2, K3 = printed_k2_k3(alpha, k0)
    elif source == "engine":
        K2, K3 = engine_k2_k3(alpha, k0)
    else:
        raise ValueError("source must be 'printed' or 'engine'")
    return second_order_bound_closed(e_weak(alpha, k0), K2, K3)


# ---------------------------------------------------------------------------
# moving polaron


@dataclass(frozen=True)
class _Grid:
    k: np.ndarray
    x: np.ndarray
    w: np.ndarray  # (4 alpha / pi) k^3 dk dx folded in (alpha set to 1)


@lru_cache(maxsize=16)
def _grid(k0: float, nk: int, nx: int) -> _Grid:
    tk, wk = leggauss(nk)
    k = 0.5 * k0 * (tk + 1.0)
    wk = 0.5 * k0 * wk
    x, wx = leggauss(nx)
    K, X = np.meshgrid(k, x, indexing="ij")
    W = np.outer(wk * k**3, wx) * (4 / math.pi)
    return _Grid(K, X, W)


def _integrate(fn: Callable[[_Grid], float], k0: float, check: bool = True) -> float:
    """Tensor Gauss-Legendre sum with a doubled-node convergence check."""
    value = fn(_grid(k0, RADIAL_NODES, ANGULAR_NODES))
    if check:
        fine = fn(_grid(k0, 2 * RADIAL_NODES, 2 * ANGULAR_NODES))
        if abs(fine - value) > QUAD_TOL * max(1.0, abs(fine)):
            raise ConvergenceError(f"quadrature not converged: {value!r} vs {fine!r}")
        return fine
    return value


def _guard(P: float, eta: float):
    if 2 * P * (1 - eta) >= 1:
        raise SubsonicError(f"2 P (1 - eta) = {2 * P * (1 - eta):.6g} >= 1 at P={P}, eta={eta}")


def _shape(params: PolaronParams, f: FChoice, eta: float) -> Callable[[_Grid], np.ndarray]:
    """phi(k, x) with f_k = V_k phi(k, x); x is the cosine between k and P."""
    P = params.P
    v = f.variant
    if v is FVariant.ZERO:
        return lambda g: np.zeros_like(g.k)
    if v in (FVariant.SIMPLEST, FVariant.OPTIMAL_REST):
        return lambda g: -1.0 / (g.k + g.k**2)
    if v is FVariant.OPTIMAL_MOVING:
        _guard(P, eta)
        return lambda g: -1.0 / (g.k + g.k**2 - 2 * g.k * P * (1 - eta) * g.x)
    if v is FVariant.COMPROMISE:
        _guard(P, 0.0)

        def phi(g):
            d0 = g.k + g.k**2 - 2 * g.k * P * g.x
            return -(1.0 - 2 * eta * g.k * P * g.x / d0) / d0

        return phi
    raise ValueError(f"unknown f-choice {v!r}")


def _moments_of_shape(params: PolaronParams, phi, check: bool = True) -> tuple[float, float, float]:
    """(sum V f, sum (k+k^2) f^2, sum f^2 k.P/|P|) for f = V phi."""
    a = params.alpha
    k0 = params.k0
    lin = _integrate(lambda g: a * float(np.sum(g.w * phi(g))), k0, check)
    quadr = _integrate(lambda g: a * float(np.sum(g.w * (g.k + g.k**2) * phi(g) ** 2)), k0, check)
    c_par = _integrate(lambda g: a * float(np.sum(g.w * g.k * g.x * phi(g) ** 2)), k0, check)
    return lin, quadr, c_par


def variational_energy(params: PolaronParams, f: FChoice, eta: float | None = None, check: bool = True) -> float:
    """<0|H(f)|0> = P^2 + 2 sum V f + sum (k+k^2) f^2 - 2 P C + C^2.

    C is the component of sum_k k f_k^2 along P (the others vanish by axial
    symmetry).  Valid upper bound for every f; ``eta`` parameterizes the
    moving variants.
    """
    eta = 0.0 if eta is None else eta
    lin, quadr, C = _moments_of_shape(params, _shape(params, f, eta), check)
    P = params.P
    return P * P + 2 * lin + quadr - 2 * P * C + C * C


def _eta_rhs(params: PolaronParams, f: FChoice, eta: float, check: bool = False) -> float:
    """sum_k f_k^2 (k.P) / P^2, the right side of the self-consistency."""
    phi = _shape(params, f, eta)
    a = params.alpha
    C = _integrate(lambda g: a * float(np.sum(g.w * g.k * g.x * phi(g) ** 2)), params.k0, check)
    return C / params.P


@dataclass(frozen=True)
class EtaSolution:
    eta: float
    residual: float
    iterations: int
    method: str


def _compromise_coefficients(params: PolaronParams) -> tuple[float, float, float]:
    """eta = a - 4 b eta + 4 c eta^2 for the compromise f (a, b, c per P^2)."""
    P = params.P
    alpha = params.alpha

    def part(power):
        def fn(g):
            d0 = g.k + g.k**2 - 2 * g.k * P * g.x
            return alpha * float(np.sum(g.w * (g.k * P * g.x) ** power / d0 ** (power + 1)))

        return _integrate(fn, params.k0) / (P * P)

    return part(1), part(2), part(3)


def solve_eta(params: PolaronParams, f: FChoice | None = None, method: str = "auto",
              damping: float = 0.5, max_iter: int = 10_000) -> EtaSolution:
    """Self-consistent eta with eta P^2 = sum_k f_k^2 k.P.

    ``method``: "bisect" (Brent on the residual), "iterate" (damped fixed
    point), "analytic" (compromise only: the equation is quadratic in eta),
    or "auto" (analytic for the compromise, bisect otherwise).
    """
    f = f or FChoice(FVariant.OPTIMAL_MOVING)
    P = params.P
    if not P > 0:
        raise ValueError("solve_eta needs P > 0")
    if f.variant not in (FVariant.OPTIMAL_MOVING, FVariant.COMPROMISE):
        raise ValueError(f"f-choice {f.variant.value!r} has no eta")
    if 2 * P >= 1 and f.variant is FVariant.COMPROMISE:
        raise SubsonicError(f"compromise f needs 2 P < 1, got P={P}")
    if method == "auto":
        method = "analytic" if f.variant is FVariant.COMPROMISE else "bisect"
    lo = max(0.0, 1.0 - 1.0 / (2 * P)) if f.variant is FVariant.OPTIMAL_MOVING else 0.0

    def residual(eta):
        return eta - _eta_rhs(params, f, eta)

    if method == "analytic":
        if f.variant is not FVariant.COMPROMISE:
            raise ValueError("the analytic solution exists only for the compromise f")
        a, b, c = _compromise_coefficients(params)
        # 4 c eta^2 - (1 + 4 b) eta + a = 0, smaller root (the one continuous at c -> 0)
        A, B = 4 * c, -(1 + 4 * b)
        disc = B * B - 4 * A * a
        if disc < 0:
            raise ConvergenceError("no real self-consistent eta")
        eta = 2 * a / (-B + math.sqrt(disc))
        res, it = abs(residual(eta)), 0
    elif method == "bisect":
        hi = 1.0 - 1e-15
        r_lo = residual(lo + 1e-15 if lo > 0 else 0.0)
        r_hi = residual(hi)
        if r_lo * r_hi > 0:
            if 2 * P >= 1:
                raise SubsonicError(f"no subsonic self-consistent eta at P={P}")
            raise ConvergenceError(f"no sign change of the eta residual on [{lo}, 1)")
        eta, info = brentq(residual, lo + 1e-15 if lo > 0 else 0.0, hi, xtol=1e-15, rtol=1e-15,
                           maxiter=200, full_output=True)
        res, it = abs(residual(eta)), info.iterations
    elif method == "iterate":
        eta = 0.0
        it = 0
        while True:
            new = (1 - damping) * eta + damping * _eta_rhs(params, f, eta)
            it += 1
            if abs(new - eta) < 1e-15 or it >= max_iter:
                eta = new
                break
            eta = new
        res = abs(residual(eta))
    else:
        raise ValueError(f"unknown method {method!r}")
    if not res < ETA_TOL:
        raise ConvergenceError(f"eta residual {res:.3g} after {it} steps")
    if f.variant is FVariant.OPTIMAL_MOVING:
        _guard(P, eta)
    return EtaSolution(float(eta), float(res), int(it), method)


def bound_moving(params: PolaronParams, eta: float | None = None) -> float:
    """P^2 (1-eta)^2 - sum V^2 (k + k^2 - 4 k.P (1-eta)) / D^2, D = k + k^2 - 2 k.P (1-eta).

    ``eta`` defaults to the self-consistent value; at P = 0 this is E_W.
    """
    P = params.P
    if P == 0:
        eta = 0.0 if eta is None else eta
    elif eta is None:
        eta = solve_eta(params).eta
    _guard(P, eta)
    a = params.alpha
    q = 1 - eta

    def fn(g):
        D = g.k + g.k**2 - 2 * g.k * P * q * g.x
        if np.any(D[g.k > 0] <= 0):
            raise SubsonicError("nonpositive denominator on the quadrature grid")
        return a * float(np.sum(g.w * (g.k + g.k**2 - 4 * g.k * P * q * g.x) / D**2))

    return P * P * q * q - _integrate(fn, params.k0)


@dataclass(frozen=True)
class FitResult:
    m_eff: float
    e0: float
    curvature: float
    quartic: float
    residual: float
    energies: tuple


def effective_mass_estimate(alpha: float, k0: float, P_grid: Sequence[float] = (0.05, 0.1, 0.2),
                            max_residual: float = 1e-4) -> FitResult:
    """m_eff from least squares of E(P) - E(0) = P^2/(2 m_eff) + c4 P^4.

    ``residual`` is the largest fit misfit relative to E(P) - E(0); above
    ``max_residual`` the grid is too coarse or P too large.
    """
    Ps = np.asarray(sorted(set(float(p) for p in P_grid)))
    if len(Ps) < 3 or np.any(Ps <= 0):
        raise ValueError("need at least 3 distinct positive momenta")
    e0 = bound_moving(PolaronParams(alpha, k0, 0.0))
    E = np.array([bound_moving(PolaronParams(alpha, k0, float(p))) for p in Ps])
    dE = E - e0
    A = np.column_stack([Ps**2, Ps**4])
    coef, *_ = np.linalg.lstsq(A, dE, rcond=None)
    fit = A @ coef
    residual = float(np.max(np.abs(fit - dE) / np.abs(dE)))
    if residual > max_residual:
        raise ConvergenceError(f"E(P) is not quadratic-plus-quartic on this grid (residual {residual:.3g})")
    curv = float(coef[0])
    if not curv > 0:
        raise ConvergenceError("nonpositive curvature of E(P)")
    return FitResult(1 / (2 * curv), e0, curv, float(coef[1]), residual, tuple(float(e) for e in E))
