"""Self-check batteries shared by the CLI and the test-suite.

* :func:`oracle_battery` -- engine moments vs truncated-Fock matrix moments,
  the upper-bound property and monotonicity on seeded discrete models.
* :func:`k2_k3_report` -- the continuum K_2, K_3 from the contraction
  engine against the reference closed forms, a quadrature surrogate of the
  continuum and the discrete matrix oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .closed_form import ClosedForm
from .model import engine_f_functions, engine_k2_k3, f_functions, printed_k2_k3
from .oracle import DiscreteModel, build_discrete_model, oracle_ground_energy, oracle_moments, random_model
from .variational import MonotonicityError, NonRealRootError, SingularHankelError, bound_sequence
from .wick import MomentTable, build_discrete_hamiltonian, central_moments, moment_table

__all__ = [
    "CheckLine",
    "continuum_surrogate",
    "k2_k3_report",
    "oracle_battery",
    "quadrature_k2_k3",
    "tamper",
]

MOMENT_RTOL = 1e-10
BOUND_ATOL = 1e-8
MONOTONE_RTOL = 1e-12


@dataclass
class CheckLine:
    name: str
    passed: bool
    margin: float
    detail: str = ""

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} margin={self.margin:.3e} {self.detail}".rstrip()


@dataclass
class BatteryResult:
    lines: list[CheckLine] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(x.passed for x in self.lines)

    def __str__(self):
        return "\n".join(map(str, self.lines))


def engine_moments(model: DiscreteModel, max_order: int) -> MomentTable:
    spec = build_discrete_hamiltonian(model.vectors, model.V, model.f, model.P, max_order=max(max_order, 5))
    return moment_table(spec, max_order)


def _moment_error(a: MomentTable, b: MomentTable) -> float:
    worst = 0.0
    for x, y in zip(a.raw, b.raw):
        worst = max(worst, abs(x - y) / max(abs(y), 1e-300))
    return worst


def tamper(t: MomentTable, index: int = 3, factor: float = 1.1) -> MomentTable:
    raw = list(t.raw)
    raw[index] = raw[index] * factor
    return MomentTable(raw)


def _bound_checks(t: MomentTable, e_g: float, orders: int) -> tuple[float, float]:
    """(bound margin, monotonicity margin); raises on solver failure."""
    seq = bound_sequence(t, orders, on_error="raise")
    bound_margin = min(r.bound - (e_g - BOUND_ATOL) for r in seq)
    mono = math.inf
    for a, b in zip(seq, seq[1:]):
        mono = min(mono, a.bound + MONOTONE_RTOL * abs(a.bound) - b.bound)
    return bound_margin, mono


def model_checks(model: DiscreteModel, orders: int = 3, tampered: bool = False) -> list[CheckLine]:
    """Moment agreement, upper-bound property and monotonicity on one model.

    With ``tampered`` the engine's M_3 is scaled by 1.1 before any check,
    emulating a corrupted moment table; every check then runs unchanged.
    """
    tag = f"seed={model.seed} modes={model.n_modes} n_max={model.n_max}" + (" tampered" if tampered else "")
    m_max = 2 * orders - 1
    ours = engine_moments(model, m_max)
    if tampered:
        ours = tamper(ours)
    ref = oracle_moments(model, m_max)
    err = _moment_error(ours, ref)
    out = [CheckLine("moments", err <= MOMENT_RTOL, MOMENT_RTOL - err, f"{tag} max_rel_err={err:.3e}")]
    e_g = oracle_ground_energy(model)
    try:
        bmargin, mmargin = _bound_checks(ours, e_g, orders)
    except (SingularHankelError, NonRealRootError, MonotonicityError) as exc:
        out.append(CheckLine("bounds", False, -math.inf, f"{tag} {type(exc).__name__}: {exc}"))
        return out
    out.append(CheckLine("upper-bound", bmargin >= 0, bmargin, f"{tag} E_g={e_g:.12g}"))
    out.append(CheckLine("monotone", mmargin >= 0, mmargin, tag))
    return out


def zero_coupling_check(orders: int = 3) -> CheckLine:
    """Without coupling the vacuum is an eigenstate: every bound is the constant."""
    vectors = np.array([[0.7, 0.0, 0.0], [0.0, 0.0, -0.4]])
    model = build_discrete_model(vectors, np.zeros(2), np.zeros(2), n_max=2, seed=None)
    t = engine_moments(model, 2 * orders - 1)
    seq = bound_sequence(t, orders)
    worst = max(abs(r.bound - model.constant) for r in seq)
    ok = worst == 0.0 and oracle_ground_energy(model) == model.constant
    return CheckLine("zero-coupling", ok, -worst, f"orders_valid={len(seq)} constant={model.constant}")


def oracle_battery(seed: int = 0, n_models: int = 20, n_max: int = 4, orders: int = 3,
                   tampered: bool = False) -> BatteryResult:
    """Run every oracle check on ``n_models`` seeded models (seeds seed, seed+1, ...).

    With ``tampered`` every engine table has M_3 scaled by 1.1, which the
    battery must report as a failure.
    """
    res = BatteryResult()
    for i in range(n_models):
        res.lines.extend(model_checks(random_model(seed + i, n_max=n_max), orders, tampered))
    if not tampered:
        res.lines.append(zero_coupling_check(orders))
    return res


# ---------------------------------------------------------------------------
# K_2 / K_3 arbitration


def continuum_surrogate(alpha: float, k0: float, n_radial: int = 24, n_polar: int = 6, n_azimuth: int = 12):
    """Discrete modes whose sums are a product quadrature of the continuum.

    Each mode carries its quadrature weight inside V_i^2 = 16 pi alpha k_i
    w_i / (2 pi)^3, so a chain sum sum_i V_i^2 g(k_i) reproduces the
    continuum integral.  The angular rule integrates spherical polynomials
    up to degree min(2 n_polar - 1, n_azimuth - 1) exactly.
    """
    t, wr = leggauss(n_radial)
    k = 0.5 * k0 * (t + 1)
    wr = 0.5 * k0 * wr * k**2
    c, wc = leggauss(n_polar)
    phi = 2 * math.pi * np.arange(n_azimuth) / n_azimuth
    wphi = 2 * math.pi / n_azimuth
    dirs, wdir = [], []
    for ci, wi in zip(c, wc):
        s = math.sqrt(1 - ci * ci)
        for p in phi:
            dirs.append((s * math.cos(p), s * math.sin(p), ci))
            wdir.append(wi * wphi)
    dirs = np.array(dirs)
    wdir = np.array(wdir)
    vectors = (k[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    kk = np.repeat(k, len(dirs))
    w = np.outer(wr, wdir).reshape(-1)
    V = np.sqrt(16 * math.pi * alpha * kk * w / (2 * math.pi) ** 3)
    f = -V / (kk + kk**2)
    return vectors, V, f


def quadrature_k2_k3(alpha: float, k0: float, **grid) -> tuple[float, float]:
    """K_2, K_3 from the engine's contraction terms summed over the surrogate."""
    vectors, V, f = continuum_surrogate(alpha, k0, **grid)
    spec = build_discrete_hamiltonian(vectors, V, f, max_order=3)
    t = moment_table(spec, 3)
    return t.central[2], t.central[3]


def _cf(cf: ClosedForm) -> str:
    return repr(cf).removeprefix("ClosedForm(").removesuffix(")")


@dataclass
class ArbitrationReport:
    lines: list[str]
    engine_vs_oracle_ok: bool
    engine_vs_printed_agree: bool
    worst_oracle_err: float
    worst_quadrature_err: float

    def __str__(self):
        return "\n".join(self.lines)


def k2_k3_report(points=((1.0, 0.5), (1.0, 1.0), (2.0, 2.0), (0.5, 3.0)), oracle_seeds=range(5),
                 tol: float = 1e-9) -> ArbitrationReport:
    """Compare the engine's K_2, K_3 with the reference forms and two independent checks."""
    F1p, F2p, F3p = f_functions()
    F1e, F2e, F3e = engine_f_functions()
    lines = ["# K2/K3 arbitration (g = 8 alpha / pi)"]
    lines.append(f"engine  K2 = g^2 * 2/3 * F1e^2,  F1e = int_0^k0 k^3/(1+k)^2 dk = {_cf(F1e)}")
    lines.append(f"printed K2 = g^2 * 2/3 * F1p^2,  F1p = {_cf(F1p)}")
    d1 = F1e - F1p
    agree_k2 = d1.is_zero()
    lines.append("K2: " + ("agreement" if agree_k2 else f"DISCREPANCY, F1e - F1p = {_cf(d1)}"))
    lines.append("engine  K3 = g^2 * 4/3 * F1e (F2e + F3e) + g^3 * 8/9 * F1e^3")
    lines.append("printed K3 = g^2 * 4/3 * F1p F2p + g^3 * 8/9 * F3p^3")
    lines.append(f"F2e - F2p = {_cf(F2e - F2p)} ; F3e - F3p = {_cf(F3e - F3p)}")
    agree_k3 = agree_k2 and (F2e + F3e - F2p).is_zero() and (F1e - F3p).is_zero()
    lines.append("K3: " + ("agreement" if agree_k3 else
                           "DISCREPANCY, reference g^2 term omits F3e (recoil) and g^3 term cubes F3 instead of F1"))
    worst_q = 0.0
    for alpha, k0 in points:
        K2, K3 = engine_k2_k3(alpha, k0)
        Q2, Q3 = quadrature_k2_k3(alpha, k0)
        P2, P3 = printed_k2_k3(alpha, k0)
        e2, e3 = abs(Q2 - K2) / abs(K2), abs(Q3 - K3) / abs(K3)
        worst_q = max(worst_q, e2, e3)
        lines.append(f"alpha={alpha} k0={k0}: K2 engine={K2:.15g} quadrature={Q2:.15g} printed={P2:.15g} | "
                     f"K3 engine={K3:.15g} quadrature={Q3:.15g} printed={P3:.15g}")
    worst_o = 0.0
    for s in oracle_seeds:
        model = random_model(1000 + s, n_max=4, moving=False, optimal_f=True)
        ours = engine_moments(model, 3)
        ref = oracle_moments(model, 3)
        rc = central_moments(ref).central
        for m in (2, 3):
            worst_o = max(worst_o, abs(ours.central[m] - rc[m]) / abs(rc[m]))
    lines.append(f"quadrature path vs engine: worst relative difference {worst_q:.3e} (tolerance {tol:g})")
    lines.append(f"discrete oracle vs engine (K2, K3 on {len(list(oracle_seeds))} models): "
                 f"worst relative difference {worst_o:.3e} (tolerance {tol:g})")
    ok = worst_o <= tol and worst_q <= tol
    lines.append("RESULT: engine == oracle " + ("PASS" if ok else "FAIL") +
                 f"; engine vs reference K2: {'agree' if agree_k2 else 'differ (reported)'}"
                 f"; K3: {'agree' if agree_k3 else 'differ (reported)'}")
    return ArbitrationReport(lines, ok, agree_k2 and agree_k3, worst_o, worst_q)
