import io
import math
from fractions import Fraction

import numpy as np
import pytest

from polaron_bounds.closed_form import ClosedForm, radial_integral
from polaron_bounds.oracle import oracle_moments, random_model
from polaron_bounds.params import OPTIMAL_REST, ZERO, FChoice, FVariant, Mode, PolaronParams
from polaron_bounds.wick import (
    ContinuumKernels,
    HamiltonianSpec,
    MomentOrderError,
    MomentTable,
    OperatorMonomial,
    UnsupportedKernelError,
    VolumeExponentError,
    build_discrete_hamiltonian,
    build_hamiltonian,
    central_moments,
    check_hermitian,
    connected_vacuum_moment,
    contraction_terms,
    dump_terms,
    moment_table,
    set_partition_moment,
    symbolic_central_moment,
    symbolic_moment,
    vacuum_moment,
)

REST = PolaronParams(1.0, 1.0)


def _discrete_spec(model, max_order=5):
    return build_discrete_hamiltonian(model.vectors, model.V, model.f, model.P, max_order=max_order)


def test_optimal_rest_has_no_linear_family():
    spec = build_hamiltonian(REST, OPTIMAL_REST)
    assert not any("linear" in fam for fam in spec.families)
    assert not any(fam.startswith(("P-", "C-")) for fam in spec.families)


def test_zero_f_is_uncoupled_plus_linear():
    spec = build_hamiltonian(REST, ZERO)
    assert sorted(spec.families) == ["linear+", "linear-", "number", "recoil"]
    assert spec.constant_value() == 0.0


@pytest.mark.parametrize("f", [OPTIMAL_REST, ZERO, FChoice(FVariant.SIMPLEST)])
@pytest.mark.parametrize("P", [0.0, 0.3])
def test_hermitian(f, P):
    assert check_hermitian(build_hamiltonian(PolaronParams(1.0, 1.0, P), f).monomials)


def test_discrete_spec_hermitian():
    m = random_model(3, moving=True, optimal_f=False)
    assert check_hermitian(_discrete_spec(m).monomials)


def test_moving_f_rejected_by_continuum_engine():
    with pytest.raises(UnsupportedKernelError):
        build_hamiltonian(PolaronParams(1.0, 1.0, 0.1), FChoice(FVariant.OPTIMAL_MOVING, 0.2))


def test_zeroth_moment_is_one():
    assert vacuum_moment(build_hamiltonian(REST, OPTIMAL_REST), 0) == 1.0


def test_first_moment_is_weak_coupling_bound_exactly():
    spec = build_hamiltonian(PolaronParams(1.0, 1.0, mode=Mode.EXACT), OPTIMAL_REST)
    M1 = symbolic_moment(spec, 1)
    # -(4 alpha/pi)[2 ln(1+k0) + k0^2 - 2 k0] = -g R(3,1) with g = 8 alpha / pi
    assert M1.coefficient(1, 0) == -radial_integral(3, 1)
    assert set(M1.terms) == {(1, 0), (0, 2)}
    assert M1.coefficient(0, 2) == ClosedForm.const(1)
    assert vacuum_moment(spec, 1) == pytest.approx(-0.4918452564860501, rel=1e-15)


def test_second_central_moment_closed_form():
    spec = build_hamiltonian(REST, OPTIMAL_REST)
    K2 = symbolic_central_moment(spec, 2)
    assert set(K2.terms) == {(2, 0)}
    assert K2.coefficient(2) == radial_integral(5, 2) ** 2 * Fraction(2, 3)


def test_third_central_moment_closed_form():
    spec = build_hamiltonian(REST, OPTIMAL_REST)
    K3 = symbolic_central_moment(spec, 3)
    F1, F2, F3 = radial_integral(5, 2), radial_integral(6, 2), radial_integral(7, 2)
    assert K3.coefficient(2) == F1 * (F2 + F3) * Fraction(4, 3)
    assert K3.coefficient(3) == F1**3 * Fraction(8, 9)


@pytest.mark.parametrize("k0,ref", [(0.5, 0.000280978821467897), (1.0, 0.0272825083581156385),
                                    (2.0, 1.7112964825093147), (3.0, 15.75243252466536)])
def test_k2_frozen_quadrature(k0, ref):
    # frozen from direct quadrature of 2 sum (k.m)^2 f_k^2 f_m^2
    t = moment_table(build_hamiltonian(PolaronParams(1.0, k0), OPTIMAL_REST), 3)
    assert t.K2 == pytest.approx(ref, rel=1e-12)


def test_k2_scales_with_alpha_squared():
    k2 = [moment_table(build_hamiltonian(PolaronParams(a, 1.3), OPTIMAL_REST), 2).K2 for a in (1.0, 3.0)]
    assert k2[1] == pytest.approx(9 * k2[0], rel=1e-13)


def test_exact_and_float_modes_agree():
    a = moment_table(build_hamiltonian(PolaronParams(2.0, 2.0, mode=Mode.EXACT), OPTIMAL_REST), 5)
    b = moment_table(build_hamiltonian(PolaronParams(2.0, 2.0, mode=Mode.FLOAT), OPTIMAL_REST), 5)
    for x, y in zip(a.raw, b.raw):
        assert x == pytest.approx(y, rel=1e-12)


def test_order_cap():
    spec = build_hamiltonian(REST, OPTIMAL_REST)
    with pytest.raises(MomentOrderError):
        vacuum_moment(spec, 6)
    with pytest.raises(MomentOrderError):
        moment_table(spec, 6)


def test_volume_exponent_violation_raises():
    bad = OperatorMonomial("bad", 1, ((True, 0), (True, 1)), (("f",), ()), ((0, 1),))
    spec = HamiltonianSpec((bad, bad.adjoint()), 0.0, ContinuumKernels(1.0, 1.0, 0.0, FVariant.OPTIMAL_REST))
    with pytest.raises(VolumeExponentError):
        vacuum_moment(spec, 2)


def test_families_have_matching_volume_bookkeeping():
    spec = build_hamiltonian(PolaronParams(1.0, 1.0, 0.2), OPTIMAL_REST)
    for m in spec.monomials:
        # every label sum is balanced by couplings once its ends are paired
        assert m.volume_exponent >= 0


@pytest.mark.parametrize("seed", range(6))
def test_discrete_moments_match_matrix(seed):
    model = random_model(seed)
    ours = moment_table(_discrete_spec(model), 5)
    ref = oracle_moments(model, 5)
    for x, y in zip(ours.raw, ref.raw):
        assert x == pytest.approx(y, rel=1e-10, abs=1e-14)


def test_two_mode_toy_third_moment():
    vectors = np.array([[0.8, 0.0, 0.0], [0.4, 0.8, 0.8]])
    V = np.array([0.5, 0.3])
    f = np.array([-0.2, 0.1])
    from polaron_bounds.oracle import build_discrete_model

    model = build_discrete_model(vectors, V, f, n_max=4)
    spec = build_discrete_hamiltonian(vectors, V, f)
    assert vacuum_moment(spec, 3) == pytest.approx(oracle_moments(model, 3).raw[3], rel=1e-10)


@pytest.mark.parametrize("seed", [0, 4, 7])
def test_cumulant_recursion_matches_direct(seed):
    spec = _discrete_spec(random_model(seed))
    kappa = {m: connected_vacuum_moment(spec, m) for m in range(1, 5)}
    assert kappa[1] == pytest.approx(vacuum_moment(spec, 1), rel=1e-14)
    assert kappa[2] == pytest.approx(vacuum_moment(spec, 2) - vacuum_moment(spec, 1) ** 2, rel=1e-10, abs=1e-14)
    for m in (3, 4):
        assert set_partition_moment(kappa, m) == pytest.approx(vacuum_moment(spec, m), rel=1e-10)


def test_cumulant_recursion_continuum():
    spec = build_hamiltonian(PolaronParams(1.5, 2.0), OPTIMAL_REST)
    kappa = {m: connected_vacuum_moment(spec, m) for m in range(1, 6)}
    for m in range(1, 6):
        assert set_partition_moment(kappa, m) == pytest.approx(vacuum_moment(spec, m), rel=1e-10)


def test_connected_cache_returns_same_value():
    spec = build_hamiltonian(PolaronParams(1.1, 0.7), OPTIMAL_REST)
    assert connected_vacuum_moment(spec, 3) == connected_vacuum_moment(spec, 3)


def test_worker_count_does_not_change_terms():
    from polaron_bounds import wick

    spec = build_hamiltonian(PolaronParams(1.0, 1.0, 0.3), OPTIMAL_REST)
    wick._terms_cache.clear()
    one = contraction_terms(spec, 4, workers=1)
    wick._terms_cache.clear()
    two = contraction_terms(spec, 4, workers=2)
    assert one == two


def test_central_moment_examples():
    mu = 0.7
    assert central_moments(MomentTable([1, mu, mu * mu])).central[2] == pytest.approx(0.0, abs=1e-16)
    assert central_moments(MomentTable([1, 0.0, 2.5])).central[2] == 2.5
    assert moment_table(build_hamiltonian(REST, OPTIMAL_REST), 2).K2 > 0


def test_moment_table_requires_unit_norm():
    with pytest.raises(ValueError):
        MomentTable([2.0, 1.0])


def test_moving_rest_f_moments_match_symbolic():
    spec = build_hamiltonian(PolaronParams(1.0, 1.0, 0.3, mode=Mode.EXACT), OPTIMAL_REST)
    expr = symbolic_moment(spec, 3)
    assert expr.evaluate(1.0, 1.0, 0.3) == pytest.approx(vacuum_moment(spec, 3), rel=1e-14)
    # P enters only through even powers for spherically symmetric f
    assert all(d % 2 == 0 for (_, d) in expr.terms)


def test_dump_terms_format():
    buf = io.StringIO()
    n = dump_terms(build_hamiltonian(REST, OPTIMAL_REST), 2, buf)
    lines = buf.getvalue().splitlines()
    assert n == len(lines) > 0
    for line in lines:
        fields = line.split("\t")
        assert fields[1].startswith("radial=") and fields[2].startswith("angular=")
