"""Upper bounds on the acoustical-polaron ground-state energy from vacuum moments."""

from .closed_form import ClosedForm, DivergentIntegralError, DotMonomial, angular_average, evaluate, radial_integral
from .model import (
    bound_moving,
    coupling_from_material,
    e_strong,
    e_var2,
    e_weak,
    effective_mass_estimate,
    engine_f_functions,
    engine_k2_k3,
    f_functions,
    printed_k2_k3,
    solve_eta,
    strong_coupling_region,
    variational_energy,
)
from .params import OPTIMAL_REST, SIMPLEST, ZERO, FChoice, FVariant, Mode, PolaronParams
from .variational import (
    BoundResult,
    MonotonicityError,
    NonRealRootError,
    SingularHankelError,
    bound_sequence,
    hankel_system,
    polynomial_roots,
    second_order_bound_closed,
    shift_spectrum,
)
from .wick import (
    HamiltonianSpec,
    MomentTable,
    build_discrete_hamiltonian,
    build_hamiltonian,
    central_moments,
    connected_vacuum_moment,
    moment_table,
    vacuum_moment,
)

__version__ = "0.1.0"
