"""Brute-force references: quadrature, truncated Fock space, Monte Carlo.

The discrete models keep a handful of phonon modes with explicit wave
vectors.  Their Hamiltonian matrix is built from the *untransformed*
operator (P - sum_k k a^+a)^2 + sum_k k a^+a + sum_k V_k (a^+ + a) with the
shift a -> a + f substituted at matrix level, so it shares no algebra with
the normal-ordered families used by the contraction engine.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad

from .closed_form import DivergentIntegralError, DotMonomial
from .wick import MomentTable

__all__ = [
    "DIMENSION_CAP",
    "DENSE_LIMIT",
    "DiscreteModel",
    "angular_average_mc",
    "build_discrete_model",
    "build_discrete_model_slow",
    "oracle_ground_energy",
    "oracle_moments",
    "quadrature_radial",
    "random_model",
]

DIMENSION_CAP = 2**20
DENSE_LIMIT = 4096


def quadrature_radial(p: int, q: int, k0: float) -> float:
    """Adaptive quadrature of int_0^k0 k^p / (k + k^2)^q dk."""
    if p < q:
        raise DivergentIntegralError(f"integral diverges at k=0 for p={p} < q={q}")
    r = p - q
    value, _ = quad(lambda k: k**r / (1.0 + k) ** q, 0.0, k0, epsabs=0.0, epsrel=1e-13, limit=200)
    return value


@dataclass
class DiscreteModel:
    """Displaced polaron Hamiltonian on a few explicit modes.

    ``matrix`` acts on the product basis with occupations 0..n_max per mode
    (mode 0 is the most significant digit); the vacuum is basis state 0.
    """

    vectors: np.ndarray
    V: np.ndarray
    f: np.ndarray
    P: np.ndarray
    n_max: int
    matrix: sp.csr_matrix = field(repr=False)
    seed: int | None = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.V)

    @property
    def constant(self) -> float:
        """<0|H|0>, the value every bound reduces to without coupling."""
        return float(self.matrix[0, 0])

    def describe(self) -> str:
        """Plain-text dump sufficient to rebuild the model."""
        lines = [f"seed {self.seed}", f"n_max {self.n_max}", f"P {' '.join(repr(float(x)) for x in self.P)}"]
        for i in range(self.n_modes):
            k = " ".join(repr(float(x)) for x in self.vectors[i])
            lines.append(f"mode {i} k {k} V {float(self.V[i])!r} f {float(self.f[i])!r}")
        return "\n".join(lines) + "\n"


def _ladder(cap: int) -> sp.csr_matrix:
    """Annihilation operator on occupations 0..cap."""
    return sp.diags(np.sqrt(np.arange(1, cap + 1, dtype=float)), 1, format="csr")


def _embed(op, i: int, n_modes: int, cap: int):
    eye = sp.identity(cap + 1, format="csr")
    mats = [op if j == i else eye for j in range(n_modes)]
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def _check_inputs(vectors, V, f, P, n_max):
    vectors = np.asarray(vectors, dtype=float).reshape(-1, 3)
    n = len(vectors)
    V = np.asarray(V, dtype=float).reshape(n)
    f = np.asarray(f, dtype=float).reshape(n)
    P = np.asarray(P, dtype=float).reshape(3)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if (n_max + 1) ** n > DIMENSION_CAP:
        raise OverflowError(f"dimension {(n_max + 1) ** n} exceeds cap {DIMENSION_CAP}")
    return vectors, V, f, P


def _restriction(n_modes: int, cap: int, n_max: int) -> np.ndarray:
    """Indices of the cap-space basis states with every occupation <= n_max."""
    occ = np.array(list(itertools.product(range(cap + 1), repeat=n_modes)))
    return np.flatnonzero((occ <= n_max).all(axis=1))


def build_discrete_model(vectors, V, f, P=(0.0, 0.0, 0.0), n_max: int = 4, seed: int | None = None) -> DiscreteModel:
    """Matrix of the displaced Hamiltonian, truncated to occupations <= n_max.

    Operators are assembled one level above the cap and then restricted, so
    every kept matrix element equals the untruncated one.
    """
    vectors, V, f, P = _check_inputs(vectors, V, f, P, n_max)
    n = len(V)
    cap = n_max + 1
    a = _ladder(cap)
    dim = (cap + 1) ** n
    eye = sp.identity(dim, format="csr")
    b = [_embed(a, i, n, cap) + f[i] * eye for i in range(n)]
    bd = [x.T.tocsr() for x in b]
    number = [bd[i] @ b[i] for i in range(n)]
    mags = np.linalg.norm(vectors, axis=1)
    total = [P[d] * eye - sum(vectors[i, d] * number[i] for i in range(n)) for d in range(3)]
    H = sum(t @ t for t in total)
    H = H + sum(mags[i] * number[i] for i in range(n))
    H = H + sum(V[i] * (bd[i] + b[i]) for i in range(n))
    keep = _restriction(n, cap, n_max)
    H = sp.csr_matrix(H)[keep][:, keep]
    return DiscreteModel(vectors, V, f, P, n_max, sp.csr_matrix(H), seed)


def build_discrete_model_slow(vectors, V, f, P=(0.0, 0.0, 0.0), n_max: int = 4) -> np.ndarray:
    """Dense matrix from the normal-ordered families, element by element.

    Independent second construction: every operator string is applied to
    occupation tuples directly, without matrix products.
    """
    vectors, V, f, P = _check_inputs(vectors, V, f, P, n_max)
    n = len(V)
    mags = np.linalg.norm(vectors, axis=1)
    C = (vectors * (f**2)[:, None]).sum(axis=0)
    lin = (mags + mags**2) * f + V
    const = P @ P - 2 * P @ C + C @ C + np.sum((mags + mags**2) * f**2) + 2 * np.sum(V * f)
    basis = list(itertools.product(range(n_max + 1), repeat=n))
    index = {s: i for i, s in enumerate(basis)}
    dot = vectors @ vectors.T

    # (coefficient, [(creator?, mode), ...] left to right)
    strings: list[tuple[float, list[tuple[bool, int]]]] = []
    for k in range(n):
        strings.append((mags[k] - 2 * P @ vectors[k] + 2 * C @ vectors[k], [(True, k), (False, k)]))
        c1 = lin[k] - 2 * f[k] * (P @ vectors[k]) + 2 * f[k] * (C @ vectors[k])
        strings.append((c1, [(True, k)]))
        strings.append((c1, [(False, k)]))
        for m in range(n):
            strings.append((dot[k, m], [(True, k), (False, k), (True, m), (False, m)]))
            strings.append((2 * dot[k, m] * f[k] * f[m], [(True, k), (False, m)]))
            strings.append((dot[k, m] * f[k] * f[m], [(True, k), (True, m)]))
            strings.append((dot[k, m] * f[k] * f[m], [(False, k), (False, m)]))
            strings.append((2 * dot[k, m] * f[k], [(True, k), (True, m), (False, m)]))
            strings.append((2 * dot[k, m] * f[k], [(True, m), (False, m), (False, k)]))

    H = np.zeros((len(basis), len(basis)))
    for col, state in enumerate(basis):
        H[col, col] += const
        for coeff, ops in strings:
            if coeff == 0:
                continue
            occ = list(state)
            amp = 1.0
            for creator, mode in reversed(ops):
                if creator:
                    occ[mode] += 1
                    amp *= math.sqrt(occ[mode])
                else:
                    if occ[mode] == 0:
                        amp = 0.0
                        break
                    amp *= math.sqrt(occ[mode])
                    occ[mode] -= 1
            if amp == 0.0:
                continue
            row = index.get(tuple(occ))
            if row is not None:
                H[row, col] += coeff * amp
    return H


def oracle_moments(model: DiscreteModel, m_max: int) -> MomentTable:
    """M_j = <vac|H^j|vac> by repeated matrix-vector products."""
    v = np.zeros(model.dim)
    v[0] = 1.0
    raw = [1.0]
    w = v
    for _ in range(m_max):
        w = model.matrix @ w
        raw.append(float(w[0]))
    return MomentTable(raw)


def oracle_ground_energy(model: DiscreteModel, tol: float = 1e-10) -> float:
    """Lowest eigenvalue; dense below DENSE_LIMIT, Lanczos (eigsh) above."""
    H = model.matrix
    if model.dim <= DENSE_LIMIT:
        vals, vecs = np.linalg.eigh(H.toarray())
        e, x = vals[0], vecs[:, 0]
    else:
        vals, vecs = spla.eigsh(H, k=1, which="SA", tol=tol * 1e-2, maxiter=20 * model.dim)
        e, x = vals[0], vecs[:, 0]
    residual = np.linalg.norm(H @ x - e * x)
    scale = max(1.0, abs(e))
    if residual > tol * scale * 1e2:
        raise RuntimeError(f"eigensolver residual {residual:.3g} too large")
    return float(e)


def angular_average_mc(monomial: DotMonomial, samples: int = 10**6, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate and standard error of an angular average."""
    if samples < 10**4:
        raise ValueError("use at least 1e4 samples")
    rng = np.random.default_rng(seed)
    labels = sorted(monomial.vectors, key=repr)
    vecs = {}
    for lab in labels:
        x = rng.standard_normal((samples, 3))
        vecs[lab] = x / np.linalg.norm(x, axis=1, keepdims=True)
    values = np.ones(samples)
    for (u, v), mult in monomial.factors.items():
        values *= np.einsum("ij,ij->i", vecs[u], vecs[v]) ** mult
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(samples))


# unit directions used by the random surrogates: three axes and one oblique
_DIRECTIONS = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 2.0, 2.0],
]) / np.array([[1.0], [1.0], [1.0], [3.0]])


def random_model(seed: int, n_modes: int | None = None, n_max: int = 4, moving: bool | None = None,
                 optimal_f: bool | None = None) -> DiscreteModel:
    """Seeded 2-3 mode surrogate with nontrivial dot-product structure."""
    rng = np.random.default_rng(seed)
    if n_modes is None:
        n_modes = int(rng.integers(2, 4))
    dirs = rng.permutation(len(_DIRECTIONS))[:n_modes]
    signs = rng.choice([-1.0, 1.0], size=n_modes)
    mags = rng.uniform(0.3, 1.2, size=n_modes)
    vectors = _DIRECTIONS[dirs] * (signs * mags)[:, None]
    V = rng.uniform(0.2, 0.8, size=n_modes)
    if optimal_f is None:
        optimal_f = bool(rng.integers(0, 2))
    if optimal_f:
        f = -V / (mags + mags**2)
    else:
        f = rng.uniform(-0.6, 0.2, size=n_modes)
    if moving is None:
        moving = bool(rng.integers(0, 2))
    P = rng.uniform(-0.3, 0.3, size=3) if moving else np.zeros(3)
    return build_discrete_model(vectors, V, f, P, n_max=n_max, seed=seed)
