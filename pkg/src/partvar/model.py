"""Populations, samples, the dependence matrix, and plug-in moments.

A population (batch) consists of ``T`` kinds of particles. Kind ``i`` has
particle mass ``m_i`` and concentration ``c_i``. A sample records the
number ``N_i`` of particles of each kind. The count covariance is
parameterized by a symmetric matrix ``C``::

    Cov(N_i, N_j) = delta_ij E(N_i) - C_ij E(N_i) E(N_j)

Every estimator in :mod:`partvar.estimators` replaces the expected counts
by observed counts, which turns the covariance into the plug-in kernel
``K_ij = N_i delta_ij - C_ij N_i N_j``.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateDependenceError, EmptySampleError, InvalidConfigurationError

KernelVariant = Literal["standard", "ht_weighted"]
MatrixVariant = Literal["eq1", "cprime"]

SYMMETRY_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleKind:
    kind_id: int
    mass: float
    conc: float

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise InvalidConfigurationError(f"kind {self.kind_id}: mass must be finite and > 0, got {self.mass}")
        if not math.isfinite(self.conc):
            raise InvalidConfigurationError(f"kind {self.kind_id}: concentration must be finite, got {self.conc}")
        if not 0.0 <= self.conc <= 1.0:
            warnings.warn(
                f"kind {self.kind_id}: concentration {self.conc} lies outside [0, 1]",
                stacklevel=3,
            )


def make_kinds(masses: Sequence[float], concs: Sequence[float], kind_ids: Sequence[int] | None = None) -> tuple[ParticleKind, ...]:
    masses = list(masses)
    concs = list(concs)
    if len(masses) != len(concs):
        raise InvalidConfigurationError("masses and concentrations differ in length")
    if kind_ids is None:
        kind_ids = range(1, len(masses) + 1)
    return tuple(ParticleKind(int(k), float(m), float(c)) for k, m, c in zip(kind_ids, masses, concs))


def _check_kinds(kinds: tuple[ParticleKind, ...]) -> None:
    if len(kinds) == 0:
        raise InvalidConfigurationError("at least one particle kind is required")
    ids = [k.kind_id for k in kinds]
    if len(set(ids)) != len(ids):
        raise InvalidConfigurationError(f"kind ids must be unique, got {ids}")


def _check_counts(counts, n: int, what: str) -> np.ndarray:
    arr = np.asarray(counts)
    if arr.shape != (n,):
        raise InvalidConfigurationError(f"{what}: expected {n} counts, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise InvalidConfigurationError(f"{what}: counts must be integers")
    elif arr.dtype.kind not in "iu":
        raise InvalidConfigurationError(f"{what}: counts must be integers")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise InvalidConfigurationError(f"{what}: counts must be non-negative")
    return _frozen(arr)


class _KindsMixin:
    kinds: tuple[ParticleKind, ...]

    @property
    def n_kinds(self) -> int:
        return len(self.kinds)

    @property
    def kind_ids(self) -> tuple[int, ...]:
        return tuple(k.kind_id for k in self.kinds)

    @property
    def masses(self) -> np.ndarray:
        return np.array([k.mass for k in self.kinds], dtype=np.float64)

    @property
    def concs(self) -> np.ndarray:
        return np.array([k.conc for k in self.kinds], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class PopulationSpec(_KindsMixin):
    """The batch: particle kinds and how many particles of each kind it holds."""

    kinds: tuple[ParticleKind, ...]
    batch_counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        _check_kinds(self.kinds)
        object.__setattr__(self, "batch_counts", _check_counts(self.batch_counts, len(self.kinds), "batch counts"))

    @classmethod
    def from_arrays(cls, batch_counts, masses, concs, kind_ids=None) -> PopulationSpec:
        return cls(make_kinds(masses, concs, kind_ids), batch_counts)

    @property
    def batch_mass(self) -> float:
        return float(np.sum(self.batch_counts * self.masses))

    @property
    def batch_amount(self) -> float:
        return float(np.sum(self.batch_counts * self.masses * self.concs))

    @property
    def batch_conc(self) -> float:
        mb = self.batch_mass
        if mb <= 0:
            raise EmptySampleError("empty population (M_batch = 0)")
        return self.batch_amount / mb

    @property
    def total_particles(self) -> int:
        return int(self.batch_counts.sum())

    def particle_kinds(self) -> np.ndarray:
        """Kind index (0-based position) of every particle, particles listed kind by kind."""
        return np.repeat(np.arange(self.n_kinds), self.batch_counts)


@dataclass(frozen=True, eq=False)
class SampleCounts(_KindsMixin):
    """Observed per-kind particle counts of one sample."""

    kinds: tuple[ParticleKind, ...]
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        _check_kinds(self.kinds)
        object.__setattr__(self, "counts", _check_counts(self.counts, len(self.kinds), "sample counts"))

    @classmethod
    def from_arrays(cls, counts, masses, concs, kind_ids=None) -> SampleCounts:
        return cls(make_kinds(masses, concs, kind_ids), counts)

    def with_counts(self, counts) -> SampleCounts:
        return SampleCounts(self.kinds, counts)

    @property
    def sample_mass(self) -> float:
        return float(np.sum(self.counts * self.masses))

    @property
    def sample_amount(self) -> float:
        return float(np.sum(self.counts * self.masses * self.concs))

    @property
    def theta_hat(self) -> float:
        return theta_hat(self)

    def digest(self) -> str:
        """Order-independent SHA-256 of kinds and counts (kinds sorted by id)."""
        order = np.argsort(self.kind_ids, kind="stable")
        h = hashlib.sha256()
        h.update(np.asarray(self.kind_ids, dtype=np.int64)[order].tobytes())
        h.update(self.masses[order].tobytes())
        h.update(self.concs[order].tobytes())
        h.update(self.counts[order].tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class DependenceMatrix:
    """Symmetric T x T matrix of dependent-selection parameters.

    ``variant`` records which definition produced the values: ``"eq1"`` for
    the count-covariance parameterization, ``"cprime"`` for the one derived
    from second-order inclusion probabilities. Estimators treat both alike.
    """

    values: np.ndarray
    variant: MatrixVariant = "eq1"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] == 0:
            raise InvalidConfigurationError(f"dependence matrix must be square and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidConfigurationError("dependence matrix has non-finite entries")
        asym = float(np.max(np.abs(v - v.T)))
        if asym > SYMMETRY_TOL:
            raise InvalidConfigurationError(f"dependence matrix is not symmetric (max |C_ij - C_ji| = {asym:.3g})")
        if asym > 0:
            v = 0.5 * (v + v.T)
        if self.variant not in ("eq1", "cprime"):
            raise InvalidConfigurationError(f"unknown dependence matrix variant {self.variant!r}")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, dim: int, variant: MatrixVariant = "eq1") -> DependenceMatrix:
        return cls(np.zeros((dim, dim)), variant)

    @classmethod
    def uniform(cls, dim: int, value: float, variant: MatrixVariant = "eq1") -> DependenceMatrix:
        return cls(np.full((dim, dim), float(value)), variant)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def permuted(self, order) -> DependenceMatrix:
        order = np.asarray(order)
        return DependenceMatrix(self.values[np.ix_(order, order)], self.variant)

    def check_weightable(self) -> None:
        if np.any(self.values >= 1.0):
            raise DegenerateDependenceError()


@dataclass(frozen=True)
class PlugInMoments:
    """Plug-in E(M), E(A), V(M), V(A) and Cov(A; M) of one sample."""

    m_hat: float
    a_hat: float
    vm_hat: float
    va_hat: float
    cov_hat: float
    kernel_variant: KernelVariant = "standard"


def theta_hat(sample: SampleCounts) -> float:
    m = sample.sample_mass
    if m <= 0:
        raise EmptySampleError()
    return sample.sample_amount / m


def _check_dims(sample: SampleCounts, C: DependenceMatrix) -> None:
    if C.dim != sample.n_kinds:
        raise InvalidConfigurationError(f"dependence matrix is {C.dim}x{C.dim} but the sample has {sample.n_kinds} kinds")


def plug_in_kernel(sample: SampleCounts, C: DependenceMatrix, variant: KernelVariant = "standard") -> np.ndarray:
    """``N_i delta_ij - C_ij N_i N_j``, divided elementwise by ``1 - C_ij`` for ``ht_weighted``."""
    _check_dims(sample, C)
    n = sample.counts.astype(np.float64)
    k = np.diag(n) - C.values * np.outer(n, n)
    if variant == "standard":
        return k
    if variant == "ht_weighted":
        C.check_weightable()
        return k / (1.0 - C.values)
    raise InvalidConfigurationError(f"unknown kernel variant {variant!r}")


def quad_form(k: np.ndarray, u: np.ndarray, v: np.ndarray | None = None) -> float:
    """``sum_ij k_ij u_i v_j`` with pairwise summation over the flattened products."""
    if v is None:
        v = u
    return float(np.sum(k * np.outer(u, v)))


def plug_in_moments(sample: SampleCounts, C: DependenceMatrix, variant: KernelVariant = "standard") -> PlugInMoments:
    k = plug_in_kernel(sample, C, variant)
    m = sample.masses
    mc = m * sample.concs
    n = sample.counts.astype(np.float64)
    return PlugInMoments(
        m_hat=float(np.sum(n * m)),
        a_hat=float(np.sum(n * mc)),
        vm_hat=quad_form(k, m),
        va_hat=quad_form(k, mc),
        cov_hat=quad_form(k, mc, m),
        kernel_variant=variant,
    )
