"""Variance estimators for the sample concentration ``theta_hat = A/M``.

All functions are pure. Negative estimates are returned as they are; the
caller decides whether to clamp.

========  ==============================================================
T1        first-order Taylor linearization
T2        second-order Taylor expansion (built from plug-in moments)
HT        Horvitz-Thompson form, batch assumed much larger than sample
AD1, AD2  T1/T2 with the kernel divided by ``1 - C_ij``
SYG       Sen-Yates-Grundy form
HYBxx     ``a*T1 + (1-a)*HT`` with ``a = 1 - exp(-RSD(M)/x)``
========  ==============================================================
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateMassVarianceError,
    EmptySampleError,
    InvalidConfigurationError,
    PartvarError,
    ZeroSampleAmountError,
)
from .model import (
    DependenceMatrix,
    PlugInMoments,
    PopulationSpec,
    SampleCounts,
    _check_dims,
    plug_in_kernel,
    plug_in_moments,
    quad_form,
)

DEFAULT_XS = (0.01, 0.05)


@dataclass(frozen=True)
class SecondOrderIntermediates:
    b_mean_hat: float
    b_var_hat: float
    beta_hat: float


def _sample_mass(sample: SampleCounts) -> float:
    m = sample.sample_mass
    if m <= 0:
        raise EmptySampleError()
    return m


def second_order_intermediates(mom: PlugInMoments) -> SecondOrderIntermediates:
    """Plug-in E(B), V(B) and beta, where ``B = A - M Cov(A;M)/V(M)``."""
    if not mom.vm_hat > 0:
        raise DegenerateMassVarianceError()
    if mom.a_hat == 0:
        raise ZeroSampleAmountError()
    slope = mom.cov_hat / mom.vm_hat
    return SecondOrderIntermediates(
        b_mean_hat=mom.a_hat - mom.m_hat * slope,
        b_var_hat=mom.va_hat - mom.cov_hat * slope,
        beta_hat=1.0 - mom.cov_hat * mom.m_hat / (mom.vm_hat * mom.a_hat),
    )


def _sample_intermediates(sample: SampleCounts, C: DependenceMatrix, variant) -> tuple[PlugInMoments, SecondOrderIntermediates]:
    """Moments plus intermediates evaluated through the residuals ``u = m c - slope m``.

    ``V(A) - Cov^2/V(M)`` cancels badly when A and M are nearly collinear;
    the quadratic form of ``u`` is the same quantity without the cancellation.
    Likewise ``E(B) = sum N u`` and ``beta = E(B)/A``.
    """
    mom = plug_in_moments(sample, C, variant)
    second_order_intermediates(mom)  # raises on degenerate inputs
    slope = mom.cov_hat / mom.vm_hat
    u = sample.masses * sample.concs - slope * sample.masses
    b_mean = float(np.sum(sample.counts * u))
    inter = SecondOrderIntermediates(
        b_mean_hat=b_mean,
        b_var_hat=quad_form(plug_in_kernel(sample, C, variant), u),
        beta_hat=b_mean / mom.a_hat,
    )
    return mom, inter


def second_order_variance(mom: PlugInMoments, inter: SecondOrderIntermediates | None = None) -> float:
    """Second-order Taylor variance of A/M assuming B independent of M and M normal."""
    s = inter if inter is not None else second_order_intermediates(mom)
    m2 = mom.m_hat * mom.m_hat
    bracket = s.b_mean_hat**2 + s.b_var_hat + 2.0 * s.beta_hat**2 * (mom.a_hat**2 / m2) * mom.vm_hat
    return s.b_var_hat / m2 + (mom.vm_hat / (m2 * m2)) * bracket


def _residuals(sample: SampleCounts, M: float) -> np.ndarray:
    th = sample.sample_amount / M
    return sample.masses * (sample.concs - th)


def v_t1(sample: SampleCounts, C: DependenceMatrix) -> float:
    M = _sample_mass(sample)
    k = plug_in_kernel(sample, C, "standard")
    return quad_form(k, _residuals(sample, M)) / (M * M)


def v_t2(sample: SampleCounts, C: DependenceMatrix) -> float:
    _sample_mass(sample)
    return second_order_variance(*_sample_intermediates(sample, C, "standard"))


def v_ht(sample: SampleCounts, C: DependenceMatrix) -> float:
    M = _sample_mass(sample)
    k = plug_in_kernel(sample, C, "ht_weighted")
    return quad_form(k, sample.masses * sample.concs) / (M * M)


def v_ht_finite(
    sample: SampleCounts,
    C: DependenceMatrix,
    population: PopulationSpec,
    kappa: Sequence[float] | None = None,
) -> float:
    """HT estimator without dropping the finite-batch term.

    With ``y_i = m_i c_i / (M_batch kappa_i)`` this is
    ``sum_ij K_ij y_i y_j / (1 - C_ij) - sum_i N_i kappa_i y_i**2``.
    When ``kappa`` is omitted every kind gets ``kappa_i = M_sample/M_batch``,
    which makes the first term equal to :func:`v_ht`.
    """
    M = _sample_mass(sample)
    mb = population.batch_mass
    if not mb > 0:
        raise InvalidConfigurationError("finite-batch HT needs M_batch > 0")
    if population.n_kinds != sample.n_kinds:
        raise InvalidConfigurationError("population and sample have different numbers of kinds")
    k = plug_in_kernel(sample, C, "ht_weighted")
    if kappa is None:
        kap = np.full(sample.n_kinds, M / mb)
    else:
        kap = np.asarray(kappa, dtype=np.float64)
        if kap.shape != (sample.n_kinds,) or np.any(kap <= 0):
            raise InvalidConfigurationError("kappa must hold one positive inclusion probability per kind")
    y = sample.masses * sample.concs / (mb * kap)
    n = sample.counts.astype(np.float64)
    return quad_form(k, y) - float(np.sum(n * kap * y * y))


def v_ad1(sample: SampleCounts, C: DependenceMatrix) -> float:
    M = _sample_mass(sample)
    k = plug_in_kernel(sample, C, "ht_weighted")
    return quad_form(k, _residuals(sample, M)) / (M * M)


def v_ad2(sample: SampleCounts, C: DependenceMatrix) -> float:
    _sample_mass(sample)
    return second_order_variance(*_sample_intermediates(sample, C, "ht_weighted"))


def v_syg(sample: SampleCounts, C: DependenceMatrix) -> float:
    M = _sample_mass(sample)
    _check_dims(sample, C)
    C.check_weightable()
    y = sample.masses * sample.concs
    n = sample.counts.astype(np.float64)
    w = C.values / (1.0 - C.values)
    d = np.subtract.outer(y, y)
    return float(np.sum(np.outer(n, n) * d * d * w)) / (2.0 * M * M)


def var_m_hat(sample: SampleCounts, C: DependenceMatrix) -> float:
    """``sum_i N_i m_i^2 - sum_ij C_ij N_i N_j m_i m_j``; may be negative."""
    k = plug_in_kernel(sample, C, "standard")
    return quad_form(k, sample.masses)


def rsd_hat(sample: SampleCounts, C: DependenceMatrix) -> float:
    M = _sample_mass(sample)
    v = var_m_hat(sample, C)
    return math.sqrt(v) / M if v >= 0 else 0.0


def hybrid_weight(rsd: float, x: float) -> float:
    if not (math.isfinite(x) and x > 0):
        raise InvalidConfigurationError(f"hybrid parameter x must be > 0, got {x}")
    if not rsd >= 0:
        raise InvalidConfigurationError(f"RSD must be >= 0, got {rsd}")
    return -math.expm1(-rsd / x)


def _mix(a: float, t1: float, ht: float) -> float:
    return ht + a * (t1 - ht)


def v_hyb(sample: SampleCounts, C: DependenceMatrix, x: float) -> float:
    a = hybrid_weight(rsd_hat(sample, C), x)
    return _mix(a, v_t1(sample, C), v_ht(sample, C))


def hyb_name(x: float) -> str:
    pct = x * 100
    if abs(pct - round(pct)) < 1e-9 and round(pct) < 100:
        return f"HYB{int(round(pct)):02d}"
    return f"HYB{x:g}"


@dataclass(frozen=True)
class EstimateRecord:
    name: str
    value: float | None
    negative_flag: bool
    inputs_digest: str
    error: str | None = None


@dataclass(frozen=True)
class EstimateReport:
    theta_hat: float
    sample_mass: float
    var_m_hat: float
    rsd_hat: float
    estimates: tuple[EstimateRecord, ...]
    matrix_variant: str = "eq1"
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __getitem__(self, name: str) -> EstimateRecord:
        for rec in self.estimates:
            if rec.name == name:
                return rec
        raise KeyError(name)

    def values(self) -> dict[str, float | None]:
        return {r.name: r.value for r in self.estimates}


def inputs_digest(sample: SampleCounts, C: DependenceMatrix) -> str:
    order = np.argsort(sample.kind_ids, kind="stable")
    h = hashlib.sha256(sample.digest().encode())
    h.update(C.values[np.ix_(order, order)].tobytes())
    return h.hexdigest()[:16]


def estimate_all(
    sample: SampleCounts,
    C: DependenceMatrix,
    xs: Sequence[float] = DEFAULT_XS,
    population: PopulationSpec | None = None,
    kappa: Sequence[float] | None = None,
) -> EstimateReport:
    """Evaluate every estimator; failing ones become errored entries."""
    M = _sample_mass(sample)
    _check_dims(sample, C)
    for x in xs:
        hybrid_weight(0.0, x)
    digest = inputs_digest(sample, C)
    vm = var_m_hat(sample, C)
    rsd = math.sqrt(vm) / M if vm >= 0 else 0.0

    funcs = [
        ("T1", lambda: v_t1(sample, C)),
        ("T2", lambda: v_t2(sample, C)),
        ("HT", lambda: v_ht(sample, C)),
        ("AD1", lambda: v_ad1(sample, C)),
        ("AD2", lambda: v_ad2(sample, C)),
        ("SYG", lambda: v_syg(sample, C)),
    ]
    if population is not None:
        funcs.append(("HT_FINITE", lambda: v_ht_finite(sample, C, population, kappa)))

    records: list[EstimateRecord] = []
    values: dict[str, float] = {}
    errors: dict[str, str] = {}
    for name, fn in funcs:
        try:
            values[name] = fn()
        except PartvarError as exc:
            errors[name] = str(exc)
    for x in xs:
        name = hyb_name(x)
        if "T1" in values and "HT" in values:
            values[name] = _mix(hybrid_weight(rsd, x), values["T1"], values["HT"])
        else:
            errors[name] = errors.get("HT") or errors.get("T1")
    names = [n for n, _ in funcs] + [hyb_name(x) for x in xs]
    for name in names:
        if name in values:
            v = values[name]
            records.append(EstimateRecord(name, v, v < 0, digest))
        else:
            records.append(EstimateRecord(name, None, False, digest, errors[name]))

    warns = []
    concs = sample.concs
    if np.any((concs < 0) | (concs > 1)):
        warns.append("some concentrations lie outside [0, 1]")
    if vm < 0:
        warns.append("estimated V(M_sample) is negative; RSD set to 0")
    neg = [r.name for r in records if r.negative_flag]
    if neg:
        warns.append("negative variance estimates: " + ", ".join(neg))
    return EstimateReport(
        theta_hat=sample.sample_amount / M,
        sample_mass=M,
        var_m_hat=vm,
        rsd_hat=rsd,
        estimates=tuple(records),
        matrix_variant=C.variant,
        warnings=tuple(warns),
    )
