"""Exact and Monte Carlo checks of the estimators against simulated truth."""

from __future__ import annotations

import hashlib
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import estimators as est
from .designs import (
    DesignSpec,
    CountSampler,
    dependence_matrices,
    enumerate_counts,
    format_design,
)
from .errors import InvalidConfigurationError, PartvarError
from .model import DependenceMatrix, PopulationSpec, SampleCounts
from .streams import Stream

Z_GATE = 4.0
MIN_REPS_FOR_GATE = 1000


def _fmean(x: np.ndarray) -> float:
    return math.fsum(x) / len(x)


def _fvar(x: np.ndarray) -> float:
    mu = _fmean(x)
    return math.fsum((x - mu) ** 2) / (len(x) - 1)


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    digest: str
    sample_mass: float
    sample_amount: float
    theta_hat: float | None
    estimates: dict[str, float | None]
    errors: dict[str, str]


class MonteCarloRecords(Sequence):
    """Columnar store of a Monte Carlo run; indexing yields ReplicationRecord."""

    def __init__(self, names, counts, acc, values, codes, seed, design_text):
        self.names = tuple(names)
        self.counts = counts
        self.values = values
        self.codes = codes
        self.seed = seed
        self.design_text = design_text
        self.sample_mass = acc[:, _kernels.A_M].copy()
        self.sample_amount = acc[:, _kernels.A_A].copy()
        self.theta = acc[:, _kernels.A_TH].copy()

    def __len__(self) -> int:
        return self.counts.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        estimates, errors = {}, {}
        for j, name in enumerate(self.names):
            code = int(self.codes[i, j])
            if code == _kernels.OK:
                estimates[name] = float(self.values[i, j])
            else:
                estimates[name] = None
                errors[name] = _kernels.ERROR_MESSAGES[code]
        th = float(self.theta[i])
        return ReplicationRecord(
            index=i,
            digest=hashlib.sha256(self.counts[i].tobytes()).hexdigest()[:16],
            sample_mass=float(self.sample_mass[i]),
            sample_amount=float(self.sample_amount[i]),
            theta_hat=None if math.isnan(th) else th,
            estimates=estimates,
            errors=errors,
        )

    def column(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        j = self.names.index(name)
        return self.values[:, j], self.codes[:, j]

    @property
    def empty(self) -> np.ndarray:
        return ~(self.sample_mass > 0)


def _public_names(names):
    return [est.hyb_name(float(n.split(":", 1)[1])) if n.startswith("HYB:") else n for n in names]


def run_monte_carlo(
    design: DesignSpec,
    population: PopulationSpec,
    C: DependenceMatrix,
    reps: int,
    seed: int,
    *,
    C_ht: DependenceMatrix | None = None,
    xs: Sequence[float] = est.DEFAULT_XS,
    workers: int = 1,
    backend: str | None = None,
) -> MonteCarloRecords:
    """Draw ``reps`` samples and evaluate every estimator on each.

    Replicate ``r`` draws from ``Stream(seed).substream(r)``, so the output
    does not depend on ``workers``. ``C`` feeds the Taylor-type estimators
    and ``C_ht`` (default ``C``) the HT-type ones.
    """
    if reps < 1:
        raise InvalidConfigurationError("reps must be >= 1")
    for x in xs:
        est.hybrid_weight(0.0, x)
    T = population.n_kinds
    if C.dim != T or (C_ht is not None and C_ht.dim != T):
        raise InvalidConfigurationError("dependence matrix and population dimensions differ")
    sampler = CountSampler(design, population)
    root = Stream(seed)
    m_batch = population.batch_mass
    c_ht = None if C_ht is None else C_ht.values

    def block(start: int):
        stop = min(start + _kernels.CHUNK, reps)
        counts = np.empty((stop - start, T), dtype=np.int64)
        for k, r in enumerate(range(start, stop)):
            counts[k] = sampler.draw(root.substream(r).generator())
        acc, names, vals, codes = _kernels.evaluate_batch(
            counts, population.masses, population.concs, C.values, c_ht, xs,
            m_batch=m_batch if m_batch > 0 else None, backend=backend,
        )
        return counts, acc, names, vals, codes

    starts = range(0, reps, _kernels.CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    names = _public_names(parts[0][2])
    return MonteCarloRecords(
        names,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[3] for p in parts]),
        np.concatenate([p[4] for p in parts]),
        seed,
        format_design(design),
    )


@dataclass(frozen=True)
class EstimatorBias:
    name: str
    target: str
    mean: float | None
    mc_se: float | None
    empirical_variance: float
    relative_bias: float | None
    z: float | None
    negative_count: int
    error_count: int


@dataclass(frozen=True)
class BiasReport:
    n_records: int
    n_empty: int
    theta_mean: float
    batch_conc: float | None
    var_theta: float
    var_m_sample: float
    skewness_m: float | None
    excess_kurtosis_m: float | None
    estimators: tuple[EstimatorBias, ...]

    def __getitem__(self, name: str) -> EstimatorBias:
        for e in self.estimators:
            if e.name == name:
                return e
        raise KeyError(name)


def _shape_moments(x: np.ndarray) -> tuple[float | None, float | None]:
    mu = _fmean(x)
    d = x - mu
    m2 = math.fsum(d * d) / len(x)
    if m2 <= 0:
        return None, None
    m3 = math.fsum(d**3) / len(x)
    m4 = math.fsum(d**4) / len(x)
    return m3 / m2**1.5, m4 / m2**2 - 3.0


def _bias_entry(name, target_name, vals, ok, dev2_scaled, target, n_err):
    k = int(ok.sum())
    neg = int(np.sum(vals[ok] < 0))
    if k == 0:
        return EstimatorBias(name, target_name, None, None, target, None, None, neg, n_err)
    v = vals[ok]
    mean = _fmean(v)
    se = math.sqrt(_fvar(v) / k) if k > 1 else None
    rel = mean / target - 1.0 if target > 0 else None
    z = None
    if k > 1:
        d = v - dev2_scaled[ok]
        sd = math.sqrt(_fvar(d))
        if sd > 0:
            z = _fmean(d) / (sd / math.sqrt(k))
    return EstimatorBias(name, target_name, mean, se, target, rel, z, neg, n_err)


def bias_report(records: MonteCarloRecords, population: PopulationSpec | None = None) -> BiasReport:
    """Compare the mean of every estimator with the empirical variance it targets.

    ``z`` is the mean of the per-replicate difference between the estimate
    and the squared deviation of theta_hat (scaled by n/(n-1)), divided by
    its standard error. VARM is compared with the variance of M_sample.
    """
    ne = ~records.empty
    n = int(ne.sum())
    if n < 2:
        raise InvalidConfigurationError("fewer than 2 records with a defined theta_hat")
    theta = records.theta
    th_mean = _fmean(theta[ne])
    var_theta = _fvar(theta[ne])
    dev_th = np.where(ne, (np.where(ne, theta, th_mean) - th_mean) ** 2 * (n / (n - 1)), np.nan)
    M = records.sample_mass
    R = len(records)
    var_m = _fvar(M) if R > 1 else 0.0
    dev_m = (M - _fmean(M)) ** 2 * (R / (R - 1)) if R > 1 else np.zeros(R)
    skew, kurt = _shape_moments(M)

    entries = []
    for name in records.names:
        if name == "RSD":
            continue
        vals, codes = records.column(name)
        ok = codes == _kernels.OK
        n_err = int(np.sum(~ok))
        if name == "VARM":
            entries.append(_bias_entry(name, "var_m_sample", vals, ok, dev_m, var_m, n_err))
        else:
            entries.append(_bias_entry(name, "var_theta", vals, ok & ne, dev_th, var_theta, n_err))
    batch = None
    if population is not None and population.batch_mass > 0:
        batch = population.batch_conc
    return BiasReport(
        n_records=R,
        n_empty=R - n,
        theta_mean=th_mean,
        batch_conc=batch,
        var_theta=var_theta,
        var_m_sample=var_m,
        skewness_m=skew,
        excess_kurtosis_m=kurt,
        estimators=tuple(entries),
    )


@dataclass(frozen=True)
class CovarianceCheck:
    status: str  # "pass" | "fail" | "insufficient"
    z: np.ndarray | None
    empirical: np.ndarray | None
    predicted: np.ndarray | None
    max_abs_z: float | None
    failing: tuple[tuple[int, int], ...]
    reps: int


def covariance_identity_check(
    records: MonteCarloRecords,
    C: DependenceMatrix,
    population: PopulationSpec | None = None,
    design: DesignSpec | None = None,
    gate: float = Z_GATE,
    min_reps: int = MIN_REPS_FOR_GATE,
) -> CovarianceCheck:
    """Empirical Cov(N_i, N_j) against ``delta_ij E(N_i) - C_ij E(N_i) E(N_j)``.

    Standard errors come from the per-replicate linearization
    ``(N_i - mu_i)(N_j - mu_j) - delta_ij N_i + C_ij (mu_j N_i + mu_i N_j)``.
    """
    R = len(records)
    if R < min_reps:
        return CovarianceCheck("insufficient", None, None, None, None, (), R)
    N = records.counts.astype(np.float64)
    T = N.shape[1]
    if C.dim != T:
        raise InvalidConfigurationError("dependence matrix and records dimensions differ")
    mu = np.array([_fmean(N[:, i]) for i in range(T)])
    if np.any(mu <= 0):
        raise InvalidConfigurationError("degenerate records: some kind never appears in any replicate")
    dev = N - mu
    Cv = C.values
    emp = np.empty((T, T))
    se = np.empty((T, T))
    for i in range(T):
        for j in range(i, T):
            prod = dev[:, i] * dev[:, j]
            emp[i, j] = emp[j, i] = math.fsum(prod) / (R - 1)
            u = prod + Cv[i, j] * (mu[j] * N[:, i] + mu[i] * N[:, j])
            if i == j:
                u = u - N[:, i]
            se[i, j] = se[j, i] = math.sqrt(_fvar(u) / R)
    pred = np.diag(mu) - Cv * np.outer(mu, mu)
    diff = emp - pred
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))
    failing = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(np.abs(z) > gate)) if i <= j)
    return CovarianceCheck(
        "fail" if failing else "pass", z, emp, pred, float(np.max(np.abs(z))), failing, R
    )


# exact checks ---------------------------------------------------------------

DEFAULT_VARIANT = {
    "T1": "eq1",
    "T2": "eq1",
    "VARM": "eq1",
    "HT": "cprime",
    "HT_FINITE": "cprime",
    "AD1": "cprime",
    "AD2": "cprime",
    "SYG": "cprime",
}


def _scalar_estimator(name: str, population: PopulationSpec):
    funcs = {
        "T1": est.v_t1,
        "T2": est.v_t2,
        "HT": est.v_ht,
        "AD1": est.v_ad1,
        "AD2": est.v_ad2,
        "SYG": est.v_syg,
        "VARM": est.var_m_hat,
        "HT_FINITE": lambda s, C: est.v_ht_finite(s, C, population),
    }
    try:
        return funcs[name]
    except KeyError:
        raise InvalidConfigurationError(f"unknown estimator {name!r}; choose from {sorted(funcs)}") from None


def collapsed_outcomes(design: DesignSpec, population: PopulationSpec) -> tuple[np.ndarray, np.ndarray]:
    """Exact outcome distribution with identical count vectors merged."""
    counts, probs = enumerate_counts(design, population)
    uniq, inv = np.unique(counts, axis=0, return_inverse=True)
    inv = inv.ravel()
    p = np.array([math.fsum(probs[inv == k]) for k in range(len(uniq))])
    return uniq, p


def exact_count_moments(design: DesignSpec, population: PopulationSpec) -> tuple[np.ndarray, np.ndarray]:
    """Exact E(N_i) and E(N_i N_j) by enumeration."""
    counts, p = collapsed_outcomes(design, population)
    n = counts.astype(np.float64)
    T = n.shape[1]
    e1 = np.array([math.fsum(p * n[:, i]) for i in range(T)])
    e2 = np.array([[math.fsum(p * n[:, i] * n[:, j]) for j in range(T)] for i in range(T)])
    return e1, e2


def c_from_moments(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Solve the count-covariance parameterization for C given exact moments."""
    cov = e2 - np.outer(e1, e1)
    return (np.diag(e1) - cov) / np.outer(e1, e1)


@dataclass(frozen=True)
class ExactCheck:
    estimator: str
    variant: str
    expected_estimate: float | None
    exact_variance: float
    absolute_bias: float | None
    relative_bias: float | None
    n_outcomes: int
    p_empty: float
    error: str | None = None


def exact_unbiasedness_check(
    design: DesignSpec,
    population: PopulationSpec,
    estimator: str,
    variant: str | None = None,
) -> ExactCheck:
    """Exact expectation of an estimator over the design's outcome distribution.

    Theta-based estimators are compared with Var(theta_hat) conditional on a
    non-empty sample; ``VARM`` with Var(M_sample). ``variant`` picks which
    design-implied matrix is supplied: ``"cprime"`` or ``"eq1"``.
    """
    variant = variant or DEFAULT_VARIANT.get(estimator)
    fn = _scalar_estimator(estimator, population)
    cprime, ceq = dependence_matrices(design, population)
    C = {"cprime": cprime, "eq1": ceq}.get(variant)
    if C is None:
        raise InvalidConfigurationError(f"unknown matrix variant {variant!r}")
    counts, p = collapsed_outcomes(design, population)
    M = counts @ population.masses
    A = counts @ (population.masses * population.concs)

    if estimator == "VARM":
        use = np.ones(len(p), dtype=bool)
        w = p
        target_vals = M
        p_empty = math.fsum(p[M <= 0])
    else:
        use = M > 0
        p_empty = math.fsum(p[~use])
        w = p[use] / (1.0 - p_empty)
        target_vals = A[use] / M[use]
    mu = math.fsum(w * target_vals)
    # a constant target has zero variance; avoid reporting rounding dust
    exact_var = 0.0 if np.ptp(target_vals) == 0 else math.fsum(w * (target_vals - mu) ** 2)

    vals = []
    for row in counts[use]:
        try:
            vals.append(fn(SampleCounts(population.kinds, row), C))
        except PartvarError as exc:
            return ExactCheck(estimator, variant, None, exact_var, None, None, len(p), p_empty, str(exc))
    expected = math.fsum(w * np.asarray(vals))
    rel = expected / exact_var - 1.0 if exact_var > 0 else None
    return ExactCheck(estimator, variant, expected, exact_var, expected - exact_var, rel, len(p), p_empty)


# golden values -----------------------------------------------------------------

GOLDEN_CONFIGS = {
    "srswor3_3x2_unequal": dict(masses=[1.0, 2.0, 3.0], concs=[0.0, 0.5, 1.0], batch=[2, 2, 2], n=3),
    "srswor3_3x2_equal": dict(masses=[1.0, 1.0, 1.0], concs=[0.0, 0.5, 1.0], batch=[2, 2, 2], n=3),
}


def golden_values() -> dict:
    """Enumeration-oracle values frozen into the test fixtures."""
    from .designs import SrsworDesign

    out = {}
    for key, cfg in GOLDEN_CONFIGS.items():
        pop = PopulationSpec.from_arrays(cfg["batch"], cfg["masses"], cfg["concs"])
        design = SrsworDesign(cfg["n"])
        checks = {}
        for name in ("T1", "T2", "HT", "HT_FINITE", "AD1", "AD2", "SYG", "VARM"):
            r = exact_unbiasedness_check(design, pop, name)
            checks[name] = {
                "variant": r.variant,
                "expected_estimate": r.expected_estimate,
                "exact_variance": r.exact_variance,
                "relative_bias": r.relative_bias,
                "error": r.error,
            }
        counts, _ = enumerate_counts(design, pop)
        out[key] = {"config": dict(cfg, design=format_design(design)), "n_outcomes": len(counts), "checks": checks}
    return out
