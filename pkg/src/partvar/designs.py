"""Sampling designs, their inclusion probabilities, and exact enumeration.

Particles of the population are listed kind by kind (all particles of the
first kind, then the second, ...). Cluster designs partition that list.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EnumerationTooLargeError, InvalidConfigurationError
from .model import DependenceMatrix, PopulationSpec, SampleCounts
from .streams import Stream

ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class PoissonDesign:
    """Counts drawn directly as independent Poisson variables; no particle identity."""

    rates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if any(not (math.isfinite(r) and r >= 0) for r in self.rates):
            raise InvalidConfigurationError("Poisson rates must be finite and >= 0")


@dataclass(frozen=True)
class BernoulliDesign:
    kappa: float

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise InvalidConfigurationError(f"Bernoulli inclusion probability must lie in (0, 1], got {self.kappa}")


@dataclass(frozen=True)
class SrsworDesign:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfigurationError(f"SRSWOR sample size must be >= 1, got {self.n}")


@dataclass(frozen=True)
class ClusterBernoulliDesign:
    """Each cluster enters the sample with probability ``kappa``, independently.

    Clusters come either from ``labels`` (cluster id per particle) or by
    chunking the particle list into consecutive groups of ``size``.
    """

    kappa: float
    size: int | None = None
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise InvalidConfigurationError(f"cluster inclusion probability must lie in (0, 1], got {self.kappa}")
        if (self.size is None) == (self.labels is None):
            raise InvalidConfigurationError("give exactly one of cluster size or cluster labels")
        if self.size is not None and self.size < 1:
            raise InvalidConfigurationError("cluster size must be >= 1")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))

    def cluster_labels(self, population: PopulationSpec) -> np.ndarray:
        n = population.total_particles
        if self.labels is not None:
            if len(self.labels) != n:
                raise InvalidConfigurationError(
                    f"cluster labels cover {len(self.labels)} particles but the population has {n}"
                )
            return np.asarray(self.labels, dtype=np.int64)
        return np.arange(n, dtype=np.int64) // self.size

    def compositions(self, population: PopulationSpec) -> np.ndarray:
        """Per-cluster kind counts, shape (n_clusters, T)."""
        labels = self.cluster_labels(population)
        _, inv = np.unique(labels, return_inverse=True)
        comp = np.zeros((inv.max() + 1 if inv.size else 0, population.n_kinds), dtype=np.int64)
        np.add.at(comp, (inv, population.particle_kinds()), 1)
        return comp


DesignSpec = Union[PoissonDesign, BernoulliDesign, SrsworDesign, ClusterBernoulliDesign]


@dataclass(frozen=True, eq=False)
class InclusionTable:
    """Class-level inclusion probabilities.

    ``kappa2[i, j]`` is the probability that a given pair of distinct
    particles, one of kind i and one of kind j, both enter the sample.
    For Poisson designs only ``rates`` is set.
    """

    kappa: np.ndarray | None
    kappa2: np.ndarray | None
    rates: np.ndarray | None = None

    @property
    def is_poisson(self) -> bool:
        return self.rates is not None


def _validate(design: DesignSpec, population: PopulationSpec) -> None:
    if isinstance(design, PoissonDesign):
        if len(design.rates) != population.n_kinds:
            raise InvalidConfigurationError(
                f"Poisson design has {len(design.rates)} rates but the population has {population.n_kinds} kinds"
            )
        return
    if population.total_particles == 0:
        raise InvalidConfigurationError("population holds no particles")
    if isinstance(design, SrsworDesign) and design.n > population.total_particles:
        raise InvalidConfigurationError(
            f"SRSWOR sample size {design.n} exceeds the population size {population.total_particles}"
        )
    if isinstance(design, ClusterBernoulliDesign):
        design.cluster_labels(population)


def theoretical_inclusion(design: DesignSpec, population: PopulationSpec) -> InclusionTable:
    _validate(design, population)
    T = population.n_kinds
    if isinstance(design, PoissonDesign):
        return InclusionTable(None, None, np.asarray(design.rates))
    if isinstance(design, BernoulliDesign):
        k = design.kappa
        return InclusionTable(np.full(T, k), np.full((T, T), k * k))
    if isinstance(design, SrsworDesign):
        n, tot = design.n, population.total_particles
        k2 = n * (n - 1) / (tot * (tot - 1)) if tot > 1 else 0.0
        return InclusionTable(np.full(T, n / tot), np.full((T, T), k2))
    if isinstance(design, ClusterBernoulliDesign):
        k = design.kappa
        comp = design.compositions(population).astype(np.float64)
        nb = population.batch_counts.astype(np.float64)
        same = comp.T @ comp - np.diag(nb)
        pairs = np.outer(nb, nb) - np.diag(nb)
        k2 = np.full((T, T), k * k)
        has = pairs > 0
        k2[has] = (same[has] * k + (pairs[has] - same[has]) * k * k) / pairs[has]
        return InclusionTable(np.full(T, k), k2)
    raise InvalidConfigurationError(f"unknown design {design!r}")


def cprime_from_inclusion(table: InclusionTable) -> DependenceMatrix:
    if table.is_poisson:
        return DependenceMatrix.zeros(len(table.rates), "cprime")
    kap = table.kappa
    if np.any(kap <= 0):
        raise InvalidConfigurationError("undefined dependence parameter: some first-order inclusion probability is 0")
    return DependenceMatrix(1.0 - table.kappa2 / np.outer(kap, kap), "cprime")


def c_from_cprime(cprime: DependenceMatrix, population: PopulationSpec) -> DependenceMatrix:
    """``C_ij = C'_ij + delta_ij (1 - C'_ij) / N_i,batch``."""
    nb = population.batch_counts
    if cprime.dim != population.n_kinds:
        raise InvalidConfigurationError("matrix and population dimensions differ")
    if np.any(nb <= 0):
        raise InvalidConfigurationError("every kind needs a positive batch count to convert C' into C")
    v = np.array(cprime.values)
    d = np.diag(v)
    v[np.diag_indices_from(v)] = d + (1.0 - d) / nb
    return DependenceMatrix(v, "eq1")


def dependence_matrices(design: DesignSpec, population: PopulationSpec) -> tuple[DependenceMatrix, DependenceMatrix]:
    """Return ``(C', C)`` implied by the design; both zero for Poisson designs."""
    table = theoretical_inclusion(design, population)
    cp = cprime_from_inclusion(table)
    if table.is_poisson:
        return cp, DependenceMatrix.zeros(population.n_kinds, "eq1")
    return cp, c_from_cprime(cp, population)


def _generator(stream) -> np.random.Generator:
    if isinstance(stream, Stream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    raise TypeError("stream must be a partvar.streams.Stream or numpy Generator")


class CountSampler:
    """Draws count vectors for one (design, population) pair; set-up done once."""

    def __init__(self, design: DesignSpec, population: PopulationSpec):
        _validate(design, population)
        self.design = design
        self.population = population
        self._nb = population.batch_counts.astype(np.int64)
        if isinstance(design, ClusterBernoulliDesign):
            comp = design.compositions(population)
            self._types, self._type_counts = np.unique(comp, axis=0, return_counts=True)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        d = self.design
        if isinstance(d, PoissonDesign):
            return rng.poisson(np.asarray(d.rates)).astype(np.int64)
        if isinstance(d, BernoulliDesign):
            return rng.binomial(self._nb, d.kappa).astype(np.int64)
        if isinstance(d, SrsworDesign):
            return rng.multivariate_hypergeometric(self._nb, d.n).astype(np.int64)
        chosen = rng.binomial(self._type_counts, d.kappa)
        return (chosen @ self._types).astype(np.int64)


def draw_sample(design: DesignSpec, population: PopulationSpec, stream) -> SampleCounts:
    counts = CountSampler(design, population).draw(_generator(stream))
    return SampleCounts(population.kinds, counts)


def support_size(design: DesignSpec, population: PopulationSpec) -> int:
    _validate(design, population)
    if isinstance(design, PoissonDesign):
        raise InvalidConfigurationError("Poisson designs have unbounded support and cannot be enumerated")
    if isinstance(design, SrsworDesign):
        return math.comb(population.total_particles, design.n)
    if isinstance(design, BernoulliDesign):
        return 2 ** population.total_particles
    return 2 ** len(design.compositions(population))


def enumerate_counts(design: DesignSpec, population: PopulationSpec, cap: int = ENUMERATION_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Every possible outcome as (counts of shape (K, T), probabilities of shape (K,)).

    Outcomes are enumerated at the particle (or cluster) level, so identical
    count vectors may appear more than once.
    """
    size = support_size(design, population)
    if size > cap:
        raise EnumerationTooLargeError(size, cap)
    kinds = population.particle_kinds()
    T = population.n_kinds
    if isinstance(design, SrsworDesign):
        combos = np.array(list(itertools.combinations(range(population.total_particles), design.n)), dtype=np.int64)
        counts = np.zeros((len(combos), T), dtype=np.int64)
        rows = np.repeat(np.arange(len(combos)), design.n)
        np.add.at(counts, (rows, kinds[combos].ravel()), 1)
        return counts, np.full(len(combos), 1.0 / len(combos))
    if isinstance(design, BernoulliDesign):
        units = np.zeros((len(kinds), T), dtype=np.int64)
        units[np.arange(len(kinds)), kinds] = 1
    else:
        units = design.compositions(population)
    u = len(units)
    bits = (np.arange(2**u, dtype=np.int64)[:, None] >> np.arange(u)) & 1
    k = bits.sum(axis=1)
    p = design.kappa
    probs = p**k * (1.0 - p) ** (u - k)
    return bits @ units, probs


def enumerate_design(design: DesignSpec, population: PopulationSpec, cap: int = ENUMERATION_CAP) -> list[tuple[SampleCounts, float]]:
    counts, probs = enumerate_counts(design, population, cap)
    return [(SampleCounts(population.kinds, c), float(p)) for c, p in zip(counts, probs)]


DESIGN_GRAMMAR = (
    "design strings: poisson:l=<rate>,<rate>,...  bernoulli:k=<p>  srswor:n=<int>  cluster:k=<p>,size=<g>"
)

_NUM = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _num(text: str, what: str) -> float:
    text = text.strip()
    if not _NUM.match(text):
        raise InvalidConfigurationError(f"bad number {text!r} for {what}; {DESIGN_GRAMMAR}")
    return float(text)


def _int(text: str, what: str) -> int:
    text = text.strip()
    if not re.fullmatch(r"\d+", text):
        raise InvalidConfigurationError(f"bad integer {text!r} for {what}; {DESIGN_GRAMMAR}")
    return int(text)


def parse_design(text: str) -> DesignSpec:
    name, sep, rest = text.strip().partition(":")
    if not sep:
        raise InvalidConfigurationError(f"unknown design string {text!r}; {DESIGN_GRAMMAR}")
    params: dict[str, list[str]] = {}
    last = None
    for tok in rest.split(","):
        if "=" in tok:
            key, _, val = tok.partition("=")
            last = key.strip()
            if last in params:
                raise InvalidConfigurationError(f"parameter {last!r} given twice; {DESIGN_GRAMMAR}")
            params[last] = [val]
        elif last is not None:
            params[last].append(tok)
        else:
            raise InvalidConfigurationError(f"malformed design string {text!r}; {DESIGN_GRAMMAR}")

    def expect(*keys):
        if set(params) != set(keys):
            raise InvalidConfigurationError(f"design {name!r} takes parameters {keys}, got {tuple(params)}; {DESIGN_GRAMMAR}")
        for key in keys:
            if key != "l" and len(params[key]) != 1:
                raise InvalidConfigurationError(f"parameter {key!r} takes one value; {DESIGN_GRAMMAR}")

    if name == "poisson":
        expect("l")
        return PoissonDesign(tuple(_num(v, "rate") for v in params["l"]))
    if name == "bernoulli":
        expect("k")
        return BernoulliDesign(_num(params["k"][0], "k"))
    if name == "srswor":
        expect("n")
        return SrsworDesign(_int(params["n"][0], "n"))
    if name == "cluster":
        expect("k", "size")
        return ClusterBernoulliDesign(_num(params["k"][0], "k"), size=_int(params["size"][0], "size"))
    raise InvalidConfigurationError(f"unknown design {name!r}; {DESIGN_GRAMMAR}")


def format_design(design: DesignSpec) -> str:
    if isinstance(design, PoissonDesign):
        return "poisson:l=" + ",".join(repr(r) for r in design.rates)
    if isinstance(design, BernoulliDesign):
        return f"bernoulli:k={design.kappa!r}"
    if isinstance(design, SrsworDesign):
        return f"srswor:n={design.n}"
    if design.size is not None:
        return f"cluster:k={design.kappa!r},size={design.size}"
    return f"cluster:k={design.kappa!r},labels=<{len(design.labels)} particles>"
