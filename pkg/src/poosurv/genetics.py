"""Ordered-genotype state space and per-individual likelihood factors.

The latent genotype of each pedigree member takes four states: non-carrier,
heterozygous carrier whose mutated allele came from the father, heterozygous
carrier whose mutated allele came from the mother, and homozygous carrier.
Disease risk depends on the transmitting parent: the paternal-origin
heterozygote carries the log hazard ratio ``beta`` while maternal-origin
heterozygotes and homozygotes follow the baseline hazard. Non-carriers never
develop the disease.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .survival import BaselineHazard

__all__ = [
    "Genotype",
    "GENOTYPE_LABELS",
    "LABEL_TO_GENOTYPE",
    "N_STATES",
    "DEFAULT_EPSILON",
    "DEFAULT_ETA",
    "ModelParams",
    "GenotypeFactor",
    "founder_prior",
    "transmission",
    "TRANSMISSION",
    "penetrance_factor",
    "test_factor",
    "evidence_factor",
    "evidence_matrix",
]

N_STATES = 4

# Magnitudes consistent with clinical-grade genetic tests.
DEFAULT_EPSILON = 0.01
DEFAULT_ETA = 0.001


class Genotype(enum.IntEnum):
    NON_CARRIER = 0
    HET_PATERNAL = 1  # mutated allele inherited from the father
    HET_MATERNAL = 2  # mutated allele inherited from the mother
    HOMOZYGOUS = 3


GENOTYPE_LABELS = {
    Genotype.NON_CARRIER: "0",
    Genotype.HET_PATERNAL: "1p",
    Genotype.HET_MATERNAL: "1m",
    Genotype.HOMOZYGOUS: "2",
}
LABEL_TO_GENOTYPE = {label: g for g, label in GENOTYPE_LABELS.items()}


@dataclass(frozen=True)
class ModelParams:
    """Fixed and fitted quantities entering the likelihood factors.

    ``q``, ``epsilon``, and ``eta`` are assumed known; ``beta``, ``gamma``,
    and ``baseline`` are the estimation targets. ``baseline`` may be any
    object with a ``cumulative(t)`` method (a fitted step function or a
    parametric hazard); ``None`` means identically zero cumulative hazard.
    """

    q: float
    beta: float = 0.0
    gamma: tuple[float, ...] = ()
    epsilon: float = DEFAULT_EPSILON
    eta: float = DEFAULT_ETA
    baseline: object | None = None

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"allele frequency q must be in [0, 1], got {self.q}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must be in [0, 1), got {self.eta}")
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))

    def cumulative_hazard(self, t):
        if self.baseline is None:
            return np.zeros_like(np.asarray(t, dtype=float)) if not np.isscalar(t) else 0.0
        return self.baseline.cumulative(t)


@dataclass(frozen=True)
class GenotypeFactor:
    """Non-negative table over the genotypes of 1-3 individuals."""

    scope: tuple
    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.shape != (N_STATES,) * len(self.scope):
            raise ValueError(
                f"table shape {table.shape} does not match scope {self.scope}"
            )
        if np.any(table < 0):
            raise ValueError("factor tables must be non-negative")
        object.__setattr__(self, "table", table)


def founder_prior(q: float) -> np.ndarray:
    """Hardy-Weinberg genotype distribution for a founder.

    The heterozygote mass 2q(1-q) splits evenly between the paternal- and
    maternal-origin states.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"allele frequency q must be in [0, 1], got {q}")
    het = q * (1.0 - q)
    return np.array([(1.0 - q) ** 2, het, het, q * q])


def _build_transmission() -> np.ndarray:
    # P(transmit mutated allele) per parent genotype; the origin of a
    # heterozygous parent's own allele is irrelevant to what it passes on.
    transmit = np.array([0.0, 0.5, 0.5, 1.0])
    table = np.empty((N_STATES, N_STATES, N_STATES))
    for f in range(N_STATES):
        for m in range(N_STATES):
            tp, tm = transmit[f], transmit[m]
            table[f, m] = [
                (1.0 - tp) * (1.0 - tm),
                tp * (1.0 - tm),
                (1.0 - tp) * tm,
                tp * tm,
            ]
    table.setflags(write=False)
    return table


#: Mendelian transmission table indexed [father, mother, child].
TRANSMISSION = _build_transmission()


def transmission(father, mother) -> np.ndarray:
    """Child genotype distribution given the parents' ordered genotypes."""
    return TRANSMISSION[int(father), int(mother)]


def penetrance_factor(t, delta, x, z, params: ModelParams) -> float:
    """Phenotype likelihood for one individual at genotype ``x``.

    For affected individuals the genotype-independent baseline hazard value
    at ``t`` is omitted: it scales every carrier state equally (non-carriers
    have likelihood 0), so posteriors are unchanged.
    """
    if t < 0 or not math.isfinite(t):
        raise ValueError(f"time must be finite and non-negative, got {t}")
    x = int(x)
    if len(z) != len(params.gamma):
        raise ValueError("covariate vector length does not match gamma")
    zg = float(np.dot(z, params.gamma)) if params.gamma else 0.0
    lam = float(params.cumulative_hazard(t))
    if delta == 0:
        if x == Genotype.NON_CARRIER:
            return 1.0
        if x == Genotype.HET_PATERNAL:
            return math.exp(-lam * math.exp(params.beta + zg))
        return math.exp(-lam * math.exp(zg))
    if x == Genotype.NON_CARRIER:
        return 0.0
    if x == Genotype.HET_PATERNAL:
        risk = math.exp(params.beta + zg)
    else:
        risk = math.exp(zg)
    return math.exp(-lam * risk) * risk


def test_factor(g, x, epsilon: float, eta: float) -> float:
    """Genetic-test likelihood P(G = g | X = x).

    ``g`` is 1 (positive), 0 (negative), or None (untested, contributing a
    constant factor 1).
    """
    if g is None:
        return 1.0
    carrier = int(x) != Genotype.NON_CARRIER
    if g == 1:
        return 1.0 - epsilon if carrier else eta
    if g == 0:
        return epsilon if carrier else 1.0 - eta
    raise ValueError(f"gene test must be 0, 1, or None, got {g!r}")


def evidence_factor(record, params: ModelParams, suppress_phenotype=False) -> np.ndarray:
    """Single-individual evidence table over the four genotype states.

    Combines the phenotype and gene-test likelihoods. With
    ``suppress_phenotype`` (proband ascertainment correction) the phenotype
    part is replaced by 1 for every state, keeping only the test factor.
    """
    phi = np.ones(N_STATES)
    if not suppress_phenotype:
        for x in range(N_STATES):
            phi[x] = penetrance_factor(
                record.age, record.status, x, record.covariates, params
            )
    if record.gene_test is not None:
        for x in range(N_STATES):
            phi[x] *= test_factor(record.gene_test, x, params.epsilon, params.eta)
    return phi


def evidence_matrix(age, status, covariates, gene_test, params: ModelParams,
                    suppress=None) -> np.ndarray:
    """Vectorized evidence tables for many individuals at once.

    Parameters
    ----------
    age, status : (n,) arrays
    covariates : (n, k) array or None
    gene_test : (n,) int array with -1 marking untested individuals
    suppress : (n,) bool array or None; True rows keep only the test factor

    Returns
    -------
    (n, 4) array of per-individual factors, same convention as
    :func:`evidence_factor`.
    """
    age = np.asarray(age, dtype=float)
    status = np.asarray(status, dtype=int)
    gene_test = np.asarray(gene_test, dtype=int)
    n = age.shape[0]
    if np.any(age < 0) or not np.all(np.isfinite(age)):
        raise ValueError("ages must be finite and non-negative")
    k = len(params.gamma)
    if k:
        Z = np.asarray(covariates, dtype=float).reshape(n, k)
        zg = Z @ np.asarray(params.gamma)
    else:
        zg = np.zeros(n)
    lam = np.asarray(params.cumulative_hazard(age), dtype=float)
    risk_mat = np.exp(zg)
    risk_pat = np.exp(params.beta + zg)
    surv_mat = np.exp(-lam * risk_mat)
    surv_pat = np.exp(-lam * risk_pat)

    phi = np.empty((n, N_STATES))
    affected = status == 1
    phi[:, Genotype.NON_CARRIER] = np.where(affected, 0.0, 1.0)
    phi[:, Genotype.HET_PATERNAL] = np.where(
        affected, surv_pat * risk_pat, surv_pat
    )
    maternal = np.where(affected, surv_mat * risk_mat, surv_mat)
    phi[:, Genotype.HET_MATERNAL] = maternal
    phi[:, Genotype.HOMOZYGOUS] = maternal
    if suppress is not None:
        phi[np.asarray(suppress, dtype=bool)] = 1.0

    positive = gene_test == 1
    negative = gene_test == 0
    if positive.any():
        phi[positive] *= np.array(
            [params.eta] + [1.0 - params.epsilon] * 3
        )
    if negative.any():
        phi[negative] *= np.array(
            [1.0 - params.eta] + [params.epsilon] * 3
        )
    return phi
