"""Synthetic pedigree generation and the scenario replication study.

Every simulated family uses one fixed three-generation, ten-member layout:
a grandparent couple, their three children, two married-in spouses, and
three grandchildren (two full siblings plus one cousin). Founder genotypes
follow Hardy-Weinberg equilibrium, children receive alleles by Mendelian
transmission, and carriers draw an age at onset from a piecewise-constant
hazard scaled by exp(beta) when the mutation came from the father.
Homozygous carriers follow the maternal-origin hazard. Everyone is censored
by an independent uniform draw on [15, 80].

Scenarios control which genotypes are released as (error-free) test
results: S0 hides all of them, S1 reveals 80% of affected and 10% of
unaffected individuals, S2 reveals everyone, and Oracle additionally
reveals each carrier's parent of origin as a hard constraint for fitting.

Randomness uses counter-based (Philox) substreams keyed by family and
replicate indices, so any subset of the work reproduces identically under
any level of concurrency.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .em import EMConfig, EMError, em_fit
from .genetics import GENOTYPE_LABELS, Genotype
from .inference import InferenceError
from .pedigree import IndividualRecord, Pedigree, Sex
from .survival import CoxError

__all__ = [
    "Scenario",
    "HazardSpec",
    "DEFAULT_HAZARD",
    "FAMILY_TEMPLATE",
    "TruthRecord",
    "simulate_families",
    "apply_scenario_mask",
    "oracle_constraints",
    "format_truth",
    "parse_truth",
    "ReplicateRow",
    "replicate_study",
]


class Scenario(str, enum.Enum):
    S0 = "S0"
    S1 = "S1"
    S2 = "S2"
    ORACLE = "Oracle"

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        for member in cls:
            if member.value.lower() == str(text).lower():
                return member
        raise ValueError(f"unknown scenario {text!r}")


class HazardSpec:
    """Piecewise-constant hazard: ``rates[i]`` applies on [cuts[i], cuts[i+1]).

    The last interval extends to infinity. Exposes the same ``cumulative``
    interface as a fitted baseline, so it can seed model parameters directly.
    """

    def __init__(self, cuts, rates):
        cuts = tuple(float(c) for c in cuts)
        rates = tuple(float(r) for r in rates)
        if len(cuts) != len(rates) or not cuts:
            raise ValueError("need one rate per cut point")
        if cuts[0] != 0.0:
            raise ValueError("first cut point must be 0")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cut points must be increasing")
        if any(r < 0 for r in rates):
            raise ValueError("rates must be non-negative")
        self.cuts = cuts
        self.rates = rates
        cumulative = [0.0]
        for i in range(len(cuts) - 1):
            cumulative.append(cumulative[-1] + rates[i] * (cuts[i + 1] - cuts[i]))
        self._cum_at_cuts = np.asarray(cumulative)
        self._cuts_arr = np.asarray(cuts)
        self._rates_arr = np.asarray(rates)

    def cumulative(self, t):
        """Cumulative hazard at ``t`` (scalar or array)."""
        t_arr = np.maximum(np.asarray(t, dtype=float), 0.0)
        idx = np.searchsorted(self._cuts_arr, t_arr, side="right") - 1
        out = self._cum_at_cuts[idx] + self._rates_arr[idx] * (t_arr - self._cuts_arr[idx])
        if np.isscalar(t):
            return float(out)
        return out

    def inverse(self, target: float) -> float:
        """Smallest t with cumulative(t) = target, or inf beyond the total mass."""
        if target <= 0:
            raise ValueError("target must be positive")
        for i, rate in enumerate(self.rates):
            upper = (
                self._cum_at_cuts[i + 1] if i + 1 < len(self.cuts) else math.inf
            )
            if rate > 0 and target <= upper:
                return self.cuts[i] + (target - self._cum_at_cuts[i]) / rate
        return math.inf


#: Onset hazard used throughout the scenario study: nothing before age 20,
#: then 0.02/yr on [20, 40), 0.10/yr on [40, 60), 0.05/yr afterwards.
DEFAULT_HAZARD = HazardSpec((0.0, 20.0, 40.0, 60.0), (0.0, 0.02, 0.10, 0.05))

#: (individual_id, father_id, mother_id, sex) rows of the fixed family layout.
FAMILY_TEMPLATE = (
    ("1", None, None, Sex.MALE),
    ("2", None, None, Sex.FEMALE),
    ("3", "1", "2", Sex.MALE),
    ("4", "1", "2", Sex.FEMALE),
    ("5", "1", "2", Sex.FEMALE),
    ("6", None, None, Sex.FEMALE),
    ("7", None, None, Sex.MALE),
    ("8", "3", "6", Sex.MALE),
    ("9", "3", "6", Sex.FEMALE),
    ("10", "7", "4", Sex.MALE),
)

_POO_LABEL = {
    Genotype.NON_CARRIER: "none",
    Genotype.HET_PATERNAL: "pat",
    Genotype.HET_MATERNAL: "mat",
    Genotype.HOMOZYGOUS: "both",
}

CENSOR_LOW, CENSOR_HIGH = 15.0, 80.0


@dataclass(frozen=True)
class TruthRecord:
    """Hidden simulation state for one individual.

    ``event_time`` is the (possibly infinite) pre-censoring onset age and
    ``censor_time`` the independent censoring draw; only their minimum is
    visible in the emitted pedigree.
    """

    family_id: str
    individual_id: str
    genotype: Genotype
    poo: str
    event_time: float
    censor_time: float


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _simulate_family(family_id, rng, beta, q, hazard, mark_probands):
    genotypes: dict[str, Genotype] = {}
    records = []
    truth = []
    for individual_id, father, mother, sex in FAMILY_TEMPLATE:
        if father is None:
            from_father = rng.random() < q
            from_mother = rng.random() < q
        else:
            transmit = (0.0, 0.5, 0.5, 1.0)
            from_father = rng.random() < transmit[genotypes[father]]
            from_mother = rng.random() < transmit[genotypes[mother]]
        genotype = Genotype(int(from_father) + 2 * int(from_mother))
        genotypes[individual_id] = genotype

        if genotype == Genotype.NON_CARRIER:
            event_time = math.inf
        else:
            scale = math.exp(beta) if genotype == Genotype.HET_PATERNAL else 1.0
            event_time = hazard.inverse(rng.exponential(1.0) / scale)
        censor_time = rng.uniform(CENSOR_LOW, CENSOR_HIGH)
        affected = event_time <= censor_time
        records.append(
            IndividualRecord(
                family_id=family_id,
                individual_id=individual_id,
                father_id=father,
                mother_id=mother,
                sex=sex,
                age=event_time if affected else censor_time,
                status=1 if affected else 0,
                gene_test=None,
            )
        )
        truth.append(
            TruthRecord(
                family_id=family_id,
                individual_id=individual_id,
                genotype=genotype,
                poo=_POO_LABEL[genotype],
                event_time=event_time,
                censor_time=censor_time,
            )
        )
    if mark_probands:
        for i, rec in enumerate(records):
            if rec.status == 1:
                records[i] = replace(rec, proband=True)
                break
    return Pedigree(records), truth


def simulate_families(n, beta, q, hazard=DEFAULT_HAZARD, scenario=Scenario.S0,
                      seed=0, mark_probands=False):
    """Simulate ``n`` ten-member families plus their hidden truth table.

    Returns (families, truth) where truth is a flat list of
    :class:`TruthRecord`. The genotype/onset draws depend only on
    (seed, family index), so different scenarios with the same seed share
    identical underlying families and differ purely in genotype visibility.
    With ``mark_probands`` the first affected member of each family is
    flagged as its proband.
    """
    if n < 1:
        raise ValueError("need at least one family")
    scenario = Scenario.parse(scenario) if not isinstance(scenario, Scenario) else scenario
    root = _as_seedseq(seed)
    truth_root, mask_root = root.spawn(2)
    truth_seeds = truth_root.spawn(n)
    families, truth = [], []
    for k in range(n):
        rng = np.random.Generator(np.random.Philox(truth_seeds[k]))
        fam, fam_truth = _simulate_family(f"F{k + 1}", rng, beta, q, hazard, mark_probands)
        families.append(fam)
        truth.extend(fam_truth)
    families = apply_scenario_mask(families, truth, scenario, mask_root)
    return families, truth


def apply_scenario_mask(families, truth, scenario, seed):
    """Reveal genotype tests according to the scenario.

    Revealed tests are error-free carrier indicators. S0 reveals nothing;
    S1 reveals each affected individual with probability 0.8 and each
    unaffected individual with probability 0.1; S2 and Oracle reveal
    everyone. Returns new pedigrees; the truth list is not modified.
    """
    scenario = Scenario.parse(scenario) if not isinstance(scenario, Scenario) else scenario
    carrier = {
        (t.family_id, t.individual_id): t.genotype != Genotype.NON_CARRIER
        for t in truth
    }
    mask_seeds = _as_seedseq(seed).spawn(len(families))
    masked = []
    for fam, fam_seed in zip(families, mask_seeds):
        rng = np.random.Generator(np.random.Philox(fam_seed))
        records = []
        for rec in fam:
            if scenario == Scenario.S0:
                observed = False
            elif scenario == Scenario.S1:
                p_observe = 0.8 if rec.status == 1 else 0.1
                observed = rng.random() < p_observe
            else:
                observed = True
            value = int(carrier[(fam.family_id, rec.individual_id)]) if observed else None
            records.append(replace(rec, gene_test=value))
        masked.append(Pedigree(records))
    return masked


def oracle_constraints(truth) -> dict:
    """Hard genotype evidence map pinning every individual to its true state."""
    return {(t.family_id, t.individual_id): t.genotype for t in truth}


def format_truth(truth) -> str:
    """Serialize a truth table to its sidecar format."""
    lines = ["# family_id individual_id true_genotype true_poo"]
    for t in truth:
        lines.append(
            f"{t.family_id} {t.individual_id} {GENOTYPE_LABELS[t.genotype]} {t.poo}"
        )
    return "\n".join(lines) + "\n"


def parse_truth(text: str) -> dict:
    """Read a truth/oracle sidecar back into a genotype constraint map."""
    label_to_genotype = {label: g for g, label in GENOTYPE_LABELS.items()}
    constraints = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 4:
            raise ValueError(f"truth sidecar line {lineno}: expected 4 columns")
        family_id, individual_id, genotype_label, _poo = fields
        if genotype_label not in label_to_genotype:
            raise ValueError(
                f"truth sidecar line {lineno}: unknown genotype {genotype_label!r}"
            )
        constraints[(family_id, individual_id)] = label_to_genotype[genotype_label]
    return constraints


@dataclass(frozen=True)
class ReplicateRow:
    """One fitted replicate of the scenario study."""

    case: str
    scenario: str
    replicate: int
    beta_hat: float
    se: float
    iterations: int
    converged: bool
    seed: str
    error: str = ""


def _case_label(n_families, beta) -> str:
    return f"n{n_families}_beta{beta:g}"


def _run_replicate(args) -> ReplicateRow:
    (master_seed, case_index, n_families, beta, scenario_value,
     replicate_index, q, hazard, em_overrides) = args
    scenario = Scenario.parse(scenario_value)
    sim_entropy = (master_seed, case_index, replicate_index)
    families, truth = simulate_families(
        n_families, beta, q, hazard=hazard, scenario=scenario, seed=sim_entropy
    )
    constraints = oracle_constraints(truth) if scenario == Scenario.ORACLE else None
    em_seed = int(np.random.SeedSequence(sim_entropy + (1,)).generate_state(1)[0])
    config = EMConfig(q=q, epsilon=0.0, eta=0.0, seed=em_seed, **(em_overrides or {}))
    label = _case_label(n_families, beta)
    seed_label = f"{master_seed}-{case_index}-{replicate_index}"
    try:
        result = em_fit(families, config, genotype_constraints=constraints)
    except (EMError, CoxError, InferenceError) as err:
        return ReplicateRow(
            case=label,
            scenario=scenario.value,
            replicate=replicate_index,
            beta_hat=float("nan"),
            se=float("nan"),
            iterations=0,
            converged=False,
            seed=seed_label,
            error=f"{type(err).__name__}: {err}",
        )
    return ReplicateRow(
        case=label,
        scenario=scenario.value,
        replicate=replicate_index,
        beta_hat=result.beta_hat,
        se=float(result.cox.std_errors[0]),
        iterations=result.iterations,
        converged=result.converged,
        seed=seed_label,
    )


def replicate_study(cases, scenarios, replicates, seed=0, q=0.2,
                    hazard=DEFAULT_HAZARD, em_overrides=None,
                    jobs: int = 1) -> list[ReplicateRow]:
    """Simulate and fit every (case, scenario, replicate) combination.

    ``cases`` is a sequence of (n_families, beta) pairs. Within one case and
    replicate, all scenarios share the same simulated families and differ
    only in genotype visibility, giving paired comparisons. Fits assume the
    simulator's error-free tests (epsilon = eta = 0) and known ``q``;
    ``em_overrides`` may adjust the remaining EM knobs (tol, max_iter,
    test_ages, ...). Failed replicates become rows carrying the failure
    reason instead of aborting the study. Output order and content are
    independent of ``jobs``.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    scenarios = [
        s if isinstance(s, Scenario) else Scenario.parse(s) for s in scenarios
    ]
    tasks = []
    for case_index, (n_families, beta) in enumerate(cases):
        for scenario in scenarios:
            for replicate_index in range(replicates):
                tasks.append(
                    (seed, case_index, int(n_families), float(beta),
                     scenario.value, replicate_index, q, hazard,
                     dict(em_overrides or {}))
                )
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_replicate, tasks, chunksize=1))
    return [_run_replicate(task) for task in tasks]
