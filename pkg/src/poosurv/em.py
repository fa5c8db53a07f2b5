"""EM loop: posterior genotype weights alternating with weighted Cox fits.

Each iteration runs the M-step first (the initial weights are random, so no
baseline hazard exists before the first fit): a weighted Cox fit on an
artificial dataset holding two rows per individual (one per candidate
parent of origin, weighted by the current posterior mass), followed by a
weighted Breslow baseline. The E-step then recomputes every individual's
posterior genotype weights by exact pedigree inference under the updated
parameters. Iterations stop when the baseline survival probabilities at a
fixed set of test ages move less than the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .genetics import ModelParams
from .inference import MarginalEngine, PosteriorWeights
from .pedigree import Pedigree
from .survival import BaselineHazard, CoxError, CoxFit, CoxProblem, WeightedObservation

__all__ = [
    "EMError",
    "EMConfig",
    "EMIteration",
    "EMTrace",
    "FitResult",
    "BootstrapReplicate",
    "apply_proband_correction",
    "build_weighted_dataset",
    "em_fit",
    "bootstrap_em",
]

LOG_EVIDENCE_SLACK = 1e-6


class EMError(RuntimeError):
    """EM orchestration failure (carries the failing iteration in the message)."""


@dataclass(frozen=True)
class EMConfig:
    """Fixed constants and knobs of one EM run.

    ``q``, ``epsilon``, and ``eta`` are treated as known. Convergence is
    declared when the baseline survival at every ``test_ages`` entry changes
    by less than ``tol`` for ``stable_window`` consecutive iterations; the
    window guards against stopping on a transient plateau and tightens the
    final estimate at negligible cost.
    """

    q: float
    epsilon: float = 0.01
    eta: float = 0.001
    test_ages: tuple[float, ...] = (20.0, 40.0, 60.0, 80.0)
    tol: float = 3e-4
    stable_window: int = 3
    max_iter: int = 1000
    seed: int = 0
    proband_correction: bool = False
    bootstrap_B: int | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        ages = tuple(float(a) for a in self.test_ages)
        if not ages or any(b <= a for a, b in zip(ages, ages[1:])):
            raise ValueError("test_ages must be non-empty and increasing")
        object.__setattr__(self, "test_ages", ages)
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.stable_window < 1:
            raise ValueError("stable_window must be at least 1")


@dataclass(frozen=True)
class EMIteration:
    """One row of the EM trace."""

    index: int
    beta: float
    gamma: tuple[float, ...]
    survival: tuple[float, ...]
    log_evidence: float
    max_change: float


@dataclass
class EMTrace:
    iterations: list[EMIteration] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.iterations)


@dataclass
class FitResult:
    """Final state of an EM run.

    ``weights`` holds one mapping per input family (individual id to
    posterior weight triple). ``converged`` is False when ``max_iter`` was
    exhausted; the result is still usable.
    """

    cox: CoxFit
    weights: list[dict[str, PosteriorWeights]]
    trace: EMTrace
    converged: bool

    @property
    def beta_hat(self) -> float:
        return self.cox.beta_hat

    @property
    def gamma_hat(self) -> np.ndarray:
        return self.cox.gamma_hat

    @property
    def baseline(self) -> BaselineHazard:
        return self.cox.baseline

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def survival(self, group: str = "mat", z=()):
        """Fitted survival curve for one origin group at covariates ``z``."""
        from .survival import survival_curve

        return survival_curve(
            self.baseline, self.beta_hat, tuple(self.gamma_hat), group=group, z=z
        )


@dataclass
class BootstrapReplicate:
    beta_hat: float
    gamma_hat: tuple[float, ...]
    baseline: BaselineHazard | None
    converged: bool
    error: str | None = None


def apply_proband_correction(families) -> tuple[list[Pedigree], list[str]]:
    """Suppress proband phenotypes for ascertainment correction.

    Probands keep their pedigree links, sex, covariates, and gene test, but
    their age/status pair stops contributing evidence and their rows are
    excluded from the M-step dataset. Families without a proband pass
    through unmodified and produce a warning.
    """
    corrected = []
    warnings = []
    for fam in families:
        if not any(rec.proband for rec in fam):
            warnings.append(f"family {fam.family_id} has no proband; left unmodified")
            corrected.append(fam)
            continue
        records = [
            replace(rec, phenotype_suppressed=True) if rec.proband else rec
            for rec in fam
        ]
        corrected.append(Pedigree(records))
    return corrected, warnings


def _lookup_weights(weights, family_index, family_id, individual_id):
    if isinstance(weights, dict):
        return weights[(family_id, individual_id)]
    return weights[family_index][individual_id]


def build_weighted_dataset(families, weights) -> list[WeightedObservation]:
    """Materialize the 2n-row weighted dataset driving the M-step.

    For every individual there is one paternal-origin row weighted by
    ``w_pat`` and one maternal-origin row weighted by ``w_mat``; all
    paternal rows come first, each block in pedigree order. Non-carrier
    mass appears in no row, and phenotype-suppressed individuals are left
    out entirely. ``weights`` is either one mapping per family or a dict
    keyed by (family_id, individual_id).
    """
    pat_rows, mat_rows = [], []
    for fi, fam in enumerate(families):
        for rec in fam:
            if rec.phenotype_suppressed:
                continue
            w = _lookup_weights(weights, fi, fam.family_id, rec.individual_id)
            pat_rows.append(
                WeightedObservation(rec.age, rec.status, "pat", rec.covariates, w.w_pat)
            )
            mat_rows.append(
                WeightedObservation(rec.age, rec.status, "mat", rec.covariates, w.w_mat)
            )
    return pat_rows + mat_rows


def _dataset_arrays(families):
    """Static arrays of the 2n-row dataset plus the record rows feeding it."""
    times, statuses, covs, rows = [], [], [], []
    offset = 0
    for fam in families:
        for i, rec in enumerate(fam):
            if not rec.phenotype_suppressed:
                times.append(rec.age)
                statuses.append(rec.status)
                covs.append(rec.covariates)
                rows.append(offset + i)
        offset += len(fam)
    m = len(times)
    k = len(covs[0]) if m else 0
    time2 = np.tile(np.asarray(times, dtype=float), 2)
    status2 = np.tile(np.asarray(statuses, dtype=int), 2)
    X = np.zeros((2 * m, 1 + k))
    X[:m, 0] = 1.0  # paternal-origin block
    if k:
        Z = np.asarray(covs, dtype=float)
        X[:m, 1:] = Z
        X[m:, 1:] = Z
    return time2, status2, X, np.asarray(rows, dtype=int)


def em_fit(families, config: EMConfig, genotype_constraints=None) -> FitResult:
    """Estimate the origin effect, covariate effects, and baseline hazard.

    ``genotype_constraints`` optionally pins individuals to known genotype
    states (keyed by (family_id, individual_id)), e.g. from an oracle
    sidecar. Deterministic given (families, config, constraints).
    """
    families = list(families)
    if not families:
        raise ValueError("no families to fit")
    trace = EMTrace()
    if config.proband_correction:
        families, warnings = apply_proband_correction(families)
        trace.warnings.extend(warnings)

    engine = MarginalEngine(families, genotype_constraints=genotype_constraints)
    time2, status2, X, rows = _dataset_arrays(families)
    problem = CoxProblem(time2, status2, X)
    test_ages = np.asarray(config.test_ages)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    u = rng.uniform(size=(engine.total, 3))
    u /= u.sum(axis=1, keepdims=True)
    w_pat, w_mat = u[:, 0], u[:, 1]

    coefs = np.zeros(X.shape[1])
    prev_survival = None
    prev_log_evidence = None
    marginals = None
    converged = False
    below_tol_streak = 0
    for iteration in range(1, config.max_iter + 1):
        weights2n = np.concatenate((w_pat[rows], w_mat[rows]))
        try:
            coefs, covariance, loglik, n_steps = problem.fit(weights2n, init=coefs)
            baseline = problem.breslow(weights2n, coefs)
        except CoxError as err:
            raise EMError(f"M-step failed at iteration {iteration}: {err}") from err
        survival = np.exp(-baseline.cumulative(test_ages))

        params = ModelParams(
            q=config.q,
            beta=float(coefs[0]),
            gamma=tuple(coefs[1:]),
            epsilon=config.epsilon,
            eta=config.eta,
            baseline=baseline,
        )
        marginals, log_evidence_fam = engine.run(params)
        w_pat = marginals[:, 1]
        w_mat = marginals[:, 2] + marginals[:, 3]
        log_evidence = float(log_evidence_fam.sum())

        change = (
            float(np.max(np.abs(survival - prev_survival)))
            if prev_survival is not None
            else float("inf")
        )
        trace.iterations.append(
            EMIteration(
                index=iteration,
                beta=float(coefs[0]),
                gamma=tuple(coefs[1:]),
                survival=tuple(survival),
                log_evidence=log_evidence,
                max_change=change,
            )
        )
        if (
            prev_log_evidence is not None
            and log_evidence < prev_log_evidence - LOG_EVIDENCE_SLACK
        ):
            trace.warnings.append(
                f"log-evidence decreased by {prev_log_evidence - log_evidence:.3e} "
                f"at iteration {iteration}"
            )
        prev_log_evidence = log_evidence
        prev_survival = survival
        below_tol_streak = below_tol_streak + 1 if change < config.tol else 0
        if below_tol_streak >= config.stable_window:
            converged = True
            break

    fit = CoxFit(
        beta_hat=float(coefs[0]),
        gamma_hat=coefs[1:],
        covariance=covariance,
        log_partial_likelihood=loglik,
        n_iter=n_steps,
        baseline=baseline,
    )
    return FitResult(
        cox=fit,
        weights=engine.family_weights(marginals),
        trace=trace,
        converged=converged,
    )


def _bootstrap_one(args):
    families, config, replicate_index = args
    seed_seq = np.random.SeedSequence((config.seed, replicate_index))
    resample_seed, em_seed = seed_seq.spawn(2)
    rng = np.random.Generator(np.random.Philox(resample_seed))
    idx = rng.integers(0, len(families), size=len(families))
    resampled = [families[i] for i in idx]
    rep_config = replace(config, seed=int(em_seed.generate_state(1)[0]))
    try:
        result = em_fit(resampled, rep_config)
    except (CoxError, EMError) as err:
        return BootstrapReplicate(
            beta_hat=float("nan"),
            gamma_hat=(),
            baseline=None,
            converged=False,
            error=str(err),
        )
    return BootstrapReplicate(
        beta_hat=result.beta_hat,
        gamma_hat=tuple(result.gamma_hat),
        baseline=result.baseline,
        converged=result.converged,
    )


def bootstrap_em(families, config: EMConfig, B: int | None = None,
                 jobs: int = 1) -> list[BootstrapReplicate]:
    """Family-level nonparametric bootstrap of the full EM fit.

    Families are resampled with replacement and the whole EM rerun per
    replicate; percentile intervals over the replicates give honest
    uncertainty for the origin effect and the survival curves. Each
    replicate uses an independent deterministic substream, so results do
    not depend on ``jobs``.
    """
    families = list(families)
    n_reps = B if B is not None else (config.bootstrap_B or 200)
    tasks = [(families, config, r) for r in range(n_reps)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_bootstrap_one, tasks))
    return [_bootstrap_one(task) for task in tasks]
