"""Command-line front end: simulate, fit, replicate, check-oracle, curve.

Every subcommand writes a JSON config echo (resolved parameters, seed, and
package version) alongside its outputs, and is deterministic given its
arguments. Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .em import EMConfig, EMError, bootstrap_em, em_fit
from .genetics import DEFAULT_EPSILON, DEFAULT_ETA, ModelParams
from .inference import InferenceError, brute_force_marginals, posterior_marginals
from .pedigree import PedigreeError, parse_ped, format_ped
from .simulate import (
    DEFAULT_HAZARD,
    HazardSpec,
    Scenario,
    format_truth,
    oracle_constraints,
    parse_truth,
    replicate_study,
    simulate_families,
)
from .survival import BaselineHazard, CoxError, survival_curve, wald_test

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

ORACLE_TOLERANCE = 1e-8


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (PedigreeError, ValueError) as err:
            _fail(EXIT_VALIDATION, str(err))
        except (InferenceError, CoxError, EMError) as err:
            _fail(EXIT_NUMERICAL, str(err))
        except OSError as err:
            _fail(EXIT_IO, str(err))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _write_config_echo(path: Path, command: str, params: dict):
    echo = {"command": command, "version": __version__, "parameters": params}
    path.write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")


def _parse_hazard(text: str | None) -> HazardSpec:
    if not text:
        return DEFAULT_HAZARD
    cuts, rates = [], []
    for chunk in text.split(","):
        try:
            cut, rate = chunk.split(":")
            cuts.append(float(cut))
            rates.append(float(rate))
        except ValueError:
            raise ValueError(
                f"bad hazard segment {chunk!r}; expected start:rate pairs "
                "like 0:0,20:0.02,40:0.10,60:0.05"
            ) from None
    return HazardSpec(cuts, rates)


def _parse_ages(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _load_families(path: str):
    with open(path, "r", encoding="utf-8") as handle:
        return parse_ped(handle)


@click.group()
@click.version_option(version=__version__, prog_name="poosurv")
def main():
    """Carrier survival and parent-of-origin estimation from pedigrees."""


@main.command()
@click.option("--families", "n_families", type=int, required=True, help="Number of families.")
@click.option("--beta", type=float, required=True, help="Paternal-origin log hazard ratio.")
@click.option("--q", type=float, default=0.2, show_default=True, help="Disease allele frequency.")
@click.option("--scenario", type=click.Choice([s.value for s in Scenario], case_sensitive=False), required=True)
@click.option("--hazard", "hazard_text", default=None, help="Piecewise hazard as start:rate,... (default: built-in study table).")
@click.option("--mark-probands", is_flag=True, help="Flag the first affected member of each family as proband.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@_guarded
def simulate(n_families, beta, q, scenario, hazard_text, mark_probands, seed, out_dir):
    """Simulate families and write pedigree.ped plus truth.tsv (and oracle.tsv)."""
    scenario = Scenario.parse(scenario)
    hazard = _parse_hazard(hazard_text)
    families, truth = simulate_families(
        n_families, beta, q, hazard=hazard, scenario=scenario, seed=seed,
        mark_probands=mark_probands,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pedigree.ped").write_text(format_ped(families))
    (out / "truth.tsv").write_text(format_truth(truth))
    if scenario == Scenario.ORACLE:
        (out / "oracle.tsv").write_text(format_truth(truth))
    _write_config_echo(
        out / "config.json",
        "simulate",
        {
            "families": n_families,
            "beta": beta,
            "q": q,
            "scenario": scenario.value,
            "hazard": {"cuts": hazard.cuts, "rates": hazard.rates},
            "mark_probands": mark_probands,
            "seed": seed,
            "out": str(out_dir),
        },
    )
    click.echo(f"wrote {n_families} families to {out / 'pedigree.ped'}")


def _baseline_to_json(baseline: BaselineHazard):
    return {
        "times": [float(t) for t in baseline.times],
        "increments": [float(d) for d in baseline.increments],
    }


@main.command()
@click.argument("ped_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--q", type=float, required=True, help="Disease allele frequency.")
@click.option("--epsilon", type=float, default=DEFAULT_EPSILON, show_default=True, help="Gene-test error rate for carriers.")
@click.option("--eta", type=float, default=DEFAULT_ETA, show_default=True, help="Gene-test error rate for non-carriers.")
@click.option("--test-ages", default="20,40,60,80", show_default=True, help="Convergence test ages.")
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--max-iter", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--proband-correction", is_flag=True, help="Suppress proband phenotypes (ascertainment correction).")
@click.option("--poo-file", type=click.Path(exists=True, dir_okay=False), default=None, help="Oracle sidecar pinning genotype states.")
@click.option("--bootstrap", "bootstrap_b", type=int, default=None, help="Family bootstrap replicates for honest intervals.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Concurrency for the bootstrap.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@_guarded
def fit(ped_path, q, epsilon, eta, test_ages, tol, max_iter, seed,
        proband_correction, poo_file, bootstrap_b, jobs, out_path):
    """Fit the origin-effect survival model to a pedigree file."""
    families = _load_families(ped_path)
    constraints = None
    if poo_file:
        constraints = parse_truth(Path(poo_file).read_text())
    config = EMConfig(
        q=q,
        epsilon=epsilon,
        eta=eta,
        test_ages=_parse_ages(test_ages),
        tol=tol,
        max_iter=max_iter,
        seed=seed,
        proband_correction=proband_correction,
        bootstrap_B=bootstrap_b,
    )
    result = em_fit(families, config, genotype_constraints=constraints)
    z, p = wald_test(result.cox, 0)
    report = {
        "beta_hat": result.beta_hat,
        "se_naive": float(result.cox.std_errors[0]),
        "wald_z": z,
        "p_wald": p,
        "gamma": [float(g) for g in result.gamma_hat],
        "gamma_se": [float(s) for s in result.cox.std_errors[1:]],
        "baseline": _baseline_to_json(result.baseline),
        "converged": result.converged,
        "iterations": result.iterations,
        "final_max_change": result.trace.iterations[-1].max_change,
        "log_evidence": result.trace.iterations[-1].log_evidence,
        "n_families": len(families),
        "n_individuals": sum(len(f) for f in families),
        "warnings": result.trace.warnings,
        "trace": [
            {
                "iteration": row.index,
                "beta": row.beta,
                "survival": list(row.survival),
                "log_evidence": row.log_evidence,
            }
            for row in result.trace.iterations
        ],
    }
    if bootstrap_b:
        reps = bootstrap_em(families, config, B=bootstrap_b, jobs=jobs)
        usable = [r for r in reps if r.error is None]
        betas = sorted(r.beta_hat for r in usable)
        report["bootstrap"] = {
            "replicates": bootstrap_b,
            "failed": len(reps) - len(usable),
            "beta_hats": betas,
            "beta_ci_95": [
                float(np.percentile(betas, 2.5)),
                float(np.percentile(betas, 97.5)),
            ]
            if usable
            else None,
            "fits": [
                {
                    "beta_hat": r.beta_hat,
                    "baseline": _baseline_to_json(r.baseline),
                }
                for r in usable
            ],
        }
    out = Path(out_path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_config_echo(
        Path(str(out) + ".config.json"),
        "fit",
        {
            "ped": str(ped_path),
            "q": q,
            "epsilon": epsilon,
            "eta": eta,
            "test_ages": list(config.test_ages),
            "tol": tol,
            "max_iter": max_iter,
            "seed": seed,
            "proband_correction": proband_correction,
            "poo_file": str(poo_file) if poo_file else None,
            "bootstrap": bootstrap_b,
            "jobs": jobs,
            "out": str(out_path),
        },
    )
    click.echo(
        f"beta_hat={result.beta_hat:.6f} se={report['se_naive']:.6f} "
        f"p={p:.4g} iterations={result.iterations} converged={result.converged}"
    )


FULL_DESIGN_CASES = ((100, -0.6), (400, -0.6), (100, -1.2))


@main.command()
@click.option("--case", "case_texts", multiple=True, help="Study case as FAMILIES:BETA (repeatable).")
@click.option("--full-design", is_flag=True, help="Run the full three-case, four-scenario design.")
@click.option("--scenarios", default="S0,S1,S2,Oracle", show_default=True)
@click.option("--replicates", type=int, default=200, show_default=True)
@click.option("--q", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@_guarded
def replicate(case_texts, full_design, scenarios, replicates, q, seed, jobs, out_path):
    """Run the scenario replication study and write its results table."""
    if full_design:
        cases = list(FULL_DESIGN_CASES)
    else:
        if not case_texts:
            raise ValueError("provide --case FAMILIES:BETA or --full-design")
        cases = []
        for text in case_texts:
            try:
                n_text, beta_text = text.split(":")
                cases.append((int(n_text), float(beta_text)))
            except ValueError:
                raise ValueError(
                    f"bad case {text!r}; expected FAMILIES:BETA like 400:-0.6"
                ) from None
    scenario_list = [Scenario.parse(s) for s in scenarios.split(",")]
    rows = replicate_study(
        cases, scenario_list, replicates, seed=seed, q=q, jobs=jobs
    )
    out = Path(out_path)
    with open(out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["case", "scenario", "replicate", "beta_hat", "se", "iterations",
             "converged", "seed", "error"]
        )
        for row in rows:
            writer.writerow(
                [row.case, row.scenario, row.replicate, repr(row.beta_hat),
                 repr(row.se), row.iterations, int(row.converged), row.seed,
                 row.error]
            )
    _write_config_echo(
        Path(str(out) + ".config.json"),
        "replicate",
        {
            "cases": [[n, b] for n, b in cases],
            "scenarios": [s.value for s in scenario_list],
            "replicates": replicates,
            "q": q,
            "seed": seed,
            "jobs": jobs,
            "out": str(out_path),
        },
    )
    click.echo(f"wrote {len(rows)} replicate rows to {out}")


@main.command("check-oracle")
@click.argument("ped_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--q", type=float, required=True)
@click.option("--beta", type=float, default=0.0, show_default=True)
@click.option("--epsilon", type=float, default=DEFAULT_EPSILON, show_default=True)
@click.option("--eta", type=float, default=DEFAULT_ETA, show_default=True)
@click.option("--hazard", "hazard_text", default=None, help="Baseline hazard as start:rate,...")
@click.option("--cap", type=int, default=12, show_default=True, help="Enumeration cap on family size.")
@_guarded
def check_oracle(ped_path, q, beta, epsilon, eta, hazard_text, cap):
    """Compare clique-tree marginals against brute-force enumeration."""
    families = _load_families(ped_path)
    for fam in families:
        if len(fam) > cap:
            raise ValueError(
                f"family {fam.family_id} has {len(fam)} members, above the "
                f"enumeration cap {cap}"
            )
    params = ModelParams(
        q=q, beta=beta, epsilon=epsilon, eta=eta, baseline=_parse_hazard(hazard_text)
    )
    worst = 0.0
    for fam in families:
        exact = posterior_marginals(fam, params)
        brute = brute_force_marginals(fam, params, cap=cap)
        deviation = float(np.max(np.abs(exact.marginals - brute.marginals)))
        logev_gap = abs(exact.log_evidence - brute.log_evidence)
        worst = max(worst, deviation)
        click.echo(
            f"family {fam.family_id}: max marginal deviation {deviation:.3e}, "
            f"log-evidence gap {logev_gap:.3e}"
        )
    if worst > ORACLE_TOLERANCE:
        _fail(EXIT_NUMERICAL, f"max deviation {worst:.3e} exceeds {ORACLE_TOLERANCE}")
    click.echo("oracle check passed")


@main.command()
@click.argument("report_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--ages", default="0:100:1", show_default=True, help="Evaluation grid start:stop:step.")
@click.option("--z", "z_text", default="", help="Covariate values, comma separated.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@_guarded
def curve(report_path, ages, z_text, out_path):
    """Export fitted survival curves (with bootstrap bands when available)."""
    report = json.loads(Path(report_path).read_text())
    try:
        start, stop, step = (float(v) for v in ages.split(":"))
    except ValueError:
        raise ValueError(f"bad age grid {ages!r}; expected start:stop:step") from None
    grid = np.arange(start, stop + step / 2, step)
    z = tuple(float(v) for v in z_text.split(",")) if z_text else ()
    gamma = tuple(report["gamma"])
    baseline = BaselineHazard(
        report["baseline"]["times"], report["baseline"]["increments"]
    )
    beta_hat = report["beta_hat"]
    point = {
        group: survival_curve(baseline, beta_hat, gamma, group=group, z=z)(grid)
        for group in ("pat", "mat")
    }
    bands = {}
    fits = (report.get("bootstrap") or {}).get("fits") or []
    if fits:
        for group in ("pat", "mat"):
            curves = np.stack(
                [
                    survival_curve(
                        BaselineHazard(f["baseline"]["times"], f["baseline"]["increments"]),
                        f["beta_hat"],
                        gamma,
                        group=group,
                        z=z,
                    )(grid)
                    for f in fits
                ]
            )
            lower = np.percentile(curves, 2.5, axis=0)
            upper = np.percentile(curves, 97.5, axis=0)
            # widen so the band always contains the point curve
            bands[group] = (
                np.minimum(lower, point[group]),
                np.maximum(upper, point[group]),
            )
    out = Path(out_path)
    with open(out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["age", "survival_pat", "survival_mat", "lower_pat", "upper_pat",
             "lower_mat", "upper_mat"]
        )
        for i, age in enumerate(grid):
            row = [repr(float(age)), repr(float(point["pat"][i])),
                   repr(float(point["mat"][i]))]
            if bands:
                row += [
                    repr(float(bands["pat"][0][i])), repr(float(bands["pat"][1][i])),
                    repr(float(bands["mat"][0][i])), repr(float(bands["mat"][1][i])),
                ]
            else:
                row += ["", "", "", ""]
            writer.writerow(row)
    _write_config_echo(
        Path(str(out) + ".config.json"),
        "curve",
        {"report": str(report_path), "ages": ages, "z": z_text, "out": str(out_path)},
    )
    click.echo(f"wrote curves for {grid.size} ages to {out}")


if __name__ == "__main__":
    main()
