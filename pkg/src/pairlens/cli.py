"""Command-line entry point.

Subcommands cover the full workflow: data generation, pair matching,
annotator-model scoring, the four batch experiments, effect estimation, the
dominance and condition checkers, and the HTTP service.

Conventions shared by every subcommand:
- all randomness flows through an explicit --seed (default 0);
- --config FILE merges a JSON file of parameter values underneath any flags
  given on the command line (flags win);
- runs that write artifacts also write a resolved_config.json next to them,
  capturing every effective parameter;
- failures print one machine-readable JSON line {"code", "message"} to stderr
  and exit 1; bad usage exits 2; success exits 0.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd
from click.core import ParameterSource

from .data import Dataset
from .dominance import (
    logistic_gaussian_boundary,
    orthant_dominance_test,
    pi_dom_condition_check,
    zdom_condition_check,
)
from .effect import estimate_ett
from .elicitation import pair_outcomes, utility_alpha
from .errors import PairlensError
from .experiments import (
    run_budget_curve,
    run_gap_strata,
    run_panel_pi,
    run_panel_zdom,
)
from .matching import STRATEGY_KINDS, RankedPairs, StrategyConfig, score_pairs, select_budget
from .propensity import cv_predict
from .scm import build_panel_scm, simulate
from .standin import build_standin_model, simulate_standin

SCM_CHOICES = ("panel1", "panel2", "panel", "standin")


def _fail(code: str, message: str) -> None:
    click.echo(json.dumps({"code": code, "message": message}), err=True)
    sys.exit(1)


def guarded(fn):
    """Convert domain errors into the exit-1 JSON contract; keep usage errors."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except PairlensError as exc:
            _fail(exc.code, str(exc))
        except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
            _fail("error", str(exc))

    return wrapper


def config_option(fn):
    return click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="JSON file of parameter values; explicit flags override it.",
    )(fn)


def _resolve(ctx: click.Context, params: dict) -> dict:
    """Merge a --config JSON file under the flags (flags override the file)."""
    config_path = params.pop("config", None)
    if config_path:
        file_values = json.loads(Path(config_path).read_text())
        for name, value in file_values.items():
            if name not in params:
                raise click.UsageError(f"unknown config key {name!r} in {config_path}")
            if ctx.get_parameter_source(name) == ParameterSource.DEFAULT:
                params[name] = value
    return params


def _write_resolved(directory: Path, command: str, params: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = {"command": command}
    for key, value in params.items():
        payload[key] = str(value) if isinstance(value, Path) else value
    (directory / "resolved_config.json").write_text(json.dumps(payload, indent=2) + "\n")


def _floats(value) -> tuple[float, ...] | None:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(tok) for tok in str(value).split(",") if tok.strip())


def _ints(value) -> tuple[int, ...] | None:
    parsed = _floats(value)
    return None if parsed is None else tuple(int(v) for v in parsed)


def _names(value) -> tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value)
    return tuple(tok.strip() for tok in str(value).split(",") if tok.strip())


def _build_model(params: dict):
    """(kind, model, simulate-callable) for the generate/check commands."""
    kind = params["scm"]
    if kind == "standin":
        model = build_standin_model(
            seed=params.get("model_seed", 0),
            grid=params.get("grid", 1.0),
            coupling=params.get("coupling", 0.3),
            effect_x=params.get("effect_x", -0.2),
        )
        return kind, model, simulate_standin
    preset_rho = {"panel1": 0.05, "panel2": 0.55}
    rho = preset_rho.get(kind, params.get("rho", 0.05))
    model = build_panel_scm(
        cross_mode=params.get("cross_mode", "diag"),
        rho=rho,
        c=params.get("c", 0.0),
        beta=params.get("beta", 1.0),
        gamma=params.get("gamma", 1.0),
        d=params.get("d", 3),
    )
    return kind, model, simulate


def _echo(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2))


@click.group()
@click.version_option(package_name="pairlens")
def main():
    """Pair-proposal toolkit for surfacing unobserved confounders."""


# ---------------------------------------------------------------- generate ---
@main.command()
@click.option("--scm", type=click.Choice(SCM_CHOICES), default="standin", show_default=True)
@click.option("--n", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Simulation seed.")
@click.option("--model-seed", type=int, default=0, show_default=True,
              help="Coefficient-draw seed (stand-in model only).")
@click.option("--rho", type=float, default=0.05, show_default=True,
              help="Covariate-concept correlation (scm=panel only).")
@click.option("--c", type=float, default=0.0, show_default=True,
              help="Dense cross-coupling weight (scm=panel only).")
@click.option("--cross-mode", type=click.Choice(("diag", "dense")), default="diag",
              show_default=True)
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--gamma", type=float, default=1.0, show_default=True)
@click.option("--d", type=int, default=3, show_default=True)
@click.option("--grid", type=float, default=1.0, show_default=True,
              help="Rounding width in latent sd units (stand-in only).")
@click.option("--coupling", type=float, default=0.3, show_default=True)
@click.option("--effect-x", type=float, default=-0.2, show_default=True)
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def generate(ctx, **raw):
    """Simulate a dataset and write it with its model card."""
    params = _resolve(ctx, raw)
    out = Path(params["out"])
    kind, model, sim = _build_model(params)
    dataset = sim(model, params["n"], params["seed"])
    dataset.save(out)
    (out / "scm.json").write_text(
        json.dumps(
            {"kind": kind, "hash": model.spec_hash(), "spec": model.to_dict()},
            indent=2,
        )
        + "\n"
    )
    _write_resolved(out, "generate", params)
    _echo(
        {
            "out": str(out),
            "n": dataset.n,
            "scm": kind,
            "scm_hash": model.spec_hash(),
            "dataset_hash": dataset.content_hash(),
        }
    )


# ------------------------------------------------------------------- match ---
@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--strategy", type=click.Choice(STRATEGY_KINDS), required=True)
@click.option("--budget", type=int, default=100, show_default=True)
@click.option("--dominance-margin", type=float, default=0.2, show_default=True)
@click.option("--pi-gap-tolerance", type=float, default=0.005, show_default=True)
@click.option("--max-unit-reuse", type=int, default=3, show_default=True)
@click.option("--strict", is_flag=True, default=False)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def match(ctx, **raw):
    """Rank treated/untreated pairs and select a budgeted prefix."""
    params = _resolve(ctx, raw)
    dataset = Dataset.load(params["data"])
    config = StrategyConfig(
        kind=params["strategy"],
        dominance_margin=params["dominance_margin"],
        pi_gap_tolerance=params["pi_gap_tolerance"],
        max_unit_reuse=params["max_unit_reuse"],
        seed=params["seed"],
        strict=params["strict"],
    )
    propensity = None
    if config.kind in ("pi_match", "pi_dom"):
        propensity = cv_predict(dataset, seed=config.seed)
    ranked = score_pairs(dataset, config, propensity=propensity)
    selected = select_budget(ranked, params["budget"])
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "i": selected.i.astype(int),
            "j": selected.j.astype(int),
            "score": selected.score,
            "strategy": config.kind,
        }
    )
    frame.to_csv(out / "pairs.csv", index=False)
    params["dataset_hash"] = dataset.content_hash()
    _write_resolved(out, "match", params)
    _echo(
        {
            "out": str(out / "pairs.csv"),
            "n_pairs": int(len(selected)),
            "requested": params["budget"],
            "dataset_hash": dataset.content_hash(),
        }
    )


# ------------------------------------------------------------------ elicit ---
@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--pairs", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--alpha", type=float, default=1.0, show_default=True,
              help="Spurious-candidate penalty in the utility summary.")
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def elicit(ctx, **raw):
    """Score selected pairs under the perfect-extraction annotator model."""
    params = _resolve(ctx, raw)
    dataset = Dataset.load(params["data"])
    frame = pd.read_csv(params["pairs"], float_precision="round_trip")
    strategy = str(frame["strategy"].iloc[0]) if len(frame) else "marginal"
    ranked = RankedPairs(
        i=frame["i"].to_numpy(dtype=np.int64),
        j=frame["j"].to_numpy(dtype=np.int64),
        score=frame["score"].to_numpy(dtype=float),
        config=StrategyConfig(kind=strategy),
        dataset_hash=dataset.content_hash(),
    )
    outcomes = pair_outcomes(dataset, ranked)
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        {
            "i": ranked.i,
            "j": ranked.j,
            "n_genuine": outcomes.n_genuine,
            "n_spurious": outcomes.n_spurious,
            "success": outcomes.success,
        }
    ).to_csv(out / "outcomes.csv", index=False)
    summary = {
        "n_pairs": int(len(ranked)),
        "strategy": strategy,
        "lambda_mean": float(outcomes.success.mean()) if len(ranked) else 0.0,
        "alpha": params["alpha"],
        "utility": (
            utility_alpha(outcomes.n_genuine, outcomes.n_spurious, params["alpha"])
            if len(ranked)
            else 0.0
        ),
        "dataset_hash": dataset.content_hash(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_resolved(out, "elicit", params)
    _echo(summary)


# ------------------------------------------------------------- experiments ---
def _finish_experiment(report, out_dir: str, command: str, params: dict) -> None:
    saved = report.save(out_dir)
    run_dir = Path(saved.csv_paths[0]).parent
    _write_resolved(run_dir, command, params)
    _echo(
        {
            "run_dir": str(run_dir),
            "experiment": saved.experiment,
            "run_id": saved.run_id,
            "rows": len(saved.rows),
            "wall_clock": saved.wall_clock,
        }
    )


@main.command("panel-zdom")
@click.option("--rho", type=float, default=0.05, show_default=True)
@click.option("--delta-grid", default=None,
              help="Comma-separated shifts, e.g. '0,0.5,1.0,1.5'.")
@click.option("--n-pairs", type=int, default=20_000, show_default=True)
@click.option("--reps", type=int, default=20, show_default=True)
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--gamma", type=float, default=1.0, show_default=True)
@click.option("--d", type=int, default=3, show_default=True)
@click.option("--proposal-cap", type=int, default=10_000_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def panel_zdom_cmd(ctx, **raw):
    """Sweep the dominance-gap experiment over separation shifts."""
    params = _resolve(ctx, raw)
    report = run_panel_zdom(
        rho=params["rho"],
        delta_grid=_floats(params["delta_grid"]),
        n_pairs=params["n_pairs"],
        reps=params["reps"],
        seed=params["seed"],
        beta=params["beta"],
        gamma=params["gamma"],
        d=params["d"],
        proposal_cap=params["proposal_cap"],
        jobs=params["jobs"],
    )
    _finish_experiment(report, params["out"], "panel-zdom", params)


@main.command("panel-pi")
@click.option("--c-grid", default=None, help="Comma-separated coupling weights.")
@click.option("--n-pop", type=int, default=100_000, show_default=True)
@click.option("--gap-tol", type=float, default=0.005, show_default=True)
@click.option("--reps", type=int, default=20, show_default=True)
@click.option("--beta", type=float, default=0.2, show_default=True)
@click.option("--d", type=int, default=3, show_default=True)
@click.option("--n-match-pairs", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def panel_pi_cmd(ctx, **raw):
    """Sweep the propensity-matching experiment over coupling weights."""
    params = _resolve(ctx, raw)
    report = run_panel_pi(
        c_grid=_floats(params["c_grid"]),
        n_pop=params["n_pop"],
        gap_tol=params["gap_tol"],
        reps=params["reps"],
        seed=params["seed"],
        beta=params["beta"],
        d=params["d"],
        n_match_pairs=params["n_match_pairs"],
        jobs=params["jobs"],
    )
    _finish_experiment(report, params["out"], "panel-pi", params)


@main.command("budget-curve")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--strategies", default=",".join(STRATEGY_KINDS), show_default=True)
@click.option("--b-max", type=int, default=2000, show_default=True)
@click.option("--seeds", default="0,1,2,3,4", show_default=True)
@click.option("--max-unit-reuse", type=int, default=3, show_default=True)
@click.option("--propensity-seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def budget_curve_cmd(ctx, **raw):
    """Cumulative success-rate curves per strategy over a pair budget."""
    params = _resolve(ctx, raw)
    dataset = Dataset.load(params["data"])
    report = run_budget_curve(
        dataset,
        strategies=_names(params["strategies"]),
        b_max=params["b_max"],
        seeds=_ints(params["seeds"]),
        max_unit_reuse=params["max_unit_reuse"],
        propensity_seed=params["propensity_seed"],
        jobs=params["jobs"],
    )
    _finish_experiment(report, params["out"], "budget-curve", params)


@main.command("gap-strata")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--n-bins", type=int, default=10, show_default=True)
@click.option("--seeds", default="0,1,2,3,4", show_default=True)
@click.option("--n-sample-pairs", type=int, default=200_000, show_default=True)
@click.option("--propensity-seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def gap_strata_cmd(ctx, **raw):
    """Success rate by propensity-gap stratum."""
    params = _resolve(ctx, raw)
    dataset = Dataset.load(params["data"])
    report = run_gap_strata(
        dataset,
        n_bins=params["n_bins"],
        seeds=_ints(params["seeds"]),
        n_sample_pairs=params["n_sample_pairs"],
        propensity_seed=params["propensity_seed"],
        jobs=params["jobs"],
    )
    _finish_experiment(report, params["out"], "gap-strata", params)


# --------------------------------------------------------------------- ett ---
@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--adjust", default="z", show_default=True,
              help="'z', 'u', 'zu', or an explicit comma-separated column list.")
@click.option("--bootstrap", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@config_option
@click.pass_context
@guarded
def ett(ctx, **raw):
    """Regression-adjusted effect among the treated, with bootstrap CI."""
    params = _resolve(ctx, raw)
    dataset = Dataset.load(params["data"])
    shorthand = {
        "z": tuple(dataset.z_names),
        "u": tuple(dataset.u_names),
        "zu": tuple(dataset.z_names) + tuple(dataset.u_names),
    }
    adjust = shorthand.get(str(params["adjust"]).lower()) or _names(params["adjust"])
    estimate = estimate_ett(
        dataset, adjust, bootstrap_reps=params["bootstrap"], seed=params["seed"]
    )
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    record = estimate.to_dict()
    (out / "estimate.json").write_text(json.dumps(record, indent=2) + "\n")
    pd.DataFrame({"draw": list(estimate.draws)}).to_csv(out / "bootstrap.csv", index=False)
    _write_resolved(out, "ett", params)
    _echo(record)


# ---------------------------------------------------------------- checkers ---
@main.command("check-dominance")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--columns", default=None,
              help="Columns to compare treated vs untreated on "
              "(default: oracle concept columns when present, else covariates).")
@click.option("--se-factor", type=float, default=3.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@config_option
@click.pass_context
@guarded
def check_dominance(ctx, **raw):
    """Upper-orthant dominance verdict: treated versus untreated rows."""
    params = _resolve(ctx, raw)
    dataset = Dataset.load(params["data"])
    if params["columns"]:
        columns = _names(params["columns"])
    else:
        columns = tuple(dataset.u_names) if dataset.u is not None else tuple(dataset.z_names)
    frame = dataset.to_frame()
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise click.UsageError(f"columns not in dataset: {missing}")
    values = frame[list(columns)].to_numpy(dtype=float)
    report = orthant_dominance_test(
        values[dataset.treated_idx],
        values[dataset.untreated_idx],
        se_factor=params["se_factor"],
    )
    payload = {"columns": list(columns), **report.to_dict()}
    if params["out"]:
        out = Path(params["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "dominance.json").write_text(json.dumps(payload, indent=2) + "\n")
        _write_resolved(out, "check-dominance", params)
    _echo(payload)


@main.command("check-conditions")
@click.option("--scm", type=click.Choice(("panel1", "panel2", "panel")), default="panel1",
              show_default=True)
@click.option("--rho", type=float, default=0.05, show_default=True)
@click.option("--c", type=float, default=0.0, show_default=True)
@click.option("--cross-mode", type=click.Choice(("diag", "dense")), default="diag",
              show_default=True)
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--gamma", type=float, default=1.0, show_default=True)
@click.option("--d", type=int, default=3, show_default=True)
@click.option("--x", type=int, default=1, show_default=True)
@click.option("--family", type=click.Choice(("z", "pi", "both")), default="z",
              show_default=True,
              help="Which sufficient-condition family to check.")
@click.option("--grid-per-axis", type=int, default=5, show_default=True)
@click.option("--boundary-beta-gamma", type=float, default=None,
              help="Also report the critical correlation for this coupling product.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@config_option
@click.pass_context
@guarded
def check_conditions(ctx, **raw):
    """Check the cross-partial sufficient conditions on a synthetic model."""
    params = _resolve(ctx, raw)
    _, model, _ = _build_model(params)
    payload: dict = {"scm": params["scm"], "scm_hash": model.spec_hash(), "x": params["x"]}
    if params["family"] in ("z", "both"):
        report = zdom_condition_check(
            model, params["x"], grid_per_axis=params["grid_per_axis"], seed=params["seed"]
        )
        payload["covariate_family"] = json.loads(report.to_json())
    if params["family"] in ("pi", "both"):
        report = pi_dom_condition_check(model, params["x"], seed=params["seed"])
        payload["propensity_family"] = report.to_dict()
    if params["boundary_beta_gamma"] is not None:
        payload["boundary"] = {
            "beta_gamma": params["boundary_beta_gamma"],
            "critical_rho": logistic_gaussian_boundary(params["boundary_beta_gamma"]),
        }
    if params["out"]:
        out = Path(params["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "conditions.json").write_text(json.dumps(payload, indent=2) + "\n")
        _write_resolved(out, "check-conditions", params)
    _echo(payload)


# ------------------------------------------------------------------- serve ---
@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None,
              help="Storage root (falls back to PAIRLENS_DATA_DIR, then ./pairlens_data).")
@guarded
def serve(host, port, data_dir):
    """Run the annotation HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
