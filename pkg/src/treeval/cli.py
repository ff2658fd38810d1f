"""Command-line surface: fit trees, test fitted splits/regions, run the
simulation studies, and check the analytic sets against literal refits.

Every command emits a manifest (command, configuration echo, dataset
checksum, seed, version, timing) alongside its results so runs can be
reproduced byte for byte.  Exit codes: 0 success, 2 bad invocation,
1 runtime failure.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .cart import StoppingRule, fit_cart, tree_from_dict, tree_to_dict
from .dataset import load_csv
from .inference import analyze_tree, estimate_sigma, region_inference, split_inference
from .oracle import agreement_check
from .sim import (
    SimConfig,
    run_coverage_study,
    run_null_study,
    run_power_study,
    write_qq,
    write_rows_csv,
    write_summary_json,
)


def _checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(command: str, config: dict, checksum: str | None, seed: int | None, t0: float) -> dict:
    return {
        "command": command,
        "config": config,
        "dataset_sha256": checksum,
        "seed": seed,
        "version": __version__,
        "elapsed_seconds": round(time.perf_counter() - t0, 6),
    }


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


def _stopping(max_level, min_node, min_gain) -> StoppingRule:
    try:
        return StoppingRule(max_level, min_node, min_gain)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


@click.group()
@click.version_option(__version__)
def main():
    """Selective inference for CART regression trees."""


@main.command("fit")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--response", required=True, help="Name of the response column.")
@click.option("--lambda", "lam", type=float, default=0.0, show_default=True,
              help="Cost-complexity pruning threshold.")
@click.option("--max-level", type=int, default=3, show_default=True)
@click.option("--min-node", type=int, default=1, show_default=True)
@click.option("--min-gain", type=float, default=0.0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write JSON here instead of stdout.")
def cmd_fit(csv_path, response, lam, max_level, min_node, min_gain, out):
    """Fit a pruned tree to a CSV and emit it as JSON."""
    t0 = time.perf_counter()
    if lam < 0:
        raise click.UsageError("--lambda must be >= 0")
    stop = _stopping(max_level, min_node, min_gain)
    d = load_csv(csv_path, response)
    _, tree = fit_cart(d, d.y, stop, lam)
    payload = {
        "schema": "treeval/fit/v1",
        "manifest": _manifest(
            "fit",
            {"csv": str(csv_path), "response": response, "lambda": lam,
             "max_level": max_level, "min_node": min_node, "min_gain": min_gain},
            _checksum(csv_path), None, t0,
        ),
        "tree": tree_to_dict(tree),
    }
    _emit(payload, out)


def _parse_mode(mode: str) -> tuple[str, int | None]:
    if mode in ("identity", "full"):
        return mode, None
    if mode.startswith("budget:"):
        try:
            budget = int(mode.split(":", 1)[1])
        except ValueError:
            raise click.UsageError(f"bad budget in --mode {mode!r}") from None
        if budget < 1:
            raise click.UsageError("--mode budget:K needs K >= 1")
        return "budget", budget
    raise click.UsageError(f"--mode must be identity, budget:K, or full (got {mode!r})")


def _parse_targets(targets: tuple[str, ...]) -> list[tuple[str, int]] | None:
    if not targets or "all" in targets:
        return None
    parsed = []
    for t in targets:
        kind, _, num = t.partition(":")
        if kind not in ("split", "region") or not num.isdigit():
            raise click.UsageError(f"--target must look like split:ID or region:ID (got {t!r})")
        parsed.append((kind, int(num)))
    return parsed


@main.command("test")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--response", required=True)
@click.option("--tree", "tree_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--target", multiple=True,
              help="split:ID or region:ID; repeatable. Default: every split and region.")
@click.option("--sigma", type=float, default=None, help="Known noise standard deviation.")
@click.option("--estimate-sigma", is_flag=True, default=False,
              help="Plug in the sample standard deviation of the response.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--null-value", type=float, default=0.0, show_default=True,
              help="Null value for region-mean tests.")
@click.option("--mode", default="identity", show_default=True,
              help="Region conditioning: identity, budget:K, or full.")
@click.option("--out", type=click.Path(), default=None)
def cmd_test(csv_path, response, tree_path, target, sigma, estimate_sigma, alpha, null_value, mode, out):
    """Selective p-values and confidence intervals for a fitted tree."""
    t0 = time.perf_counter()
    if (sigma is None) == (not estimate_sigma):
        raise click.UsageError("pass exactly one of --sigma or --estimate-sigma")
    if not 0 < alpha < 1:
        raise click.UsageError("--alpha must be in (0, 1)")
    mode_name, budget = _parse_mode(mode)
    targets = _parse_targets(target)
    d = load_csv(csv_path, response)
    tree = tree_from_dict(json.loads(Path(tree_path).read_text())["tree"], d)
    if estimate_sigma:
        sig, est = estimate_sigma_value(d)
    else:
        sig, est = float(sigma), False
    if targets is None:
        results = analyze_tree(d, tree, sig, alpha, mode=mode_name, budget=budget,
                               null_value=null_value, sigma_estimated=est)
    else:
        results = []
        for kind, rid in targets:
            if rid not in tree.regions:
                raise click.UsageError(f"tree has no region {rid}")
            if kind == "split":
                results.append(split_inference(d, tree, rid, sig, alpha, sigma_estimated=est))
            else:
                results.append(region_inference(d, tree, rid, sig, alpha, null_value=null_value,
                                                mode=mode_name, budget=budget, sigma_estimated=est))
    payload = {
        "schema": "treeval/test/v1",
        "manifest": _manifest(
            "test",
            {"csv": str(csv_path), "response": response, "tree": str(tree_path),
             "alpha": alpha, "sigma": sig, "sigma_source": "estimated" if est else "given",
             "mode": mode, "null_value": null_value,
             "targets": [f"{k}:{r}" for k, r in targets] if targets else "all"},
            _checksum(csv_path), None, t0,
        ),
        "results": [r.to_json() for r in results],
    }
    _emit(payload, out)


def estimate_sigma_value(d) -> tuple[float, bool]:
    return estimate_sigma(d.y), True


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise click.UsageError(f"expected comma-separated numbers, got {text!r}") from None


@main.command("simulate")
@click.option("--study", required=True, type=click.Choice(["null", "power", "coverage"]))
@click.option("--n", type=int, default=100, show_default=True)
@click.option("--p", type=int, default=5, show_default=True)
@click.option("--a", "a_values", default="1", show_default=True, help="Comma-separated grid.")
@click.option("--b", "b_values", default="5", show_default=True, help="Comma-separated grid.")
@click.option("--sigma", type=float, default=5.0, show_default=True)
@click.option("--lambda", "lam", type=float, default=None,
              help="Pruning threshold [default: 0 for the null study, 5 otherwise].")
@click.option("--max-level", type=int, default=3, show_default=True)
@click.option("--min-node", type=int, default=1, show_default=True)
@click.option("--replicates", type=int, default=300, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="CSV of per-row study results.")
@click.option("--qq", "qq_path", type=click.Path(), default=None,
              help="Null study only: write gnuplot-style QQ data here.")
def cmd_simulate(study, n, p, a_values, b_values, sigma, lam, max_level, min_node,
                 replicates, alpha, seed, out, qq_path):
    """Run one of the simulation studies and write CSV + JSON summary."""
    t0 = time.perf_counter()
    if replicates < 1:
        raise click.UsageError("--replicates must be >= 1")
    stop = _stopping(max_level, min_node, 0.0)
    if lam is None:
        lam = 0.0 if study == "null" else 5.0
    if lam < 0:
        raise click.UsageError("--lambda must be >= 0")
    a_list = _parse_floats(a_values)
    b_list = _parse_floats(b_values)
    base = dict(n=n, p=p, sigma=sigma, lam=lam, stopping=stop, replicates=replicates, seed=seed)
    try:
        if study == "null":
            cfg = SimConfig(a=0.0, b=0.0, **base)
            result = run_null_study(cfg)
            if qq_path:
                write_qq(qq_path, result.p_selective, result.levels)
        elif study == "power":
            cfg = SimConfig(a=a_list[0], b=b_list[0], **base)
            result = run_power_study(cfg, a_list, b_list)
        else:
            cfg = SimConfig(a=a_list[0], b=b_list[0], **base)
            result = run_coverage_study(cfg, a_list, b_list, alpha=alpha)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    write_rows_csv(out, result.rows())
    summary = {
        "schema": "treeval/simulate/v1",
        "manifest": _manifest(
            "simulate",
            {"study": study, "n": n, "p": p, "a": a_list, "b": b_list, "sigma": sigma,
             "lambda": lam, "max_level": max_level, "min_node": min_node,
             "replicates": replicates, "alpha": alpha},
            None, seed, t0,
        ),
        "summary": result.summary(),
    }
    write_summary_json(str(out) + ".summary.json", summary)
    click.echo(f"wrote {out} and {out}.summary.json")


@main.command("oracle")
@click.option("--instances", type=int, default=5, show_default=True)
@click.option("--n", type=int, default=15, show_default=True)
@click.option("--p", type=int, default=2, show_default=True)
@click.option("--lambda-values", default="0,5,25", show_default=True,
              help="Pruning thresholds cycled across instances.")
@click.option("--max-level", type=int, default=3, show_default=True)
@click.option("--grid-points", type=int, default=2001, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_oracle(instances, n, p, lambda_values, max_level, grid_points, seed, out):
    """Desk-scale agreement check: analytic sets vs literal refits.

    Exits 1 if any probe outside the endpoint exclusion zone disagrees.
    """
    t0 = time.perf_counter()
    if n > 40 or instances > 100:
        raise click.UsageError("the oracle is a desk-scale check; keep --n <= 40, --instances <= 100")
    lams = _parse_floats(lambda_values)
    from .dataset import Dataset

    rng = np.random.Generator(np.random.Philox(seed))
    stop = _stopping(max_level, 1, 0.0)
    reports = []
    made = 0
    attempts = 0
    while made < instances and attempts < instances * 20:
        attempts += 1
        lam = lams[made % len(lams)]
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        d = Dataset.from_arrays(X, y)
        _, tree = fit_cart(d, d.y, stop, lam)
        rep = agreement_check(d, tree, lam, grid_points=grid_points)
        if rep is None:
            continue  # pruned to the root; draw again
        reports.append(rep)
        made += 1
    agree = all(r["agree"] for r in reports)
    payload = {
        "schema": "treeval/oracle/v1",
        "manifest": _manifest(
            "oracle",
            {"instances": instances, "n": n, "p": p, "lambda_values": lams,
             "max_level": max_level, "grid_points": grid_points},
            None, seed, t0,
        ),
        "agree": agree,
        "instances": reports,
    }
    _emit(payload, out)
    if not agree:
        sys.exit(1)


def run() -> None:
    """Entry point with runtime errors mapped to exit code 1."""
    try:
        main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except SystemExit:
        raise
    except Exception as exc:  # runtime failure, not a usage problem
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
