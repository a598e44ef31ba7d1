"""Batch experiment driver: generate data, fit, evaluate, report.

Pipelines are deliberately file-based: ``generate`` writes seeded
datasets plus ground truth, ``fit`` turns one dataset into estimate
artifacts, ``evaluate`` scores estimates against truth, and ``report``
aggregates replicate metrics into mean(sd) rows.  All randomness flows
from a single --seed via deterministic substreams, so rerunning a
pipeline reproduces its outputs byte for byte.

Exit codes: 2 spec validation, 3 refusing to overwrite, 4 estimator
failure, 5 mismatched replicate sets.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__, ggm, metrics, randcoef, regselect, simgen
from .core import (
    ChainTrace,
    chain_average,
    read_incomplete_csv,
    read_matrix_csv,
    write_incomplete_csv,
    write_matrix_csv,
    write_trace_csv,
)
from .engine import EngineConfig, run_ic
from .exceptions import BlockFailure, EstimatorFailure, IcfitError


def _max_workers() -> int:
    return max(1, int(os.environ.get("ICFIT_THREADS", os.cpu_count() or 1)))


def _hash_files(paths) -> str:
    h = hashlib.sha256()
    for path in sorted(str(p) for p in paths):
        h.update(Path(path).read_bytes())
    return h.hexdigest()[:16]


def _replicate_seeds(seed: int, reps: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(reps)]


def _prepare_out(out: str, force: bool) -> Path:
    out_dir = Path(out)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        click.echo(f"refusing to overwrite non-empty {out_dir} (use --force)", err=True)
        sys.exit(3)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


@click.group()
@click.version_option(__version__)
def main():
    """Imputation-consistency experiment pipeline."""


@main.command()
@click.option("--kind", type=click.Choice(["ggm", "regression", "randcoef"]), required=True)
@click.option("--n", type=int, default=200, show_default=True)
@click.option("--p", type=int, default=100, show_default=True)
@click.option("--i-units", type=int, default=100, show_default=True, help="customers (randcoef)")
@click.option("--j-units", type=int, default=20, show_default=True, help="items (randcoef)")
@click.option("--rate", type=float, default=0.1, show_default=True)
@click.option("--setting", type=click.Choice(["independent", "ar2"]), default="independent",
              show_default=True, help="covariate design (regression)")
@click.option("--reps", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@click.option("--force", is_flag=True)
def generate(kind, n, p, i_units, j_units, rate, setting, reps, seed, out, force):
    """Write seeded datasets with ground truth and a manifest."""
    if reps < 1 or not 0 <= rate < 1 or n < 5 or p < 5:
        click.echo("invalid spec: need reps >= 1, 0 <= rate < 1, n, p >= 5", err=True)
        sys.exit(2)
    out_dir = _prepare_out(out, force)
    seeds = _replicate_seeds(seed, reps)
    written = []
    for r, rep_seed in enumerate(seeds):
        rng = np.random.default_rng(rep_seed)
        if kind == "ggm":
            C = simgen.ar2_concentration(p)
            X = simgen.sample_ggm_data(C, n, rng)
            inc = simgen.inject_mcar(X, rate, rng)
            write_incomplete_csv(out_dir / f"data_r{r}.csv", inc)
            write_matrix_csv(out_dir / f"truth_adjacency_r{r}.csv",
                             simgen.ar2_truth_adjacency(p).astype(float))
            written += [f"data_r{r}.csv", f"truth_adjacency_r{r}.csv"]
        elif kind == "regression":
            X, y, beta = simgen.sample_regression_data(setting, n, p, rng)
            inc = simgen.inject_mcar(X, rate, rng)
            write_incomplete_csv(out_dir / f"X_r{r}.csv", inc)
            write_matrix_csv(out_dir / f"y_r{r}.csv", y[:, None], header=["y"])
            write_matrix_csv(out_dir / f"truth_beta_r{r}.csv", beta[:, None], header=["beta"])
            written += [f"X_r{r}.csv", f"y_r{r}.csv", f"truth_beta_r{r}.csv"]
        else:
            hyper_dims = (2, 2, 2)
            beta = np.array([1.0, -2.0])
            x, z, w, y, truth = simgen.sample_randcoef_data(
                i_units, j_units, rng, beta, 1.0, np.eye(2), np.eye(2)
            )
            rows = []
            for i in range(i_units):
                for j in range(j_units):
                    rows.append(
                        np.concatenate([[i, j, y[i, j]], x[i, j], z[i], w[j]])
                    )
            q, dz, dw = hyper_dims
            header = (["i", "j", "y"] + [f"x{k}" for k in range(q)]
                      + [f"z{k}" for k in range(dz)] + [f"w{k}" for k in range(dw)])
            write_matrix_csv(out_dir / f"data_r{r}.csv", np.array(rows), header=header)
            write_matrix_csv(out_dir / f"truth_beta_r{r}.csv", truth.beta[:, None],
                             header=["beta"])
            written += [f"data_r{r}.csv", f"truth_beta_r{r}.csv"]
    manifest = {
        "version": __version__,
        "kind": kind,
        "seed": seed,
        "replicate_seeds": seeds,
        "spec": {"n": n, "p": p, "I": i_units, "J": j_units, "rate": rate,
                 "setting": setting, "reps": reps},
        "files": written,
        "hash": _hash_files(out_dir / f for f in written),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(f"wrote {len(written)} files to {out_dir}")


def _fit_ggm(data_path, out_dir, stamp, iters, burn_in, seed):
    data = read_incomplete_csv(data_path)
    cfg = EngineConfig(iterations=iters, burn_in=min(burn_in, iters - 1), seed=seed)
    model = ggm.GgmModel()
    trace = run_ic(model, data, cfg)
    p = data.shape[1]
    mats = [ggm.scores_from_payload(s.payload, p)
            for s in trace.snapshots if s.label >= trace.burn_in]
    averaged = ggm.average_psi(mats)
    graph = ggm.threshold_graph(averaged, model.q, ggm.default_cap(data.shape[0]))
    write_matrix_csv(out_dir / "scores.csv", averaged, comment=stamp)
    write_matrix_csv(out_dir / "scores_last.csv", mats[-1], comment=stamp)
    write_matrix_csv(out_dir / "adjacency.csv", graph.adjacency.astype(float), comment=stamp)
    write_trace_csv(out_dir / "trace.csv", trace, comment=stamp)


def _fit_regression(data_path, response_path, out_dir, stamp, iters, burn_in, seed):
    data = read_incomplete_csv(data_path)
    y = read_matrix_csv(response_path).ravel()
    cfg = EngineConfig(iterations=iters, burn_in=min(burn_in, iters - 1), seed=seed)
    fit = regselect.icc_regression(data, y, cfg)
    write_matrix_csv(out_dir / "beta.csv", fit.beta_average[:, None],
                     header=["beta"], comment=stamp)
    with open(out_dir / "selection.csv", "w", newline="") as fh:
        fh.write(f"# {stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(["variable", "count", "selected"])
        for j, cnt in enumerate(fit.report.counts):
            writer.writerow([j + 1, int(cnt), int(j in fit.report.selected)])
    write_trace_csv(out_dir / "trace.csv", fit.trace, comment=stamp)


def _fit_randcoef(data_path, out_dir, stamp, iters, burn_in, seed, mode, chains):
    raw = read_matrix_csv(data_path)
    ii = raw[:, 0].astype(int)
    jj = raw[:, 1].astype(int)
    I, J = ii.max() + 1, jj.max() + 1
    rest = raw.shape[1] - 3
    q = dz = dw = rest // 3 if rest % 3 == 0 else None
    if q is None:
        raise IcfitError("cannot infer covariate dimensions from the data file")
    y = np.zeros((I, J))
    x = np.zeros((I, J, q))
    z = np.zeros((I, dz))
    w = np.zeros((J, dw))
    for row, (a, b) in enumerate(zip(ii, jj)):
        y[a, b] = raw[row, 2]
        x[a, b] = raw[row, 3 : 3 + q]
        z[a] = raw[row, 3 + q : 3 + q + dz]
        w[b] = raw[row, 3 + q + dz :]
    model = randcoef.RandCoefModel(x, z, w, randcoef.default_hyper(q, dz, dw))
    chain_seeds = _replicate_seeds(seed, chains)
    summaries = []
    for c, cseed in enumerate(chain_seeds):
        trace = randcoef.run_randcoef(model, y, iters, burn_in, cseed, mode=mode)
        write_trace_csv(out_dir / f"trace_chain{c}.csv", trace, comment=stamp)
        post = trace.post_burn_in()
        for k in range(q):
            summaries.append(
                [c, f"beta{k}", float(post[:, k].mean()),
                 metrics.lag_autocorrelation(post[:, k], 1)]
            )
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        fh.write(f"# {stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(["chain", "parameter", "mean", "lag1_autocorr"])
        writer.writerows(summaries)


@main.command()
@click.option("--kind", type=click.Choice(["ggm", "regression", "randcoef"]), required=True)
@click.option("--data", "data_paths", multiple=True, required=True)
@click.option("--response", "response_paths", multiple=True,
              help="y files, one per --data (regression)")
@click.option("--iters", type=int, default=30, show_default=True)
@click.option("--burn-in", type=int, default=20, show_default=True)
@click.option("--chains", type=int, default=1, show_default=True)
@click.option("--mode", type=click.Choice(["icc", "gibbs"]), default="icc",
              show_default=True, help="sampler variant (randcoef)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@click.option("--force", is_flag=True)
def fit(kind, data_paths, response_paths, iters, burn_in, chains, mode, seed, out, force):
    """Fit one or more datasets; replicates fan out across ICFIT_THREADS workers."""
    if kind == "regression" and len(response_paths) != len(data_paths):
        click.echo("regression needs one --response per --data", err=True)
        sys.exit(2)
    out_dir = _prepare_out(out, force)
    seeds = _replicate_seeds(seed, len(data_paths))

    def one(r):
        rep_dir = out_dir / f"fit_r{r}"
        rep_dir.mkdir(exist_ok=True)
        inputs = [data_paths[r]] + ([response_paths[r]] if response_paths else [])
        stamp = f"manifest: {_hash_files(inputs)}"
        if kind == "ggm":
            _fit_ggm(data_paths[r], rep_dir, stamp, iters, burn_in, seeds[r])
        elif kind == "regression":
            _fit_regression(data_paths[r], response_paths[r], rep_dir, stamp,
                            iters, burn_in, seeds[r])
        else:
            _fit_randcoef(data_paths[r], rep_dir, stamp, iters, burn_in,
                          seeds[r], mode, chains)

    try:
        if len(data_paths) == 1:
            one(0)
        else:
            with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
                list(pool.map(one, range(len(data_paths))))
    except (EstimatorFailure, BlockFailure) as exc:
        click.echo(f"estimator failure: {exc}", err=True)
        sys.exit(4)
    click.echo(f"fit {len(data_paths)} dataset(s) into {out_dir}")


@main.command()
@click.option("--kind", type=click.Choice(["ggm", "regression"]), required=True)
@click.option("--estimate", required=True, help="scores.csv (ggm) or fit dir (regression)")
@click.option("--truth", required=True, help="truth adjacency or truth beta file")
@click.option("--out", required=True, help="metrics CSV to write")
def evaluate(kind, estimate, truth, out):
    """Score one fit against ground truth; writes a one-row metrics CSV."""
    if kind == "ggm":
        scores = read_matrix_csv(estimate)
        adjacency = read_matrix_csv(truth).astype(bool)
        curve = metrics.pr_curve(scores, adjacency)
        names, vals = ["auc"], [curve.auc]
        pr_path = Path(out).with_suffix(".pr.csv")
        with open(pr_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall"])
            writer.writerows(curve.points)
    else:
        est_dir = Path(estimate)
        beta_hat = read_matrix_csv(est_dir / "beta.csv").ravel()
        truth_beta = read_matrix_csv(truth).ravel()
        selected = set()
        with open(est_dir / "selection.csv") as fh:
            for rec in csv.DictReader(line for line in fh if not line.startswith("#")):
                if int(rec["selected"]):
                    selected.add(int(rec["variable"]) - 1)
        truth_set = set(np.flatnonzero(truth_beta[1:]).tolist())
        err2, fsr, nsr = metrics.selection_metrics(beta_hat, selected, truth_beta, truth_set)
        names, vals = ["err2", "fsr", "nsr"], [err2, fsr, nsr]
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind"] + names)
        writer.writerow([kind] + [repr(float(v)) for v in vals])
    click.echo(f"wrote {out}")


@main.command()
@click.option("--metrics", "metric_paths", multiple=True, required=True)
@click.option("--out", required=True)
def report(metric_paths, out):
    """Aggregate replicate metrics into mean(sd) rows."""
    kinds = set()
    columns = None
    rows = []
    for path in metric_paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rec = next(reader)
        kinds.add(rec[0])
        if columns is None:
            columns = header[1:]
        elif columns != header[1:]:
            click.echo("metric files have mismatched columns", err=True)
            sys.exit(5)
        rows.append([float(v) for v in rec[1:]])
    if len(kinds) != 1:
        click.echo("refusing to mix experiment kinds in one report", err=True)
        sys.exit(5)
    table = np.array(rows)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean(sd)", "replicates"])
        for k, name in enumerate(columns):
            sd = table[:, k].std(ddof=1) if len(rows) > 1 else 0.0
            writer.writerow([name, f"{table[:, k].mean():.3f}({sd:.3f})", len(rows)])
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
