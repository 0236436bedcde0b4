"""Command-line interface: fit models, test contrast families, run experiments.

Data files are long-format CSV with header ``cluster_id,y,x1,...,xp``: one row
per observation, rows of one cluster grouped by the shared cluster_id (file
order within a cluster is preserved).  Reports are emitted as aligned text,
CSV, or JSON, and are byte-stable for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

import numpy as np

from .data import ClusteredDataset, Cluster, ContrastFamily, build_contrasts, validate_dataset
from .harness import PRESETS, preset_config, run_experiment, ExperimentConfig, _SIM_QMC
from .inference import METHODS, evaluate_tests
from .models import (
    FitError,
    FitOptions,
    gamma_cl_fit,
    mvn_cl_fit,
    probit_cl_fit,
    quadexp_cl_fit,
)
from .mvnprob import QmcConfig, std_normal_cdf
from .simgen import Exchangeable, ScenarioSpec, Unstructured, generate

FITTERS = {
    "mvn": mvn_cl_fit,
    "probit": probit_cl_fit,
    "quadexp": quadexp_cl_fit,
    "gamma": gamma_cl_fit,
}


# ---------------------------------------------------------------------------
# clustered CSV input/output


def _infer_kind(values: np.ndarray) -> str:
    if np.isin(values, (0.0, 1.0)).all():
        return "binary01"
    if np.isin(values, (-1.0, 1.0)).all():
        return "binary_pm1"
    if (values > 0).all():
        return "positive"
    return "continuous"


def read_clustered_csv(path: str) -> ClusteredDataset:
    """Parse a long-format clustered CSV; malformed rows fail with their
    line number so problems can be fixed in place."""
    groups: dict[str, list[tuple[np.ndarray, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "cluster_id" or header[1] != "y":
            raise ValueError(
                f"{path}: header must be cluster_id,y,x1,...,xp; got {','.join(header)}"
            )
        p = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            cid = row[0].strip()
            fields = [f.strip() for f in row[1:]]
            if any(f == "" for f in fields) or cid == "":
                raise ValueError(f"{path}:{lineno}: missing field")
            try:
                nums = [float(f) for f in fields]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed numeric field") from None
            groups.setdefault(cid, []).append((np.array(nums[1:]), nums[0]))
    if not groups:
        raise ValueError(f"{path}: no data rows")
    clusters = []
    all_y = []
    for cid, rows in groups.items():
        x = np.vstack([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        all_y.append(y)
        clusters.append(Cluster(id=cid, y=y, x=x))
    kind = _infer_kind(np.concatenate(all_y))
    return ClusteredDataset(tuple(clusters), kind, p)


def write_clustered_csv(d: ClusteredDataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "y"] + [f"x{j + 1}" for j in range(d.p)])
        for c in d.clusters:
            for yi, xi in zip(c.y, c.x):
                writer.writerow([c.id, repr(float(yi))] + [repr(float(v)) for v in xi])


# ---------------------------------------------------------------------------
# report rendering


def _emit(rows: list[dict], fmt: str, out) -> None:
    """Render a list of flat records as aligned text, CSV, or JSON."""
    if not rows:
        return
    if fmt == "json":
        json.dump(rows, out, indent=2, default=str)
        out.write("\n")
        return
    cols = list(rows[0].keys())
    if fmt == "csv":
        writer = csv.writer(out)
        writer.writerow(cols)
        for r in rows:
            writer.writerow([r[c] for c in cols])
        return
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    out.write("  ".join(c.ljust(widths[c]) for c in cols).rstrip() + "\n")
    for r in rows:
        out.write("  ".join(str(r[c]).ljust(widths[c]) for c in cols).rstrip() + "\n")


def _fmt(x: float, digits: int = 6) -> str:
    return f"{x:.{digits}g}"


# ---------------------------------------------------------------------------
# subcommands


def _coef_labels(model: str, p: int) -> list[str]:
    labels = [f"x{j + 1}" for j in range(p)]
    if model == "quadexp":
        labels.append("w")
    return labels


def cmd_fit(args) -> int:
    data = read_clustered_csv(args.data)
    report = validate_dataset(data)
    if not report.ok:
        for msg in report.messages():
            print(f"error: {msg}", file=sys.stderr)
        return 1
    opts = FitOptions(naive=args.naive)
    try:
        if args.model == "quadexp":
            fit = FITTERS[args.model](data, opts, cluster_mean_covariates=args.cluster_means)
        else:
            fit = FITTERS[args.model](data, opts)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    se = np.sqrt(np.diag(fit.gamma_hat) / data.n)
    rows = []
    for name, est, s in zip(_coef_labels(args.model, data.p), fit.theta_hat, se):
        z = est / s if s > 0 else np.inf
        rows.append(
            {
                "coefficient": name,
                "estimate": _fmt(est),
                "se": _fmt(s),
                "p_value": _fmt(2.0 * std_normal_cdf(-abs(z)), 4),
            }
        )
    if args.model == "gamma":
        rows.append(
            {"coefficient": "nu", "estimate": _fmt(fit.nuisance["nu"]), "se": "", "p_value": ""}
        )
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        _emit(rows, args.format, out)
        meta = f"# n={data.n} converged={fit.converged} iterations={fit.iterations} loglik={_fmt(fit.loglik, 8)}"
        if args.format == "text":
            out.write(meta + "\n")
    finally:
        if args.output:
            out.close()
    if not fit.converged:
        print("error: fit did not converge", file=sys.stderr)
        return 1
    return 0


def _parse_contrasts(spec: str, p: int) -> ContrastFamily:
    if spec == "all-pairwise":
        return build_contrasts("all_pairwise", p)
    if spec.startswith("many-to-one:"):
        return build_contrasts("many_to_one", p, baseline=int(spec.split(":", 1)[1]))
    if spec.startswith("file:"):
        path = spec.split(":", 1)[1]
        labels, rows = [], []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                labels.append(row[0].strip())
                try:
                    rows.append([float(v) for v in row[1:]])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: malformed contrast weight") from None
        m = np.array(rows)
        if m.ndim != 2 or m.shape[1] != p:
            raise ValueError(f"{path}: contrast rows must have {p} weights")
        return ContrastFamily(m, tuple(labels), "custom")
    raise ValueError(f"unknown contrast spec {spec!r}")


def cmd_test(args) -> int:
    data = read_clustered_csv(args.data)
    report = validate_dataset(data)
    if not report.ok:
        for msg in report.messages():
            print(f"error: {msg}", file=sys.stderr)
        return 1
    methods = tuple(m.strip() for m in args.methods.split(","))
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        print(f"error: unknown methods {unknown}; choose from {METHODS}", file=sys.stderr)
        return 1
    try:
        cf = _parse_contrasts(args.contrasts, data.p)
        fit = FITTERS[args.model](data, FitOptions(naive=args.naive))
        qmc = QmcConfig(
            points_per_shift=args.qmc_points, shifts=args.qmc_shifts, seed=args.seed
        )
        result = evaluate_tests(
            fit, cf, data.n, args.alpha, methods, qmc, mnq_adjusted_p="mnq" in methods
        )
    except (FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rows = []
    for i, label in enumerate(result.labels):
        row = {"hypothesis": label, "t": _fmt(result.t_stats[i])}
        for m in methods:
            dec = result.decisions[m]
            row[m] = "R" if dec.reject[i] else "A"
            if dec.adjusted_p is not None:
                row[f"{m}_adj_p"] = _fmt(dec.adjusted_p[i], 4)
        rows.append(row)
    thresholds = [
        {
            "method": m,
            "threshold": _fmt(result.decisions[m].threshold)
            if result.decisions[m].threshold is not None
            else "step-down",
            "global_reject": result.decisions[m].global_reject,
        }
        for m in methods
    ]
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        if args.format == "json":
            json.dump({"hypotheses": rows, "methods": thresholds}, out, indent=2, default=str)
            out.write("\n")
        else:
            _emit(rows, args.format, out)
            out.write("\n" if args.format == "text" else "")
            _emit(thresholds, args.format, out)
    finally:
        if args.output:
            out.close()
    return 0


def _config_from_json(path: str, args) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    model = raw["model"]
    corr = raw.get("correlation")
    if corr is not None:
        if corr.get("type") == "exchangeable":
            corr = Exchangeable(corr.get("sigma2", 1.0), corr.get("rho", 0.0))
        elif corr.get("type") == "unstructured":
            corr = Unstructured(np.array(corr["sigma"]))
        else:
            raise ValueError(f"unknown correlation type {corr!r}")
    m = raw["m"]
    scenario = ScenarioSpec(
        model=model,
        n=int(raw["n"]),
        m=tuple(m) if isinstance(m, list) else int(m),
        p=int(raw["p"]),
        beta=np.array(raw["beta"], dtype=float),
        correlation=corr,
        w=float(raw.get("w", 0.0)),
        nu=float(raw.get("nu", 1.0)),
        seed=int(raw.get("seed", args.seed)),
        x_row_corr=float(raw.get("x_row_corr", 0.0)),
        x_scale=float(raw.get("x_scale", 1.0)),
    )
    cspec = raw.get("contrasts", {"kind": "many_to_one", "baseline": 1})
    if cspec["kind"] == "many_to_one":
        contrasts = build_contrasts("many_to_one", scenario.p, baseline=cspec.get("baseline", 1))
    else:
        contrasts = build_contrasts("all_pairwise", scenario.p)
    return ExperimentConfig(
        scenario=scenario,
        contrasts=contrasts,
        truth_kind=raw.get("truth_kind", "null"),
        replicates=int(raw.get("replicates", args.replicates)),
        alpha=float(raw.get("alpha", 0.05)),
        procedures=tuple(raw.get("procedures", ("mnq", "naive", "bonferroni", "sidak", "holm", "scheffe"))),
        qmc=_SIM_QMC,
        workers=args.workers,
        compute_efficiency=bool(raw.get("compute_efficiency", model == "mvn")),
    )


def cmd_simulate(args) -> int:
    if args.list_presets:
        for name in PRESETS:
            print(name)
        return 0
    if bool(args.preset) == bool(args.config):
        print("error: give exactly one of --preset or --config", file=sys.stderr)
        return 1
    try:
        if args.preset:
            cfg = preset_config(
                args.preset,
                replicates=args.replicates,
                seed=args.seed,
                workers=args.workers,
                contrast_kind=args.contrast_kind,
            )
        else:
            cfg = _config_from_json(args.config, args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = run_experiment(cfg)
    scenario_name = args.preset or args.config
    rows = []
    for m, ps in summary.per_procedure.items():
        rows.append(
            {
                "scenario": scenario_name,
                "procedure": m,
                "metric": ps.metric,
                "estimate": _fmt(ps.estimate),
                "mc_se": _fmt(ps.mc_std_error),
                "replicates": summary.replicates_completed,
            }
        )
        if ps.ind_power_sum is not None and summary.truth_kind != "null":
            rows.append(
                {
                    "scenario": scenario_name,
                    "procedure": m,
                    "metric": "ind_power_sum",
                    "estimate": _fmt(ps.ind_power_sum),
                    "mc_se": "",
                    "replicates": summary.replicates_completed,
                }
            )
    if summary.efficiency is not None:
        rows.append(
            {
                "scenario": scenario_name,
                "procedure": "mcle_vs_mle",
                "metric": "efficiency",
                "estimate": _fmt(summary.efficiency),
                "mc_se": _fmt(summary.efficiency_se),
                "replicates": summary.replicates_completed,
            }
        )
    if summary.failures:
        rows.append(
            {
                "scenario": scenario_name,
                "procedure": "",
                "metric": "nonconverged_replicates",
                "estimate": summary.failures,
                "mc_se": "",
                "replicates": summary.replicates_completed,
            }
        )
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        _emit(rows, args.format, out)
    finally:
        if args.output:
            out.close()
    return 0


def cmd_generate(args) -> int:
    cfg = preset_config(args.preset, seed=args.seed)
    data = generate(cfg.scenario, args.seed)
    write_clustered_csv(data, args.output)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clmc",
        description="Composite-likelihood fitting and simultaneous inference for clustered data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = dict(default="text", choices=("text", "csv", "json"))

    p_fit = sub.add_parser("fit", help="fit a model to a clustered CSV file")
    p_fit.add_argument("--model", required=True, choices=tuple(FITTERS))
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--naive", action="store_true",
                       help="use the correlation-ignoring covariance H^-1")
    p_fit.add_argument("--cluster-means", action="store_true",
                       help="association model: use cluster-mean covariates")
    p_fit.add_argument("--format", **common)
    p_fit.add_argument("--output")
    p_fit.set_defaults(func=cmd_fit)

    p_test = sub.add_parser("test", help="simultaneous contrast tests on a fitted model")
    p_test.add_argument("--model", required=True, choices=tuple(FITTERS))
    p_test.add_argument("--data", required=True)
    p_test.add_argument("--contrasts", required=True,
                        help="many-to-one:B | all-pairwise | file:PATH")
    p_test.add_argument("--alpha", type=float, default=0.05)
    p_test.add_argument("--methods", default="mnq,bonferroni,sidak,holm,scheffe")
    p_test.add_argument("--naive", action="store_true")
    p_test.add_argument("--seed", type=int, default=20240801)
    p_test.add_argument("--qmc-points", type=int, default=4096)
    p_test.add_argument("--qmc-shifts", type=int, default=12)
    p_test.add_argument("--format", **common)
    p_test.add_argument("--output")
    p_test.set_defaults(func=cmd_test)

    p_sim = sub.add_parser("simulate", help="run a replicated experiment")
    p_sim.add_argument("--preset")
    p_sim.add_argument("--config", help="JSON experiment description")
    p_sim.add_argument("--list-presets", action="store_true")
    p_sim.add_argument("--replicates", type=int, default=2000)
    p_sim.add_argument("--seed", type=int, default=1234)
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--contrast-kind", default="many_to_one",
                       choices=("many_to_one", "all_pairwise"))
    p_sim.add_argument("--format", **common)
    p_sim.add_argument("--output")
    p_sim.set_defaults(func=cmd_simulate)

    p_gen = sub.add_parser("generate", help="write one simulated dataset as CSV")
    p_gen.add_argument("--preset", required=True)
    p_gen.add_argument("--seed", type=int, default=1234)
    p_gen.add_argument("--output", required=True)
    p_gen.set_defaults(func=cmd_generate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
