"""CSV ingestion and the command-line front end.

Subcommands: ``test`` (one independence test on a CSV),
``subsample-plan``, ``select-s`` (three ratio-selection rules),
``power`` (first-order, high-dimensional, local threshold),
``simulate`` (scenario families and table presets), and ``bench``.

stdout carries data (JSON by default, CSV on request), stderr carries
diagnostics.  Exit codes: 0 success, 2 invalid configuration or
arguments, 3 structurally unusable data.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledSample, group_by_label, standardize
from .engine import compute_rit
from .errors import DegenerateDataError, RaresigError, ValidationError
from .inference import (
    condition_diagnostic,
    estimate_xi01,
    estimate_xi02,
    estimate_xi10,
    local_power_threshold,
    power_first_order,
    power_highdim,
    pvalue_asymptotic_first,
    pvalue_asymptotic_highdim,
    pvalue_permutation,
)
from .multiclass import (
    MultiClassSpec,
    compute_multi_bit,
    compute_multi_rit,
    estimate_zeta1k,
    multi_asymptotic_variance,
)
from .rng import spawn_seed
from .simulate import (
    MethodConfig,
    ScenarioSpec,
    benchmark_complexity,
    compare_backends,
    figure1_phenomenon,
    kernel_from_name,
    loglog_slope,
    run_erp,
)
from .subsample import (
    compute_bit,
    draw_subsample,
    select_s_power_floor,
    select_s_power_gap,
    select_s_variance,
    thin_controls,
)

__all__ = ["RunConfig", "ingest_csv", "run_test", "main"]


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def ingest_csv(path: str, label_col: str, feature_cols=None):
    """Read a header-first CSV into a labeled sample.

    Rows with a missing or unparseable cell in the selected columns are
    dropped; the second return value counts them.  Labels must parse to
    integers >= 0.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValidationError(f"{path}: missing header row")
        if label_col not in header:
            raise ValidationError(
                f"label column {label_col!r} not found; available: {', '.join(header)}"
            )
        label_idx = header.index(label_col)
        if feature_cols is None:
            feature_cols = [c for c in header if c != label_col]
        missing = [c for c in feature_cols if c not in header]
        if missing:
            raise ValidationError(f"feature columns not found: {', '.join(missing)}")
        if not feature_cols:
            raise ValidationError("no feature columns selected")
        feat_idx = [header.index(c) for c in feature_cols]

        feats = []
        labels = []
        dropped = 0
        for row in reader:
            if len(row) < len(header):
                dropped += 1
                continue
            cells = [row[i].strip() for i in feat_idx]
            lab_cell = row[label_idx].strip()
            if not lab_cell or any(not c for c in cells):
                dropped += 1
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError:
                dropped += 1
                continue
            if not all(math.isfinite(v) for v in values):
                dropped += 1
                continue
            try:
                lab = float(lab_cell)
            except ValueError:
                dropped += 1
                continue
            if lab != int(lab):
                raise ValidationError(f"non-integer label {lab_cell!r}")
            if lab < 0:
                raise ValidationError(f"negative label {lab_cell!r}")
            labels.append(int(lab))
            feats.append(values)
    if not feats:
        raise DegenerateDataError(f"{path}: zero usable rows")
    return LabeledSample(np.array(feats), np.array(labels)), dropped


# ---------------------------------------------------------------------------
# single-test orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything one ``test`` invocation needs."""

    input: str
    label_col: str = "label"
    feature_cols: tuple | None = None
    kernel: str = "kendall"
    kernel_params: dict = field(default_factory=dict)
    method: str = "rit"  # rit | bit
    s: int | None = None
    inference: str = "auto"  # auto | asymptotic | permutation | highdim
    B: int = 999
    alpha: float = 0.05
    seed: int = 0
    standardize: bool = False
    budget: int = 2000
    xi_basis: str = "cases"
    output_format: str = "json"


def _resolve_inference(kind_order: str, requested: str) -> str:
    if requested != "auto":
        return requested
    return "asymptotic" if kind_order == "first" else "permutation"


def _multiclass_test(grouped, kernel, cfg: RunConfig, warnings: list):
    mspec = MultiClassSpec.from_grouped(grouped, kernel.block_orders)
    if cfg.method == "bit":
        plan = draw_subsample(grouped, cfg.s, spawn_seed(cfg.seed, 1), kernel.m0)
        if plan.attempts > 1:
            warnings.append(f"subsample plan needed {plan.attempts} draws")
        stat = compute_multi_bit(grouped, kernel, plan, mspec)
    else:
        stat = compute_multi_rit(grouped, kernel, mspec)
    zetas = [
        estimate_zeta1k(grouped, kernel, mspec, k, cfg.budget, spawn_seed(cfg.seed, 7, k))
        for k in range(grouped.n_classes)
    ]
    var = multi_asymptotic_variance(
        mspec, zetas, s=(cfg.s if cfg.method == "bit" else None)
    )
    from scipy.stats import norm

    scaled = math.sqrt(grouped.counts[1]) * stat.value
    p = max(2 * float(norm.sf(abs(scaled) / math.sqrt(var))), 5e-324)
    return stat, scaled, var, p, "asymptotic_first"


def run_test(config: RunConfig) -> dict:
    """Run one test per the configuration; returns the result object
    serialized by the CLI (all fields JSON-ready)."""
    t0 = time.perf_counter()
    warnings: list = []
    sample, dropped = ingest_csv(config.input, config.label_col, config.feature_cols)
    if dropped:
        warnings.append(f"dropped {dropped} rows with missing or unparseable values")
    if config.standardize:
        sample = standardize(sample)
    grouped = group_by_label(sample)
    n0, n1 = grouped.counts[0], grouped.counts[1]

    params = dict(config.kernel_params)
    if config.kernel.replace("-", "_") == "multi_kendall":
        params.setdefault("n_rare", grouped.n_classes - 1)
    kernel = kernel_from_name(config.kernel, **params)

    if config.method not in ("rit", "bit"):
        raise ValidationError(f"unknown method {config.method!r}")
    if config.method == "bit" and (config.s is None):
        raise ValidationError("method=bit requires --s")

    s = config.s if config.method == "bit" else None
    inference = _resolve_inference(kernel.order, config.inference)
    auto_fallback = config.inference == "auto" and inference == "asymptotic"

    if kernel.n_blocks > 2 or grouped.n_classes > 2:
        stat, scaled, var, p, method = _multiclass_test(grouped, kernel, config, warnings)
    elif inference == "permutation":
        out = pvalue_permutation(sample, kernel, config.B, config.seed, s=s)
        stat_value = out.statistic
        scaled, var, p, method = (
            out.scaled_statistic,
            out.variance_estimate,
            out.p_value,
            out.method,
        )
        stat = None
    else:
        if config.method == "bit":
            plan = draw_subsample(grouped, s, spawn_seed(config.seed, 1), kernel.m0)
            if plan.attempts > 1:
                warnings.append(f"subsample plan needed {plan.attempts} draws")
            stat = compute_bit(grouped, kernel, plan)
            est_data = thin_controls(grouped, plan)
        else:
            stat = compute_rit(grouped, kernel)
            est_data = grouped
        if inference == "asymptotic":
            if kernel.order != "first":
                raise ValidationError(
                    "asymptotic inference requires a first-order kernel; "
                    "use --inference permutation or highdim"
                )
            xi01 = estimate_xi01(
                est_data, kernel, config.budget, spawn_seed(config.seed, 5),
                basis=config.xi_basis,
            )
            if auto_fallback and xi01 <= 0:
                # fully separated data degenerates the plug-in variance;
                # the permutation null still applies
                warnings.append(
                    "projection-variance estimate is zero; fell back to the "
                    "permutation test"
                )
                out = pvalue_permutation(sample, kernel, config.B, config.seed, s=s)
                stat = None  # report the permutation path's own statistic
                stat_value = out.statistic
            elif config.method == "bit":
                xi10 = estimate_xi10(
                    est_data, kernel, config.budget, spawn_seed(config.seed, 6)
                )
                out = pvalue_asymptotic_first(stat, xi01, s=s, xi10=xi10)
            else:
                out = pvalue_asymptotic_first(stat, xi01)
        elif inference == "highdim":
            if kernel.order != "second":
                raise ValidationError("highdim inference requires a second-order kernel")
            xi02 = estimate_xi02(est_data, kernel)
            ratio = condition_diagnostic(est_data, kernel)
            warnings.append(
                f"high-dimensional normality diagnostic ratio {ratio:.3g} "
                "(values near zero support the normal null)"
            )
            out = pvalue_asymptotic_highdim(stat, xi02)
        else:
            raise ValidationError(f"unknown inference {inference!r}")
        scaled, var, p, method = (
            out.scaled_statistic,
            out.variance_estimate,
            out.p_value,
            out.method,
        )

    if stat is not None:
        stat_value = stat.value
        if stat.meta.get("budgeted"):
            warnings.append(
                "statistic used a budgeted subsample of control blocks "
                f"(budget {stat.meta['budget']})"
            )

    result = {
        "statistic": float(stat_value),
        "scaled_statistic": float(scaled),
        "variance_estimate": float(var),
        "p_value": float(p),
        "method": method,
        "n0": int(n0),
        "n1": int(n1),
        "seed": int(config.seed),
        "wall_time_ms": (time.perf_counter() - t0) * 1000.0,
        "warnings": warnings,
    }
    if s is not None:
        result["s"] = int(s)
    if method == "permutation":
        result["B"] = int(config.B)
    return result


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _emit(data, fmt: str, output: str | None) -> None:
    if fmt == "json":
        text = json.dumps(data, sort_keys=True, indent=2, allow_nan=True)
    elif fmt == "csv":
        rows = data if isinstance(data, list) else [data]
        buf = io.StringIO()
        fields = sorted({k for r in rows for k in r})
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        for r in rows:
            writer.writerow(
                {
                    k: (f"{v:.12g}" if isinstance(v, float) else v)
                    for k, v in r.items()
                }
            )
        text = buf.getvalue().rstrip("\n")
    else:
        raise ValidationError(f"unknown output format {fmt!r}")
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _scalar_out(value, output: str | None) -> None:
    text = f"{value:.12g}" if isinstance(value, float) else str(value)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# simulate presets
# ---------------------------------------------------------------------------


def _preset_table3(kind: str, eg: int, args) -> list:
    family = "first_order_eg1" if eg == 1 else "first_order_eg2"
    n = args.n or 100_000
    n1 = args.n1 or 50
    m = args.M or 1000
    n1s_values = args.n1s or [2000]
    base = ScenarioSpec(family, n=n, n1=n1, M=m, alpha=args.alpha, seed=args.seed)
    rit = MethodConfig(kernel=kind, mode="rit", xi_basis="controls",
                       budget=args.budget)
    rows = []
    size_rep = run_erp(base.null(), rit, args.threads)
    rows.append({**size_rep.row(), "setting": "size"})
    power_rep = run_erp(base, rit, args.threads)
    rows.append({**power_rep.row(), "setting": "power"})
    for n1s in n1s_values:
        s_val = max(2, int(round(n1s / n1)))
        bit = MethodConfig(kernel=kind, mode="bit", s=s_val, xi_basis="controls",
                           budget=args.budget)
        rep = run_erp(base, bit, args.threads)
        rows.append({**rep.row(), "setting": "power", "n1s": s_val * n1})
    return rows


def _preset_table_d4(args) -> list:
    full = args.full
    n = args.n or (10_000 if full else 2_050)
    n1 = args.n1 or 50
    m = args.M or (1000 if full else 200)
    b = args.B or 199
    s_val = args.s or max(2, int(round((args.n1s[0] if args.n1s else 1000) / n1)))
    base = ScenarioSpec(
        "second_order_eg1", n=n, n1=n1, p=args.p or 50, M=m, alpha=args.alpha,
        seed=args.seed,
    )
    bit_perm = MethodConfig(kernel="dcov", mode="bit", s=s_val,
                            inference="permutation", B=b)
    rows = []
    rows.append({**run_erp(base.null(), bit_perm, args.threads).row(),
                 "setting": "size"})
    rows.append({**run_erp(base, bit_perm, args.threads).row(), "setting": "power"})
    return rows


def _run_simulate(args) -> None:
    fam = args.family.replace("-", "_")
    if fam == "figure1":
        rows = figure1_phenomenon(
            M=args.M or 500, alpha=args.alpha, seed=args.seed,
            n1=args.n1 or 100, effect=args.effect if args.effect is not None else 0.2,
        )
    elif fam.startswith("table3_"):
        _, kind, eg = fam.split("_")
        rows = _preset_table3(kind, int(eg[-1]), args)
    elif fam == "table_d4_dcov_eg1":
        rows = _preset_table_d4(args)
    else:
        scenario = ScenarioSpec(
            fam,
            n=args.n or 10_000,
            n1=args.n1 or 50,
            p=args.p or 1,
            effect=args.effect,
            M=args.M or (1000 if args.full else 200),
            alpha=args.alpha,
            seed=args.seed,
            params={
                k: v
                for k, v in (("delta", args.delta), ("delta0", args.delta0))
                if v is not None
            },
        )
        method = MethodConfig(
            kernel=args.kernel.replace("-", "_"),
            mode=args.method,
            s=args.s,
            inference=args.inference,
            B=args.B or 199,
            budget=args.budget,
            xi_basis="controls",
        )
        rows = [run_erp(scenario, method, args.threads).row()]
    _emit(rows, args.format, args.output)


def _run_bench(args) -> None:
    if args.compare_backends:
        rows = compare_backends(sizes=tuple(args.sizes or [500, 1000]),
                                p=args.p or 10, trials=args.trials, seed=args.seed)
        _emit(rows, args.format, args.output)
        return
    rows = benchmark_complexity(
        args.kernel.replace("-", "_"),
        args.sizes or [1000, 2000, 4000],
        mode=args.mode,
        n1=args.n1,
        s_values=args.s_grid,
        trials=args.trials,
        p=args.p,
        seed=args.seed,
    )
    xs = [r["x"] for r in rows]
    ts = [r["median_seconds"] for r in rows]
    out = {"rows": rows, "loglog_slope": loglog_slope(xs, ts)}
    if args.format == "csv":
        _emit(rows, "csv", args.output)
        print(f"loglog_slope,{out['loglog_slope']:.12g}", file=sys.stderr)
    else:
        _emit(out, "json", args.output)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _int_list(text: str):
    return [int(tok) for tok in text.split(",") if tok]


def _global_flags(parser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d if suppress else 0)
    parser.add_argument(
        "--threads", type=int,
        default=d if suppress else int(os.environ.get("RARE_SIG_THREADS", "1")),
    )
    parser.add_argument("--output", default=d,
                        help="write results to this path (default stdout)")
    parser.add_argument("--format", choices=("json", "csv"),
                        default=d if suppress else "json")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="raresig",
        description="Independence tests for rare-event class labels.",
    )
    _global_flags(ap, suppress=False)
    # accept the global flags after the subcommand too
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run one independence test on a CSV file",
                       parents=[common])
    t.add_argument("--input", required=True)
    t.add_argument("--label-col", default="label")
    t.add_argument("--features", help="comma-separated feature columns (default: all others)")
    t.add_argument("--kernel", default="kendall",
                   choices=("pearson", "kendall", "imbalanced-kendall", "dcov",
                            "ipcov", "multi-kendall"))
    t.add_argument("--m", type=int, default=2, help="control block size (imbalanced-kendall)")
    t.add_argument("--c-sigma2", type=float, default=1.0)
    t.add_argument("--method", default="rit", choices=("rit", "bit"))
    t.add_argument("--s", type=int)
    t.add_argument("--inference", default="auto",
                   choices=("auto", "asymptotic", "permutation", "highdim"))
    t.add_argument("--B", type=int, default=999)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--standardize", action="store_true")
    t.add_argument("--budget", type=int, default=2000)
    t.add_argument("--xi-basis", default="cases", choices=("cases", "controls"))

    sp = sub.add_parser("subsample-plan", help="draw a control-inclusion plan",
                        parents=[common])
    sp.add_argument("--n0", type=int, required=True)
    sp.add_argument("--n1", type=int, required=True)
    sp.add_argument("--s", type=int, required=True)
    sp.add_argument("--min-include", type=int, default=1)

    ss = sub.add_parser("select-s", help="choose the sampling ratio",
                        parents=[common])
    ss_sub = ss.add_subparsers(dest="rule", required=True)
    v = ss_sub.add_parser("variance")
    v.add_argument("--n1", type=int, required=True)
    v.add_argument("--epsilon", type=float, required=True)
    pf = ss_sub.add_parser("power-floor")
    pg = ss_sub.add_parser("power-gap")
    for q in (pf, pg):
        q.add_argument("--n1", type=int, required=True)
        q.add_argument("--m0", type=int, default=1)
        q.add_argument("--m1", type=int, default=1)
        q.add_argument("--xi01", type=float, required=True)
        q.add_argument("--xi10", type=float, required=True)
        q.add_argument("--mu0", type=float, required=True)
        q.add_argument("--alpha", type=float, default=0.05)
    pf.add_argument("--beta", type=float, required=True)
    pg.add_argument("--epsilon", type=float, required=True)

    pw = sub.add_parser("power", help="theoretical power calculators",
                        parents=[common])
    pw_sub = pw.add_subparsers(dest="calc", required=True)
    fo = pw_sub.add_parser("first-order")
    fo.add_argument("--mu0", type=float, required=True)
    fo.add_argument("--n1", type=int, required=True)
    fo.add_argument("--m0", type=int, default=1)
    fo.add_argument("--m1", type=int, default=1)
    fo.add_argument("--xi01", type=float, required=True)
    fo.add_argument("--alpha", type=float, default=0.05)
    fo.add_argument("--s", type=int)
    fo.add_argument("--xi10", type=float)
    hd = pw_sub.add_parser("highdim")
    hd.add_argument("--mu0", type=float, required=True)
    hd.add_argument("--n1", type=int, required=True)
    hd.add_argument("--m1", type=int, default=2)
    hd.add_argument("--xi02", type=float, required=True)
    hd.add_argument("--alpha", type=float, default=0.05)
    lt = pw_sub.add_parser("local-threshold")
    lt.add_argument("--beta", type=float, required=True)
    lt.add_argument("--alpha", type=float, default=0.05)
    lt.add_argument("--mu-g1", type=float, required=True)
    lt.add_argument("--xi", type=float, required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo studies and table presets",
                         parents=[common])
    sim.add_argument("--family", required=True)
    sim.add_argument("--n", type=int)
    sim.add_argument("--n1", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--effect", type=float)
    sim.add_argument("--delta", type=float)
    sim.add_argument("--delta0", type=float)
    sim.add_argument("--M", type=int)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--kernel", default="kendall")
    sim.add_argument("--method", default="rit", choices=("rit", "bit", "classical"))
    sim.add_argument("--s", type=int)
    sim.add_argument("--n1s", type=_int_list, help="comma-separated s*n1 budgets")
    sim.add_argument("--inference", default="auto")
    sim.add_argument("--B", type=int)
    sim.add_argument("--budget", type=int, default=2000)
    sim.add_argument("--full", action="store_true",
                     help="run at full published scale instead of desk scale")

    be = sub.add_parser("bench", help="runtime scaling benchmarks",
                        parents=[common])
    be.add_argument("--kernel", default="dcov")
    be.add_argument("--sizes", type=_int_list)
    be.add_argument("--mode", default="rit", choices=("rit", "bit"))
    be.add_argument("--n1", type=int)
    be.add_argument("--s-grid", type=_int_list)
    be.add_argument("--trials", type=int, default=5)
    be.add_argument("--p", type=int)
    be.add_argument("--compare-backends", action="store_true")

    return ap


def _dispatch(args) -> None:
    if args.command == "test":
        kernel_params = {}
        if args.kernel == "imbalanced-kendall":
            kernel_params["m"] = args.m
        if args.kernel == "ipcov":
            kernel_params["c_sigma2"] = args.c_sigma2
        cfg = RunConfig(
            input=args.input,
            label_col=args.label_col,
            feature_cols=tuple(args.features.split(",")) if args.features else None,
            kernel=args.kernel,
            kernel_params=kernel_params,
            method=args.method,
            s=args.s,
            inference=args.inference,
            B=args.B,
            alpha=args.alpha,
            seed=args.seed,
            standardize=args.standardize,
            budget=args.budget,
            xi_basis=args.xi_basis,
            output_format=args.format,
        )
        _emit(run_test(cfg), args.format, args.output)
    elif args.command == "subsample-plan":
        from .data import LabeledSample as _LS

        x = np.zeros((args.n0 + args.n1, 1))
        labels = np.r_[np.zeros(args.n0, np.int64), np.ones(args.n1, np.int64)]
        grouped = group_by_label(_LS(x, labels))
        plan = draw_subsample(grouped, args.s, args.seed, args.min_include)
        _emit(
            {
                "s": plan.s,
                "n0": args.n0,
                "n1": args.n1,
                "inclusion_probability": args.s * args.n1 / args.n0,
                "expected_count": args.s * args.n1,
                "realized_count": plan.realized_count,
                "attempts": plan.attempts,
                "seed": args.seed,
            },
            args.format,
            args.output,
        )
    elif args.command == "select-s":
        if args.rule == "variance":
            value = select_s_variance(args.n1, args.epsilon)
        elif args.rule == "power-floor":
            value = select_s_power_floor(args.n1, args.m0, args.m1, args.xi01,
                                         args.xi10, args.mu0, args.alpha, args.beta)
        else:
            value = select_s_power_gap(args.n1, args.m0, args.m1, args.xi01,
                                       args.xi10, args.mu0, args.alpha, args.epsilon)
        _scalar_out(value, args.output)
    elif args.command == "power":
        if args.calc == "first-order":
            value = power_first_order(args.mu0, args.n1, args.m0, args.m1,
                                      args.xi01, args.alpha, s=args.s, xi10=args.xi10)
        elif args.calc == "highdim":
            value = power_highdim(args.mu0, args.n1, args.m1, args.xi02, args.alpha)
        else:
            value = local_power_threshold(args.beta, args.alpha, args.mu_g1, args.xi)
        _scalar_out(value, args.output)
    elif args.command == "simulate":
        _run_simulate(args)
    elif args.command == "bench":
        _run_bench(args)
    else:  # pragma: no cover - argparse enforces the choices
        raise ValidationError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        _dispatch(args)
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, RaresigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
