"""Monte Carlo harness: scenario generators, empirical rejection
probabilities, the imbalance phenomenon sweep, and runtime benchmarks.

Replications are seeded individually (``spawn_rng(seed, rep, domain)``),
so an empirical rejection probability is a pure function of the
scenario and method configuration: the same numbers come out for any
worker count or execution order.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import norm

from . import _accel
from .data import GroupedSample, LabeledSample, group_by_label
from .engine import compute_classical, compute_rit
from .errors import ValidationError
from .inference import (
    estimate_xi01,
    estimate_xi02,
    estimate_xi10,
    pvalue_asymptotic_first,
    pvalue_asymptotic_highdim,
    pvalue_permutation,
)
from .kernels import (
    KernelSpec,
    dcov_kernel,
    imbalanced_kendall_kernel,
    ipcov_kernel,
    kendall_kernel,
    multi_kendall_kernel,
    pearson_kernel,
)
from .multiclass import (
    MultiClassSpec,
    compute_multi_rit,
    estimate_zeta1k,
    multi_asymptotic_variance,
)
from .rng import spawn_rng, spawn_seed
from .subsample import compute_bit, draw_subsample, thin_controls

__all__ = [
    "ScenarioSpec",
    "MethodConfig",
    "ErpReport",
    "generate",
    "run_erp",
    "figure1_phenomenon",
    "benchmark_complexity",
    "compare_backends",
    "loglog_slope",
    "kernel_from_name",
    "classical_pvalue",
    "SCENARIO_FAMILIES",
]

DEFAULT_EFFECTS = {
    "intro_fixed_p": 0.2,
    "intro_decreasing_p": 0.2,
    "first_order_eg1": 0.3,
    "first_order_eg2": 0.3,
    "second_order_eg1": 0.4,
    "second_order_eg2": 0.15,
    "mixture_local": 1.0,  # location of the contaminating component
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Synthetic-data configuration for one Monte Carlo study."""

    family: str
    n: int
    n1: int
    p: int = 1
    effect: float | None = None
    params: dict = field(default_factory=dict)
    M: int = 1000
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in DEFAULT_EFFECTS:
            raise ValidationError(f"unknown scenario family {self.family!r}")
        if not 1 <= self.n1 <= self.n:
            raise ValidationError("need 1 <= n1 <= n")

    @property
    def effect_size(self) -> float:
        return DEFAULT_EFFECTS[self.family] if self.effect is None else self.effect

    def null(self) -> "ScenarioSpec":
        """The matching no-dependence scenario (zero effect)."""
        return replace(self, effect=0.0)


@lru_cache(maxsize=8)
def _ar1_cholesky(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return np.linalg.cholesky(rho ** np.abs(idx[:, None] - idx[None, :]))


def _exact_count_labels(n: int, n1: int, rng) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.choice(n, size=n1, replace=False)] = 1
    return labels


def _adjust_to_count(labels: np.ndarray, n1: int, rng) -> np.ndarray:
    """Flip uniformly chosen majority-side labels until exactly n1 cases
    remain; the flip set is a deterministic function of the stream."""
    labels = labels.copy()
    cases = int(labels.sum())
    if cases > n1:
        drop = rng.choice(np.flatnonzero(labels == 1), size=cases - n1, replace=False)
        labels[drop] = 0
    elif cases < n1:
        add = rng.choice(np.flatnonzero(labels == 0), size=n1 - cases, replace=False)
        labels[add] = 1
    return labels


def _gen_shift_1d(spec: ScenarioSpec, rng, exact: bool) -> LabeledSample:
    # cases N(0,1), controls N(effect,1) for the main families;
    # the intro families shift the cases instead.
    n, n1 = spec.n, spec.n1
    shift_cases = spec.family.startswith("intro")
    if spec.family == "intro_fixed_p":
        labels = (rng.random(n) < 0.5).astype(np.int64)
        if labels.sum() == 0:  # vanishing probability, keep the sample valid
            labels[rng.integers(n)] = 1
        elif labels.sum() == n:
            labels[rng.integers(n)] = 0
    elif exact:
        labels = _exact_count_labels(n, n1, rng)
    else:
        labels = (rng.random(n) < n1 / n).astype(np.int64)
    x = rng.standard_normal(n)
    eff = spec.effect_size
    if shift_cases:
        x = x + eff * (labels == 1)
    else:
        x = x + eff * (labels == 0)
    return LabeledSample(x[:, None], labels)


def _gen_logistic_1d(spec: ScenarioSpec, rng) -> LabeledSample:
    n, n1 = spec.n, spec.n1
    x = rng.standard_normal(n)
    beta0 = math.log(n1 / (n - n1))
    prob = 1.0 / (1.0 + np.exp(-(beta0 + spec.effect_size * x)))
    labels = (rng.random(n) < prob).astype(np.int64)
    labels = _adjust_to_count(labels, n1, rng)
    return LabeledSample(x[:, None], labels)


def _gen_highdim_shift(spec: ScenarioSpec, rng) -> LabeledSample:
    n, n1, p = spec.n, spec.n1, spec.p
    p1 = int(spec.params.get("p1", 10))
    chol = _ar1_cholesky(p, spec.params.get("rho", 0.5))
    labels = _exact_count_labels(n, n1, rng)
    x = rng.standard_normal((n, p)) @ chol.T
    shift = np.zeros(p)
    shift[:p1] = spec.effect_size
    x[labels == 0] += shift
    return LabeledSample(x, labels)


def _gen_highdim_logistic(spec: ScenarioSpec, rng) -> LabeledSample:
    n, n1, p = spec.n, spec.n1, spec.p
    n_active = int(spec.params.get("p1", 10))
    chol = _ar1_cholesky(p, spec.params.get("rho", 0.5))
    x = rng.standard_normal((n, p)) @ chol.T
    beta = np.zeros(p)
    beta[:n_active] = spec.effect_size
    beta0 = math.log(n1 / (n - n1))
    prob = 1.0 / (1.0 + np.exp(-(beta0 + x @ beta)))
    labels = (rng.random(n) < prob).astype(np.int64)
    labels = _adjust_to_count(labels, n1, rng)
    return LabeledSample(x, labels)


def _gen_mixture(spec: ScenarioSpec, rng) -> LabeledSample:
    n, n1 = spec.n, spec.n1
    delta = spec.params.get("delta")
    if delta is None:
        delta0 = spec.params.get("delta0", 0.0)
        delta = delta0 / math.sqrt(n1)
    if not 0.0 <= delta <= 1.0:
        raise ValidationError(f"mixture weight {delta} outside [0, 1]")
    labels = _exact_count_labels(n, n1, rng)
    x = rng.standard_normal(n)
    case_rows = np.flatnonzero(labels == 1)
    contaminated = case_rows[rng.random(n1) < delta]
    x[contaminated] += spec.effect_size
    return LabeledSample(x[:, None], labels)


SCENARIO_FAMILIES = tuple(DEFAULT_EFFECTS)


def generate(spec: ScenarioSpec, rep: int) -> LabeledSample:
    """Replication ``rep`` of the scenario (deterministic in seed, rep)."""
    rng = spawn_rng(spec.seed, rep, 0)
    fam = spec.family
    if fam == "intro_fixed_p":
        return _gen_shift_1d(spec, rng, exact=False)
    if fam == "intro_decreasing_p":
        return _gen_shift_1d(spec, rng, exact=True)
    if fam == "first_order_eg1":
        return _gen_shift_1d(spec, rng, exact=True)
    if fam == "first_order_eg2":
        return _gen_logistic_1d(spec, rng)
    if fam == "second_order_eg1":
        return _gen_highdim_shift(spec, rng)
    if fam == "second_order_eg2":
        return _gen_highdim_logistic(spec, rng)
    if fam == "mixture_local":
        return _gen_mixture(spec, rng)
    raise ValidationError(f"unknown scenario family {fam!r}")


# ---------------------------------------------------------------------------
# method configuration and single-replication evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodConfig:
    """One (statistic, inference) combination to run inside a study."""

    kernel: str = "kendall"
    mode: str = "rit"  # rit | bit | classical
    s: int | None = None
    inference: str = "auto"  # auto | asymptotic | permutation | highdim
    B: int = 199
    budget: int = 2000
    xi_basis: str = "controls"
    kernel_params: dict = field(default_factory=dict)

    def label(self) -> str:
        bits = [self.kernel, self.mode]
        if self.s is not None:
            bits.append(f"s={self.s}")
        bits.append(self.resolved_inference())
        return ":".join(bits)

    def resolved_inference(self) -> str:
        if self.mode == "classical":
            return "classical"
        if self.inference != "auto":
            return self.inference
        spec = kernel_from_name(self.kernel, **self.kernel_params)
        return "asymptotic" if spec.order == "first" else "permutation"


def kernel_from_name(name: str, **params) -> KernelSpec:
    name = name.replace("-", "_")
    if name == "pearson":
        return pearson_kernel()
    if name == "kendall":
        return kendall_kernel()
    if name == "imbalanced_kendall":
        return imbalanced_kendall_kernel(int(params.get("m", 2)))
    if name == "dcov":
        return dcov_kernel()
    if name == "ipcov":
        return ipcov_kernel(float(params.get("c_sigma2", 1.0)))
    if name == "multi_kendall":
        return multi_kendall_kernel(int(params.get("n_rare", 1)))
    raise ValidationError(f"unknown kernel name {name!r}")


def classical_pvalue(
    sample: LabeledSample, kind: str, B: int = 199, seed: int = 0
) -> float:
    """P-value for the classical pooled statistic.

    Pearson and the pooled sign statistic use their normal nulls (the
    latter with plug-in class ratio); the pairwise statistics use label
    permutation.
    """
    n = sample.n
    if kind == "pearson":
        r = compute_classical(sample, "pearson")
        return float(2 * norm.sf(abs(r) * math.sqrt(n)))
    if kind == "kendall":
        tau = compute_classical(sample, "kendall")
        p1 = float((sample.labels == 1).mean())
        sd = math.sqrt(4.0 * p1 * (1 - p1) / 3.0)
        return float(2 * norm.sf(abs(tau) * math.sqrt(n) / sd))
    if kind in ("dcov", "ipcov"):
        obs = abs(compute_classical(sample, kind))
        labels = sample.labels
        count = 0
        for b in range(1, B + 1):
            rng = spawn_rng(seed, 2, b)
            perm = sample.with_labels(labels[rng.permutation(n)])
            count += abs(compute_classical(perm, kind)) >= obs
        return (1 + count) / (B + 1)
    raise ValidationError(f"unknown classical statistic {kind!r}")


def _multiclass_pvalue(
    grouped: GroupedSample, kernel: KernelSpec, method: MethodConfig, seed: int
) -> float:
    stat = compute_multi_rit(grouped, kernel)
    spec = MultiClassSpec.from_grouped(grouped, kernel.block_orders)
    zetas = [None] + [
        estimate_zeta1k(grouped, kernel, spec, k, method.budget, spawn_seed(seed, 7, k))
        for k in range(1, grouped.n_classes)
    ]
    var = multi_asymptotic_variance(spec, zetas)
    z = math.sqrt(grouped.counts[1]) * stat.value / math.sqrt(var)
    return float(2 * norm.sf(abs(z)))


def evaluate_replication(
    sample: LabeledSample, method: MethodConfig, seed: int
) -> float:
    """P-value of the configured test on one generated sample."""
    if method.mode == "classical":
        return classical_pvalue(sample, method.kernel, method.B, seed)
    kernel = kernel_from_name(method.kernel, **method.kernel_params)
    inference = method.resolved_inference()
    if inference == "permutation":
        s = method.s if method.mode == "bit" else None
        out = pvalue_permutation(sample, kernel, method.B, seed, s=s)
        return out.p_value
    grouped = group_by_label(sample)
    if kernel.kind == "multi_kendall" and grouped.n_classes > 2:
        return _multiclass_pvalue(grouped, kernel, method, seed)
    if method.mode == "bit":
        if method.s is None:
            raise ValidationError("bit mode needs the sampling ratio s")
        plan = draw_subsample(grouped, method.s, spawn_seed(seed, 1), kernel.m0)
        stat = compute_bit(grouped, kernel, plan)
        basis_data = thin_controls(grouped, plan)
    else:
        stat = compute_rit(grouped, kernel)
        basis_data = grouped
    if inference == "highdim":
        xi02 = estimate_xi02(basis_data, kernel)
        return pvalue_asymptotic_highdim(stat, xi02).p_value
    if inference != "asymptotic":
        raise ValidationError(f"unknown inference {inference!r}")
    xi01 = estimate_xi01(basis_data, kernel, method.budget, spawn_seed(seed, 5),
                         basis=method.xi_basis)
    if method.mode == "bit":
        xi10 = estimate_xi10(basis_data, kernel, method.budget, spawn_seed(seed, 6))
        return pvalue_asymptotic_first(stat, xi01, s=method.s, xi10=xi10).p_value
    return pvalue_asymptotic_first(stat, xi01).p_value


# ---------------------------------------------------------------------------
# empirical rejection probability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErpReport:
    """Empirical rejection probability of one method on one scenario."""

    scenario: ScenarioSpec
    method: MethodConfig
    erp: float
    mc_se: float
    reps: int
    rejected: int
    seconds_total: float

    def row(self) -> dict:
        r = {
            "family": self.scenario.family,
            "n": self.scenario.n,
            "n1": self.scenario.n1,
            "p": self.scenario.p,
            "effect": self.scenario.effect_size,
            "M": self.reps,
            "alpha": self.scenario.alpha,
            "method": self.method.label(),
            "erp": self.erp,
            "mc_se": self.mc_se,
            "seconds_total": self.seconds_total,
        }
        return r


def _erp_chunk(args) -> int:
    scenario, method, lo, hi = args
    rejected = 0
    for rep in range(lo, hi):
        sample = generate(scenario, rep)
        p = evaluate_replication(sample, method, spawn_seed(scenario.seed, rep, 9))
        rejected += p <= scenario.alpha
    return rejected


def run_erp(
    scenario: ScenarioSpec, method: MethodConfig, threads: int = 1
) -> ErpReport:
    """Monte Carlo rejection rate at the scenario's level.

    Per-replication seeding makes the count independent of ``threads``.
    """
    t0 = time.perf_counter()
    m = scenario.M
    if threads <= 1:
        rejected = _erp_chunk((scenario, method, 0, m))
    else:
        bounds = np.linspace(0, m, threads + 1).astype(int)
        chunks = [
            (scenario, method, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rejected = sum(pool.map(_erp_chunk, chunks))
    erp = rejected / m
    return ErpReport(
        scenario,
        method,
        erp,
        math.sqrt(erp * (1 - erp) / m),
        m,
        rejected,
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# the imbalance phenomenon (classical tests across sample-size grids)
# ---------------------------------------------------------------------------


def figure1_phenomenon(
    fixed_grid=(200, 500, 1000, 2000),
    decreasing_grid=(200, 500, 1000, 2000, 5000, 10000, 20000),
    n1: int = 100,
    effect: float = 0.2,
    M: int = 500,
    alpha: float = 0.05,
    seed: int = 0,
) -> list:
    """Classical Pearson and sign-statistic behaviour on two designs:
    balanced labels at every n, versus a fixed case count n1 with n
    growing.  Returns tidy rows of mean statistic and power per grid
    point."""
    rows = []
    for family, grid in (
        ("intro_fixed_p", fixed_grid),
        ("intro_decreasing_p", decreasing_grid),
    ):
        for n in grid:
            spec = ScenarioSpec(
                family, n=n, n1=min(n1, n // 2) if family == "intro_decreasing_p" else n // 2,
                effect=effect, M=M, alpha=alpha, seed=spawn_seed(seed, n),
            )
            acc = {
                kind: {"stat": 0.0, "abs": 0.0, "rej": 0}
                for kind in ("pearson", "kendall")
            }
            for rep in range(M):
                sample = generate(spec, rep)
                for kind in ("pearson", "kendall"):
                    value = compute_classical(sample, kind)
                    p = classical_pvalue(sample, kind)
                    acc[kind]["stat"] += value
                    acc[kind]["abs"] += abs(value)
                    acc[kind]["rej"] += p <= alpha
            for kind in ("pearson", "kendall"):
                rows.append(
                    {
                        "scenario": family,
                        "n": n,
                        "n1": spec.n1,
                        "statistic": kind,
                        "mean_stat": acc[kind]["stat"] / M,
                        "mean_abs_stat": acc[kind]["abs"] / M,
                        "power": acc[kind]["rej"] / M,
                    }
                )
    return rows


# ---------------------------------------------------------------------------
# runtime benchmarks
# ---------------------------------------------------------------------------


def _median_time(fn, trials: int) -> float:
    fn()  # warm-up (JIT compilation, allocator)
    times = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def loglog_slope(xs, ts) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)),
                            np.log(np.asarray(ts, float)), 1)[0])


def benchmark_complexity(
    kernel_name: str,
    sizes,
    mode: str = "rit",
    n1: int | None = None,
    s_values=None,
    trials: int = 5,
    p: int | None = None,
    seed: int = 0,
) -> list:
    """Median wall times of the statistic across a size grid.

    ``mode="rit"`` varies the total sample size; ``mode="bit"`` fixes
    ``n1`` and varies the sampling ratio ``s``.  Absolute times are
    machine-specific; use :func:`loglog_slope` on the returned rows.
    """
    kernel = kernel_from_name(kernel_name)
    if p is None:
        p = 1 if kernel.order == "first" else 5
    rng = spawn_rng(seed)
    rows = []
    if mode == "rit":
        for n in sizes:
            n1_local = max(kernel.m1, n // 20)
            labels = np.r_[np.zeros(n - n1_local, np.int64), np.ones(n1_local, np.int64)]
            x = rng.standard_normal((n, p)) if p > 1 else rng.standard_normal((n, 1))
            grouped = group_by_label(LabeledSample(x, labels))
            rows.append(
                {
                    "kernel": kernel_name,
                    "mode": "rit",
                    "x": n,
                    "median_seconds": _median_time(
                        lambda g=grouped: compute_rit(g, kernel), trials
                    ),
                }
            )
    elif mode == "bit":
        if n1 is None or not s_values:
            raise ValidationError("bit benchmarks need n1 and s_values")
        n0 = 2 * max(s_values) * n1
        labels = np.r_[np.zeros(n0, np.int64), np.ones(n1, np.int64)]
        x = rng.standard_normal((n0 + n1, p))
        grouped = group_by_label(LabeledSample(x, labels))
        for s in s_values:
            plan = draw_subsample(grouped, s, seed, kernel.m0)
            rows.append(
                {
                    "kernel": kernel_name,
                    "mode": "bit",
                    "x": s,
                    "median_seconds": _median_time(
                        lambda g=grouped, pl=plan: compute_bit(g, kernel, pl), trials
                    ),
                }
            )
    else:
        raise ValidationError("mode must be 'rit' or 'bit'")
    return rows


def compare_backends(sizes=(500, 1000), p: int = 10, trials: int = 5, seed: int = 0):
    """Time the numba and numpy implementations of each hot kernel."""
    impls = _accel.backend_implementations()
    rng = spawn_rng(seed)
    rows = []
    for n in sizes:
        a = rng.standard_normal((n, p))
        b = rng.standard_normal((n // 2, p))
        args = {
            "cross_dist_sum": (a, b),
            "within_dist_sum": (a,),
            "cross_dist_rowsum": (a, b),
            "cross_angle_sum": (_accel.angle_embed(a, 1.0), _accel.angle_embed(b, 1.0)),
            "within_angle_sum": (_accel.angle_embed(a, 1.0),),
            "cross_angle_rowsum": (
                _accel.angle_embed(a, 1.0),
                _accel.angle_embed(b, 1.0),
            ),
        }
        for name, pair in impls.items():
            row = {"kernel": name, "n": n}
            for backend, fn in pair.items():
                if fn is None:
                    row[backend] = float("nan")
                    continue
                row[backend] = _median_time(lambda f=fn, ag=args[name]: f(*ag), trials)
            rows.append(row)
    return rows
