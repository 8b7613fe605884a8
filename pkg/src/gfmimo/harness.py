"""Monte-Carlo engine: trial orchestration, aggregation, and comparisons.

Each trial draws a population (or reuses a fixed one), an activity pattern,
and a channel realization, transmits pilots at the power-controlled level,
detects, estimates, combines, and scores. Trial t consumes only the rng
stream derived from (seed, trial t), so results are independent of worker
count and a run over [0, n) equals the merge of runs over [0, n/2) and
[n/2, n).
"""

from __future__ import annotations

import functools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import detection, estimation, link
from .channel import (PRB_PILOT_SUBCARRIERS, effective_const, generate_channel,
                      pilot_subcarrier_correlation, smallscale_variance)
from .pilots import PilotBook, make_pilot_book
from .scenario import (STREAM_POPULATION, STREAM_TRIAL, Scenario, UEPopulation,
                       build_population, draw_activity, substream)

DEFAULT_QUANTILE_GRID = (1e-1, 1e-2, 1e-3)

_LABEL_DETECTED = "detected-active"
_LABEL_MISSED = "misdetected"
_LABEL_FALSE_ALARM = "false-alarm"


@lru_cache(maxsize=16)
def _cached_pilot_book(pilot_mode: str, n_ue: int, tau: int) -> PilotBook:
    return make_pilot_book(pilot_mode, n_ue, tau)


@dataclass
class RunContext:
    """Per-run immutable state shared by every trial."""

    book: PilotBook
    var_smallscale: float
    corr6: np.ndarray | None
    population: UEPopulation | None  # set when the population is fixed across trials

    @classmethod
    def build(cls, scenario: Scenario) -> "RunContext":
        book = _cached_pilot_book(scenario.pilot_mode, scenario.K_total,
                                  scenario.pilot_len)
        corr6 = None
        if scenario.pilot_mode == "gold-prb":
            corr6 = pilot_subcarrier_correlation(scenario)
        population = None
        if not scenario.redraw_population:
            population = build_population(
                scenario, substream(scenario.rng_seed, STREAM_POPULATION, 0))
        return cls(book=book, var_smallscale=smallscale_variance(scenario),
                   corr6=corr6, population=population)


def transmit_pilots(scenario: Scenario, book: PilotBook, g_eff: np.ndarray,
                    indicator: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Received pilot signal with unit-variance noise.

    CI modes return (tau, M, N); PRB mode returns (24, M) with each block of
    four rows carrying one pilot subcarrier's symbols.
    """
    scale = np.sqrt(scenario.pilot_len * scenario.pilot_snr())
    m = scenario.M
    if scenario.pilot_mode == "gold-prb":
        y = (rng.standard_normal((24, m)) + 1j * rng.standard_normal((24, m))) / np.sqrt(2.0)
        for i, sc in enumerate(PRB_PILOT_SUBCARRIERS):
            y[book.block_rows(i)] += scale * book.block(i) @ (indicator[:, None] * g_eff[:, :, sc].T)
        return y
    n_sub = g_eff.shape[2]
    y = (rng.standard_normal((book.tau, m, n_sub))
         + 1j * rng.standard_normal((book.tau, m, n_sub))) / np.sqrt(2.0)
    sel = indicator[:, None, None] * np.swapaxes(g_eff, 0, 1)  # (K, M, N)
    y += scale * np.einsum("tk,kmn->tmn", book.phi, sel)
    return y


def _detection_observations(y: np.ndarray) -> np.ndarray:
    return y if y.ndim == 2 else y.reshape(y.shape[0], -1)


def _trial_state(scenario: Scenario, ctx: RunContext, rng: np.random.Generator):
    """Draw one trial's population, activity, channel, and received pilots."""
    population = ctx.population if ctx.population is not None else build_population(scenario, rng)
    activity = draw_activity(scenario, rng)
    chan = generate_channel(scenario, population, rng)
    eta = population.authorized_eta()
    g_eff = chan.g * np.sqrt(eta)[None, :, None]
    y = transmit_pilots(scenario, ctx.book, g_eff, activity.indicator, rng)
    return population, activity, chan, g_eff, y


def synthesize_problem(scenario: Scenario, rng: np.random.Generator,
                       ctx: RunContext | None = None) -> detection.DetectionProblem:
    """Detection problem for one synthetic draw (used by threshold calibration)."""
    if ctx is None:
        ctx = RunContext.build(scenario)
    population, activity, _, _, y = _trial_state(scenario, ctx, rng)
    cov6 = None
    if ctx.corr6 is not None:
        cov6 = effective_const(scenario, population)[:, None, None] * ctx.corr6[None, :, :]
    return detection.DetectionProblem(
        Y=_detection_observations(y), book=ctx.book,
        rho_p=scenario.pilot_snr(), p_fa=scenario.target_p_fa,
        priors=effective_const(scenario, population), cov6=cov6,
        active=activity.active)


@dataclass
class TrialRecord:
    trial: int
    ue: int
    beta: float
    eta: float
    label: str
    sinr: float
    throughput_bps: float


def _label_trial(scenario: Scenario, active_mask: np.ndarray,
                 predicted: np.ndarray, sinr: np.ndarray) -> link.TrialOutcome:
    """Per-UE outcome labels and throughput; misdetected actives score zero."""
    labels = np.where(active_mask,
                      np.where(predicted, _LABEL_DETECTED, _LABEL_MISSED),
                      np.where(predicted, _LABEL_FALSE_ALARM, "true-inactive"))
    scored = active_mask & predicted
    throughput = np.where(scored,
                          link.effective_throughput(sinr, scenario.pilot_len,
                                                    scenario.tau_c,
                                                    scenario.bandwidth_hz),
                          0.0)
    return link.TrialOutcome(sinr=np.where(scored, sinr, 0.0),
                             throughput_bps=throughput, label=labels)


@dataclass
class TrialSummary:
    records: list
    n_active: int
    n_misdetected: int
    n_false_alarm: int
    n_inactive: int


def simulate_trial(scenario: Scenario, ctx: RunContext,
                   threshold: float | None, trial: int) -> TrialSummary:
    """Full pipeline for one trial; all randomness comes from (seed, trial)."""
    try:
        rng = substream(scenario.rng_seed, STREAM_TRIAL, trial)
        population, activity, chan, g_eff, y = _trial_state(scenario, ctx, rng)
        beta = population.authorized_beta()
        eta = population.authorized_eta()
        const_eff = effective_const(scenario, population)
        cov6 = None
        if ctx.corr6 is not None:
            cov6 = const_eff[:, None, None] * ctx.corr6[None, :, :]

        problem = detection.DetectionProblem(
            Y=_detection_observations(y), book=ctx.book,
            rho_p=scenario.pilot_snr(), p_fa=scenario.target_p_fa,
            priors=const_eff, cov6=cov6, active=activity.active)
        det = detection.detect(problem, scenario.detector_id, threshold=threshold,
                               max_sweeps=scenario.max_sweeps,
                               tol=scenario.step_tol, rng=rng)
        predicted = det.predicted

        est_input = estimation.EstimatorInput(
            Y=y, book=ctx.book, predicted=predicted,
            rho_p=scenario.pilot_snr(), priors=const_eff, cov6=cov6)
        est = estimation.estimate(est_input, scenario.estimator_id,
                                  true_effective=g_eff)

        # The receiver works on raw-channel estimates with explicit power
        # weights; estimates absorb sqrt(eta) through the pilots, so undo it.
        ghat = est.ghat.copy()
        b = np.flatnonzero(predicted)
        if b.size:
            ghat[:, b, :] /= np.sqrt(eta[b])[None, :, None]

        rho_u = scenario.data_snr()
        if scenario.pilot_mode == "gold-prb":
            freq_idx = PRB_PILOT_SUBCARRIERS
        else:
            freq_idx = np.arange(g_eff.shape[2])
        sinr_per_freq = np.zeros((freq_idx.size, scenario.K_total))
        for i, f in enumerate(freq_idx):
            bank = link.build_mmse_receiver(ghat[:, :, f], eta, rho_u, predicted)
            sinr_per_freq[i] = link.instantaneous_sinr(bank, chan.g[:, :, f],
                                                       eta, rho_u, activity.active)
        if scenario.sinr_aggregate == "min":
            sinr = sinr_per_freq.min(axis=0)
        else:
            sinr = sinr_per_freq.mean(axis=0)

        outcome = _label_trial(scenario, activity.indicator.astype(bool),
                               predicted, sinr)
        records = [TrialRecord(trial, k, beta[k], eta[k], outcome.label[k],
                               float(outcome.sinr[k]),
                               float(outcome.throughput_bps[k]))
                   for k in range(scenario.K_total)
                   if outcome.label[k] != "true-inactive"]
        n_active = int(activity.indicator.sum())
        return TrialSummary(records=records, n_active=n_active,
                            n_misdetected=int(np.sum(outcome.label == _LABEL_MISSED)),
                            n_false_alarm=int(np.sum(outcome.label == _LABEL_FALSE_ALARM)),
                            n_inactive=int(scenario.K_total - n_active))
    except Exception as exc:
        raise RuntimeError(f"trial {trial} failed: {exc}") from exc


def parallel_map(fn, items, workers: int = 1) -> list:
    """Ordered map, optionally over a process pool; fn must be picklable then."""
    items = list(items)
    if workers <= 1:
        return [fn(x) for x in items]
    chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


def quantile(samples, p: float) -> tuple[float, bool]:
    """Lower order-statistic quantile: the ceil(p*n)-th smallest sample.

    Ties resolve naturally through the sort. Returns (value, reliable); the
    estimate is flagged unreliable when fewer than 10/p samples back it, in
    which case p below 1/n degenerates to the minimum.
    """
    arr = np.sort(np.asarray(samples, dtype=float))
    if arr.size == 0:
        raise ValueError("quantile of empty sample set")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    idx = min(max(int(np.ceil(p * arr.size)) - 1, 0), arr.size - 1)
    return float(arr[idx]), arr.size >= 10.0 / p


@dataclass
class RunResult:
    """Aggregated outcome of a Monte-Carlo run."""

    samples: np.ndarray            # one throughput per truly-active UE per trial
    p_md: float
    p_fa: float
    quantile_grid: tuple
    quantiles: dict
    reliable: dict
    trials: int
    seed: int
    scenario_hash: str
    wall_clock_s: float
    threshold: float | None
    n_active_total: int
    n_misdetected: int
    n_false_alarm: int
    n_inactive_total: int
    records: list = field(default_factory=list)


def resolve_threshold(scenario: Scenario, threshold: float | None = None,
                      cache_path: str | None = None) -> float | None:
    """Detector threshold for a run: explicit value, cache hit, closed form,
    or fresh calibration at the scenario's target P_FA."""
    if threshold is not None or scenario.detector_id in ("np", "perfect"):
        return threshold
    if cache_path:
        hit = detection.load_calibration(cache_path, scenario.detector_id,
                                         scenario.scenario_hash(),
                                         scenario.target_p_fa)
        if hit is not None:
            return hit
    result = detection.calibrate_threshold(scenario)
    if cache_path:
        detection.store_calibration(cache_path, result)
    return result.threshold


def run(scenario: Scenario, trials: int, threshold: float | None = None,
        workers: int = 1, trial_offset: int = 0,
        quantile_grid=DEFAULT_QUANTILE_GRID,
        cache_path: str | None = None) -> RunResult:
    """Execute ``trials`` independent trials and aggregate reliability metrics."""
    scenario.validate()
    start = time.perf_counter()
    ctx = RunContext.build(scenario)
    threshold = resolve_threshold(scenario, threshold, cache_path)
    task = functools.partial(simulate_trial, scenario, ctx, threshold)
    summaries = parallel_map(task, range(trial_offset, trial_offset + trials), workers)

    records = [r for s in summaries for r in s.records]
    samples = np.array([r.throughput_bps for r in records
                        if r.label in (_LABEL_DETECTED, _LABEL_MISSED)], dtype=float)
    n_active = sum(s.n_active for s in summaries)
    n_miss = sum(s.n_misdetected for s in summaries)
    n_fa = sum(s.n_false_alarm for s in summaries)
    n_inactive = sum(s.n_inactive for s in summaries)

    quantiles, reliable = {}, {}
    for p in quantile_grid:
        if samples.size:
            quantiles[p], reliable[p] = quantile(samples, p)
        else:
            quantiles[p], reliable[p] = float("nan"), False
    return RunResult(samples=samples,
                     p_md=n_miss / n_active if n_active else 0.0,
                     p_fa=n_fa / n_inactive if n_inactive else 0.0,
                     quantile_grid=tuple(quantile_grid), quantiles=quantiles,
                     reliable=reliable, trials=trials, seed=scenario.rng_seed,
                     scenario_hash=scenario.scenario_hash(),
                     wall_clock_s=time.perf_counter() - start,
                     threshold=threshold, n_active_total=n_active,
                     n_misdetected=n_miss, n_false_alarm=n_fa,
                     n_inactive_total=n_inactive, records=records)


# -- comparisons ---------------------------------------------------------------

@dataclass
class Assertion:
    """One ordering check between two runs.

    metric: 'q' (throughput quantile at level p), 'pmd', or 'pfa'.
    op: '>=', '<=', '>', '<', or '~' (within relative tolerance of run j).
    """

    metric: str
    i: int
    j: int
    op: str
    p: float | None = None
    tol: float = 0.0

    def describe(self) -> str:
        metric = f"q@{self.p:g}" if self.metric == "q" else self.metric
        if self.op == "~":
            return f"{metric}: run{self.i} within {self.tol:.0%} of run{self.j}"
        return f"{metric}: run{self.i} {self.op} run{self.j}"


def parse_assertion(spec: str) -> Assertion:
    """Parse 'q@0.01:0>=1', 'q@0.01:0~1@0.10', 'pmd:1>0', 'pfa:0<=1'."""
    head, _, body = spec.partition(":")
    if not body:
        raise ValueError(f"malformed assertion {spec!r}")
    metric, p = head, None
    if head.startswith("q@"):
        metric, p = "q", float(head[2:])
    elif head not in ("pmd", "pfa"):
        raise ValueError(f"unknown metric in assertion {spec!r}")
    tol = 0.0
    if "~" in body:
        core, _, tol_text = body.partition("@")
        i_text, _, j_text = core.partition("~")
        op = "~"
        tol = float(tol_text) if tol_text else 0.1
    else:
        for op in (">=", "<=", ">", "<"):
            if op in body:
                i_text, _, j_text = body.partition(op)
                break
        else:
            raise ValueError(f"no operator in assertion {spec!r}")
    return Assertion(metric=metric, i=int(i_text), j=int(j_text), op=op,
                     p=p, tol=tol)


@dataclass
class ComparisonReport:
    lines: list
    ok: bool

    def text(self) -> str:
        return "\n".join(self.lines)


def _metric_value(result: RunResult, assertion: Assertion) -> float:
    if assertion.metric == "q":
        return result.quantiles[assertion.p]
    return result.p_md if assertion.metric == "pmd" else result.p_fa


def compare_scenarios(results, assertions=()) -> ComparisonReport:
    """Quantile deltas across runs plus pass/fail of ordering assertions."""
    results = list(results)
    if not results:
        raise ValueError("nothing to compare")
    grid = results[0].quantile_grid
    for r in results[1:]:
        if r.quantile_grid != grid:
            raise ValueError("runs use mismatched quantile grids")
    lines = []
    for p in grid:
        vals = [r.quantiles[p] for r in results]
        deltas = ", ".join(f"run{i}: {v:.6g} (d={v - vals[0]:+.6g})"
                           for i, v in enumerate(vals))
        lines.append(f"quantile {p:g}: {deltas}")
    lines.append("p_md: " + ", ".join(f"run{i}: {r.p_md:.3e}" for i, r in enumerate(results)))
    lines.append("p_fa: " + ", ".join(f"run{i}: {r.p_fa:.3e}" for i, r in enumerate(results)))

    ok = True
    for assertion in assertions:
        if isinstance(assertion, str):
            assertion = parse_assertion(assertion)
        if assertion.metric == "q" and assertion.p not in grid:
            raise ValueError(f"assertion level {assertion.p} not in the shared grid")
        a = _metric_value(results[assertion.i], assertion)
        b = _metric_value(results[assertion.j], assertion)
        if assertion.op == "~":
            ref = abs(b) if b != 0 else 1.0
            passed = abs(a - b) <= assertion.tol * ref
        else:
            passed = {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[assertion.op]
        ok &= passed
        lines.append(f"[{'PASS' if passed else 'FAIL'}] {assertion.describe()}"
                     f" ({a:.6g} vs {b:.6g})")
    return ComparisonReport(lines=lines, ok=ok)


# -- output files ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _sinr_db(sinr: float) -> str:
    return _fmt(10.0 * np.log10(sinr)) if sinr > 0.0 else "-inf"


def write_outputs(result: RunResult, outdir: str, scenario: Scenario | None = None) -> None:
    """samples.csv (per-UE rows), summary.txt (key=value), cdf.csv (plot-ready).

    samples.csv lists active and false-alarm UEs only; truly-inactive UEs are
    accounted for in the summary counters.
    """
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "samples.csv"), "w") as fh:
        fh.write("trial,ue,beta,eta,label,sinr_db,throughput_bps\n")
        for r in result.records:
            fh.write(f"{r.trial},{r.ue},{_fmt(r.beta)},{_fmt(r.eta)},{r.label},"
                     f"{_sinr_db(r.sinr)},{_fmt(r.throughput_bps)}\n")

    ordered = np.sort(result.samples)
    with open(os.path.join(outdir, "cdf.csv"), "w") as fh:
        fh.write("probability,throughput_bps\n")
        n = ordered.size
        for i, value in enumerate(ordered):
            fh.write(f"{_fmt((i + 1) / n)},{_fmt(value)}\n")

    entries = {
        "trials": result.trials,
        "seed": result.seed,
        "scenario_hash": result.scenario_hash,
        "samples": result.samples.size,
        "p_md": _fmt(result.p_md),
        "p_fa": _fmt(result.p_fa),
        "threshold": "" if result.threshold is None else _fmt(result.threshold),
        "n_active_total": result.n_active_total,
        "n_misdetected": result.n_misdetected,
        "n_false_alarm": result.n_false_alarm,
        "n_inactive_total": result.n_inactive_total,
        "wall_clock_s": f"{result.wall_clock_s:.3f}",
    }
    if scenario is not None:
        entries["detector_id"] = scenario.detector_id
        entries["pilot_mode"] = scenario.pilot_mode
        entries["estimator_id"] = scenario.estimator_id
    for p in result.quantile_grid:
        entries[f"quantile_{p:g}"] = _fmt(result.quantiles[p])
        entries[f"quantile_{p:g}_reliable"] = int(result.reliable[p])
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def load_summary(outdir: str) -> dict:
    summary = {}
    with open(os.path.join(outdir, "summary.txt")) as fh:
        for line in fh:
            key, _, value = line.rstrip("\n").partition("=")
            summary[key] = value
    return summary
