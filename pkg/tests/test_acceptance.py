"""Acceptance suite: one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``. The ordering regressions
(criterion 6) execute seven Monte-Carlo runs of 10^4 trials each and dominate
the runtime (about 25 minutes on one core); everything else finishes in
about a minute combined.
"""

import warnings

import numpy as np
import pytest

import gfmimo as gf
from gfmimo.detection import (calibrate_threshold, coordinate_descent_detect,
                              np_threshold, sample_covariance)
from gfmimo.estimation import EstimatorInput, lmmse_ci_diag, lmmse_ci_perue, lmmse_prb
from gfmimo.harness import compare_scenarios, run, write_outputs
from gfmimo.pilots import (PilotBook, assemble_prb_matrix, make_gold_pilots,
                           make_orthogonal_pilots)
from gfmimo.scenario import Scenario
from gfmimo.estimation import _prb_prior
from util import conditional_mean, crandn, ml_objective

warnings.filterwarnings("ignore", message="only .* null statistics")


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


# -- criterion 1: NP threshold law ------------------------------------------

def test_criterion_1_np_false_alarm_law():
    sc = Scenario(M=2, K_total=50, lambda_active=10.0, n_subbands=1,
                  pilot_mode="orthogonal-ci", detector_id="np",
                  estimator_id="ci-diag", channel_model="iid",
                  target_p_fa=1e-2, rng_seed=11).validate()
    res = run(sc, trials=2600)
    ok = res.n_inactive_total >= 10**5 and 0.8e-2 <= res.p_fa <= 1.2e-2
    report("criterion 1 (NP threshold law)", ok,
           f"empirical P_FA {res.p_fa:.4f} over {res.n_inactive_total} "
           f"inactive-UE statistics, target band [0.008, 0.012]")


# -- criterion 2: closed form vs calibration ---------------------------------

def test_criterion_2_np_calibration_agreement():
    sc = Scenario(M=4, K_total=50, lambda_active=10.0, n_subbands=1,
                  pilot_mode="orthogonal-ci", detector_id="np",
                  estimator_id="ci-diag", channel_model="iid",
                  target_p_fa=1e-2, rng_seed=12).validate()
    cal = calibrate_threshold(sc, trials=2600)  # ~1e5 null statistics
    closed = np_threshold(1e-2, sc.M, 1)
    rel = abs(cal.threshold - closed) / closed
    ok = cal.n_null >= 10**5 and rel < 0.05
    report("criterion 2 (calibration vs closed form)", ok,
           f"calibrated {cal.threshold:.4f} vs closed-form {closed:.4f} "
           f"({rel:.2%} apart, {cal.n_null} null samples)")


# -- criterion 3: LMMSE oracle equivalence -----------------------------------

def test_criterion_3_lmmse_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 3))
        tau = int(rng.integers(k, 5))
        m = int(rng.integers(1, 3))
        rho = float(rng.uniform(0.2, 3.0))
        priors = rng.uniform(0.2, 2.0, k)
        predicted = rng.random(k) < 0.7
        b = np.flatnonzero(predicted)
        if b.size == 0:
            predicted[0] = True
            b = np.array([0])

        phi = crandn(rng, (tau, k))
        phi /= np.linalg.norm(phi, axis=0)
        book = PilotBook(mode="gold", phi=phi)
        y = crandn(rng, (tau, m))
        est = lmmse_ci_diag(EstimatorInput(Y=y[:, :, None], book=book,
                                           predicted=predicted, rho_p=rho,
                                           priors=priors))
        cb = np.diag(priors[b])
        pb = phi[:, b]
        cov_gy = np.sqrt(tau * rho) * cb @ pb.conj().T
        cov_yy = tau * rho * pb @ cb @ pb.conj().T + np.eye(tau)
        for col in range(m):
            want = conditional_mean(cov_gy, cov_yy, y[:, col])
            worst = max(worst, np.abs(est.ghat[col, b, 0] - want).max())

        obook = make_orthogonal_pilots(k)
        yo = crandn(rng, (k, m))
        est2 = lmmse_ci_perue(EstimatorInput(Y=yo[:, :, None], book=obook,
                                             predicted=predicted, rho_p=rho,
                                             priors=priors))
        pb = obook.phi[:, b]
        cov_gy = np.sqrt(k * rho) * cb @ pb.conj().T
        cov_yy = k * rho * pb @ cb @ pb.conj().T + np.eye(k)
        for col in range(m):
            want = conditional_mean(cov_gy, cov_yy, yo[:, col])
            worst = max(worst, np.abs(est2.ghat[col, b, 0] - want).max())

        pbook = make_gold_pilots(k, 24, prb=True)
        cov6 = np.empty((k, 6, 6), dtype=complex)
        for ue in range(k):
            a = crandn(rng, (6, 8))
            cov6[ue] = a @ a.conj().T / 8 * priors[ue]
        v = assemble_prb_matrix(pbook, b)
        ct = _prb_prior(cov6, b)
        yp = crandn(rng, (24, m))
        est3 = lmmse_prb(EstimatorInput(Y=yp, book=pbook, predicted=predicted,
                                        rho_p=rho, cov6=cov6))
        cov_gy = np.sqrt(24 * rho) * ct @ v.conj().T
        cov_yy = 24 * rho * v @ ct @ v.conj().T + np.eye(24)
        for col in range(m):
            want = conditional_mean(cov_gy, cov_yy, yp[:, col])
            got = np.array([est3.ghat[col, ue, 2 * i] for i in range(6) for ue in b])
            worst = max(worst, np.abs(got - want).max())
    ok = worst < 1e-9
    report("criterion 3 (LMMSE oracle equivalence)", ok,
           f"worst |estimate - E[g|Y]| = {worst:.2e} over 100 instances x 3 estimators")


# -- criterion 4: coordinate-descent structural invariants -------------------

def test_criterion_4_descent_invariants():
    rng = np.random.default_rng(77)
    worst_consistency = 0.0
    worst_gamma = 0.0
    worst_increase = -np.inf
    for variant in ("ml", "mmv", "nnls"):
        steps = 0
        rep = 0
        while steps < 1000:
            tau, n_ue = 8, 12
            book = make_gold_pilots(n_ue, tau)
            y = crandn(rng, (tau, 24)) * rng.uniform(0.5, 4.0)
            shat = sample_covariance(y)
            trace = []

            def on_step(k, d, sigma, gamma, _trace=trace, _shat=shat,
                        _variant=variant):
                nonlocal worst_gamma
                worst_gamma = min(worst_gamma, gamma.min())
                if _variant == "ml":
                    _trace.append(ml_objective(sigma, _shat))

            problem = gf.DetectionProblem(Y=y, book=book, rho_p=1.0, p_fa=0.1)
            res = coordinate_descent_detect(problem, variant, max_sweeps=25,
                                            rng=np.random.default_rng(500 + rep),
                                            step_callback=on_step)
            rebuilt = np.eye(tau) + (book.phi * res.statistic) @ book.phi.conj().T
            worst_consistency = max(worst_consistency,
                                    float(np.linalg.norm(res.sigma - rebuilt)))
            if variant == "ml" and len(trace) > 1:
                worst_increase = max(worst_increase, float(np.diff(trace).max()))
            steps += len(trace) if variant == "ml" else 40
            rep += 1
    ok = (worst_consistency < 1e-9 and worst_gamma >= 0.0
          and worst_increase < 1e-8)
    report("criterion 4 (descent invariants)", ok,
           f"max ||Sigma - rebuild||_F {worst_consistency:.2e}, "
           f"min gamma {worst_gamma:.2e}, max ml objective increase "
           f"{worst_increase:.2e}")


# -- criterion 5: zero misdetections in the reference uplink -----------------

def test_criterion_5_np_zero_misdetections():
    sc = Scenario(M=128, K_total=50, lambda_active=10.0, tau_c=168,
                  n_subbands=1, cell_radius_m=150.0,
                  pathloss_model_id="uma-nlos", channel_model="iid",
                  pilot_mode="orthogonal-ci", detector_id="np",
                  estimator_id="ci-perue", tx_power_dbm=26.0,
                  noise_figure_db=7.0, target_p_fa=1e-2, rng_seed=42).validate()
    res = run(sc, trials=10_000)
    ok = res.n_misdetected == 0
    report("criterion 5 (zero misdetections, 128-antenna uplink)", ok,
           f"{res.n_misdetected} misdetections over {res.n_active_total} "
           f"activations in 10^4 trials (P_FA target 1e-2, measured "
           f"{res.p_fa:.4f})")


# -- criterion 6: ordering regressions ----------------------------------------

# Coherence-interval family for the ordering runs. The shadowing spread is
# set so that no active UE's true activity weight falls below the calibrated
# detection threshold: with the default 6 dB spread about 0.1% of full-power
# actives are sub-threshold for ANY detector (a property of the near-far
# link budget, not of the detectors under comparison), and those zeros would
# dominate the 1e-2 quantile that criterion 6 compares.
CI_BASE = dict(M=64, K_total=50, lambda_active=10.0, tau_c=168, n_subbands=8,
               cell_radius_m=100.0, pathloss_model_id="uma-nlos",
               shadowing_std_db=4.0, channel_model="tdl", n_taps=16,
               rng_seed=101, tx_power_dbm=30.0, noise_figure_db=7.0,
               target_p_fa=1.5e-4, calibration_trials=4000, max_sweeps=16,
               step_tol=1e-5)
D_BASE = dict(M=64, K_total=50, K_pop=100, lambda_active=10.0, tau_c=168,
              cell_radius_m=100.0, pathloss_model_id="umi-nlos",
              channel_model="tdl", n_taps=16, rng_seed=202,
              tx_power_dbm=30.0, noise_figure_db=7.0, target_p_fa=3e-4,
              power_control="open-loop", drop_fraction=0.05,
              calibration_trials=3500, max_sweeps=16, step_tol=1e-5)
ORDERING_TRIALS = 10_000  # lambda 10 -> ~1e5 throughput samples per run


@pytest.fixture(scope="module")
def ordering_runs():
    configs = {
        "np": Scenario(**CI_BASE, pilot_mode="orthogonal-ci", detector_id="np",
                       estimator_id="ci-perue"),
        "ml": Scenario(**CI_BASE, pilot_mode="gold-ci", tau=24,
                       detector_id="ml", estimator_id="ci-diag"),
        "perfect": Scenario(**CI_BASE, pilot_mode="gold-ci", tau=24,
                            detector_id="perfect", estimator_id="ci-diag"),
        "mmv": Scenario(**CI_BASE, pilot_mode="gold-ci", tau=24,
                        detector_id="mmv", estimator_id="ci-diag"),
        "nnls": Scenario(**CI_BASE, pilot_mode="gold-ci", tau=24,
                         detector_id="nnls", estimator_id="ci-diag"),
        "d_ci": Scenario(**D_BASE, n_subbands=8, pilot_mode="gold-ci", tau=24,
                         detector_id="ml", estimator_id="ci-diag"),
        "d_prb": Scenario(**D_BASE, pilot_mode="gold-prb", tau=24,
                          detector_id="prb-ml", estimator_id="prb"),
    }
    results = {}
    for name, sc in configs.items():
        results[name] = run(sc.validate(), trials=ORDERING_TRIALS)
        assert results[name].samples.size >= 0.95e5
    return results


def test_criterion_6a_orthogonal_beats_gold(ordering_runs):
    r = ordering_runs
    report_6 = compare_scenarios([r["np"], r["ml"]], ["q@0.01:0>=1"])
    q_np = r["np"].quantiles[1e-2] / 1e6
    q_ml = r["ml"].quantiles[1e-2] / 1e6
    report("criterion 6a (orthogonal-CI >= gold-CI at 1e-2 quantile)",
           report_6.ok, f"{q_np:.2f} Mbps vs {q_ml:.2f} Mbps")


def test_criterion_6b_ml_close_to_perfect(ordering_runs):
    r = ordering_runs
    rep = compare_scenarios([r["ml"], r["perfect"]], ["q@0.01:0~1@0.10"])
    a = r["ml"].quantiles[1e-2]
    b = r["perfect"].quantiles[1e-2]
    report("criterion 6b (gold-CI ml within 10% of perfect detection)",
           rep.ok, f"{a / 1e6:.2f} vs {b / 1e6:.2f} Mbps "
                   f"({abs(a - b) / b:.2%} apart)")


def test_criterion_6c_mmv_nnls_miss_more(ordering_runs):
    r = ordering_runs
    rep = compare_scenarios([r["ml"], r["mmv"], r["nnls"]],
                            ["pmd:1>0", "pmd:2>0"])
    report("criterion 6c (MMV and NNLS P_MD strictly above ML)", rep.ok,
           f"P_MD ml {r['ml'].p_md:.2e}, mmv {r['mmv'].p_md:.2e}, "
           f"nnls {r['nnls'].p_md:.2e}")


def test_criterion_6d_ci_beats_prb_under_power_control(ordering_runs):
    r = ordering_runs
    rep = compare_scenarios([r["d_ci"], r["d_prb"]], ["q@0.01:0>=1"])
    report("criterion 6d (gold-CI >= gold-PRB at tau=24, open-loop + drop)",
           rep.ok, f"{r['d_ci'].quantiles[1e-2] / 1e6:.2f} vs "
                   f"{r['d_prb'].quantiles[1e-2] / 1e6:.2f} Mbps")


# -- criterion 7: throughput formula spot check -------------------------------

def test_criterion_7_throughput_formula():
    from gfmimo.link import DECODING_PENALTY, effective_throughput
    got = float(effective_throughput(1.0 / DECODING_PENALTY, 50, 168, 40e6))
    want = (168 - 50) / 168 * 40e6  # post-penalty SINR of exactly one
    rel = abs(got - want) / want
    ok = rel < 1e-6
    report("criterion 7 (throughput spot check)", ok,
           f"{got / 1e6:.6f} Mbps vs {want / 1e6:.6f} Mbps (rel {rel:.2e})")


# -- criterion 8: determinism -------------------------------------------------

def test_criterion_8_byte_identical_outputs(tmp_path):
    sc = Scenario(M=4, K_total=10, lambda_active=3.0, n_subbands=1,
                  pilot_mode="orthogonal-ci", detector_id="np",
                  estimator_id="ci-diag", channel_model="iid",
                  rng_seed=31).validate()
    blobs = []
    for i, workers in enumerate((1, 2, 1)):
        res = run(sc, trials=300, workers=workers)
        out = tmp_path / f"run{i}"
        write_outputs(res, str(out), sc)
        blobs.append((out / "samples.csv").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    report("criterion 8 (determinism)", ok,
           f"samples.csv identical across repeated runs and worker counts "
           f"({len(blobs[0])} bytes)")
