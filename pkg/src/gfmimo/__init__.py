"""Grant-free massive MIMO uplink link-level Monte-Carlo simulator."""

from .channel import (ChannelRealization, TapProfile, dump_realization,
                      gen_correlated_surrogate, gen_iid_rayleigh,
                      generate_channel, load_realization, smallscale_variance,
                      subcarrier_covariance)
from .detection import (CalibrationResult, DetectionProblem, DetectionResult,
                        calibrate_threshold, coordinate_descent_detect, detect,
                        np_correlate, np_detect, np_threshold, perfect_detect,
                        prb_ml_detect)
from .estimation import (ChannelEstimate, EstimatorInput, estimate,
                         lmmse_ci_diag, lmmse_ci_perue, lmmse_prb)
from .harness import (RunResult, compare_scenarios, quantile, run,
                      write_outputs)
from .link import (ReceiverBank, TrialOutcome, build_mmse_receiver,
                   effective_throughput, instantaneous_sinr)
from .pilots import (PilotBook, assemble_prb_matrix, make_gold_pilots,
                     make_orthogonal_pilots, make_pilot_book)
from .scenario import (ActivityPattern, Scenario, UEPopulation,
                       build_population, draw_activity, load_scenario,
                       open_loop_power_control)

__version__ = "0.1.0"

__all__ = [
    "ActivityPattern", "CalibrationResult", "ChannelEstimate",
    "ChannelRealization", "DetectionProblem", "DetectionResult",
    "EstimatorInput", "PilotBook", "ReceiverBank", "RunResult", "Scenario",
    "TapProfile", "TrialOutcome", "UEPopulation", "assemble_prb_matrix",
    "build_mmse_receiver", "build_population", "calibrate_threshold",
    "compare_scenarios", "coordinate_descent_detect", "detect",
    "draw_activity", "dump_realization", "effective_throughput", "estimate",
    "gen_correlated_surrogate", "gen_iid_rayleigh", "generate_channel",
    "instantaneous_sinr", "lmmse_ci_diag", "lmmse_ci_perue", "lmmse_prb",
    "load_realization", "load_scenario", "make_gold_pilots",
    "make_orthogonal_pilots", "make_pilot_book", "np_correlate", "np_detect",
    "np_threshold", "open_loop_power_control", "perfect_detect",
    "prb_ml_detect", "quantile", "run", "smallscale_variance",
    "subcarrier_covariance", "write_outputs",
]
