"""Experiment configuration, UE population, activity draws, and power control."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

PILOT_MODES = ("orthogonal-ci", "gold-ci", "gold-prb")
DETECTORS = ("np", "ml", "mmv", "nnls", "prb-ml", "perfect")
ESTIMATORS = ("ci-diag", "ci-perue", "prb", "true")
POWER_CONTROL_MODES = ("full-power", "open-loop")
CHANNEL_MODELS = ("iid", "tdl")

# Tags for deterministic per-purpose rng substreams.
STREAM_TRIAL = 0
STREAM_POPULATION = 1
STREAM_CALIBRATION = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Child generator for (seed, key...), independent of call order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


@dataclass(frozen=True)
class PathlossPreset:
    """Distance-to-loss model with its default geometry and shadowing spread."""

    bs_height_m: float
    ue_height_m: float
    shadowing_std_db: float
    min_distance_m: float


_PRESETS = {
    "uma-nlos": PathlossPreset(bs_height_m=25.0, ue_height_m=1.5,
                               shadowing_std_db=6.0, min_distance_m=35.0),
    "umi-nlos": PathlossPreset(bs_height_m=10.0, ue_height_m=1.5,
                               shadowing_std_db=7.82, min_distance_m=10.0),
    "log-distance": PathlossPreset(bs_height_m=10.0, ue_height_m=1.5,
                                   shadowing_std_db=8.0, min_distance_m=1.0),
}


@dataclass
class Scenario:
    """Full configuration of one uplink experiment.

    Unset (None) fields are resolved from the rest of the configuration:
    ``tau`` defaults to ``K_total`` for orthogonal pilots and 24 for the Gold
    modes, ``K_pop`` to ``K_total``, ``n_subbands`` to the coherence-bandwidth
    rule in :func:`gfmimo.channel.subband_count`, and ``rho_p``/``rho_u`` to
    the transmit-power link budget.
    """

    # array / population
    M: int = 128
    K_total: int = 50
    K_pop: int | None = None
    lambda_active: float = 10.0
    # time-frequency structure
    tau_c: int = 168
    tau: int | None = None
    n_subbands: int | None = None
    bandwidth_hz: float = 40e6
    subcarrier_spacing_hz: float = 30e3
    carrier_frequency_hz: float = 4e9
    # cell geometry and large-scale fading
    cell_radius_m: float = 150.0
    pathloss_model_id: str = "uma-nlos"
    shadowing_std_db: float | None = None
    min_distance_m: float | None = None
    bs_height_m: float | None = None
    ue_height_m: float | None = None
    pathloss_exponent: float = 3.7
    pathloss_ref_db: float = 30.0
    # link budget (per-symbol normalized SNRs; None -> derived from budget)
    tx_power_dbm: float = 23.0
    noise_figure_db: float = 9.0
    noise_psd_dbm_hz: float = -174.0
    occupied_bandwidth_hz: float | None = None
    rho_p: float | None = None
    rho_u: float | None = None
    # small-scale channel
    channel_model: str = "iid"
    delay_spread_s: float = 363e-9
    n_taps: int = 48
    antenna_corr: float = 0.0
    # processing chain
    pilot_mode: str = "orthogonal-ci"
    detector_id: str = "np"
    estimator_id: str = "ci-diag"
    power_control: str = "full-power"
    drop_fraction: float = 0.0
    target_p_fa: float = 1e-2
    # detector iteration budget
    max_sweeps: int = 50
    step_tol: float = 1e-6
    calibration_trials: int = 400
    # harness behaviour
    redraw_population: bool = True
    sinr_aggregate: str = "mean"
    rng_seed: int = 0

    # -- resolved values ---------------------------------------------------

    @property
    def pilot_len(self) -> int:
        if self.tau is not None:
            return int(self.tau)
        return int(self.K_total) if self.pilot_mode == "orthogonal-ci" else 24

    @property
    def population_size(self) -> int:
        return int(self.K_pop) if self.K_pop is not None else int(self.K_total)

    @property
    def n_dropped(self) -> int:
        return math.ceil(self.drop_fraction * self.population_size)

    def preset(self) -> PathlossPreset:
        return _PRESETS[self.pathloss_model_id]

    def shadowing_db(self) -> float:
        if self.shadowing_std_db is not None:
            return float(self.shadowing_std_db)
        return self.preset().shadowing_std_db

    def min_distance(self) -> float:
        if self.min_distance_m is not None:
            return float(self.min_distance_m)
        return self.preset().min_distance_m

    def bs_height(self) -> float:
        return float(self.bs_height_m) if self.bs_height_m is not None else self.preset().bs_height_m

    def ue_height(self) -> float:
        return float(self.ue_height_m) if self.ue_height_m is not None else self.preset().ue_height_m

    def _budget_snr(self) -> float:
        bw = self.occupied_bandwidth_hz if self.occupied_bandwidth_hz is not None else self.bandwidth_hz
        noise_dbm = self.noise_psd_dbm_hz + self.noise_figure_db + 10.0 * math.log10(bw)
        return 10.0 ** ((self.tx_power_dbm - noise_dbm) / 10.0)

    def pilot_snr(self) -> float:
        """Normalized per-pilot-symbol SNR (linear)."""
        return float(self.rho_p) if self.rho_p is not None else self._budget_snr()

    def data_snr(self) -> float:
        """Normalized per-data-symbol SNR (linear)."""
        return float(self.rho_u) if self.rho_u is not None else self._budget_snr()

    def scenario_hash(self) -> str:
        """Digest of the physical configuration. Excludes the rng seed so
        cached calibrations transfer across replicate runs (calibration draws
        from its own stream regardless)."""
        fields = dataclasses.asdict(self)
        fields.pop("rng_seed")
        blob = json.dumps(fields, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    # -- validation --------------------------------------------------------

    def validate(self) -> "Scenario":
        """Check structural invariants; returns self so calls can chain."""
        if self.M < 1 or self.K_total < 1:
            raise ValueError("M and K_total must be positive")
        if self.pilot_mode not in PILOT_MODES:
            raise ValueError(f"unknown pilot_mode {self.pilot_mode!r}")
        if self.detector_id not in DETECTORS:
            raise ValueError(f"unknown detector_id {self.detector_id!r}")
        if self.estimator_id not in ESTIMATORS:
            raise ValueError(f"unknown estimator_id {self.estimator_id!r}")
        if self.power_control not in POWER_CONTROL_MODES:
            raise ValueError(f"unknown power_control {self.power_control!r}")
        if self.channel_model not in CHANNEL_MODELS:
            raise ValueError(f"unknown channel_model {self.channel_model!r}")
        if self.pathloss_model_id not in _PRESETS:
            raise ValueError(f"unknown pathloss_model_id {self.pathloss_model_id!r}")
        if self.sinr_aggregate not in ("mean", "min"):
            raise ValueError("sinr_aggregate must be 'mean' or 'min'")

        tau = self.pilot_len
        if tau < 1 or tau > self.tau_c:
            raise ValueError(f"need 1 <= tau <= tau_c, got tau={tau}, tau_c={self.tau_c}")
        if self.pilot_mode == "orthogonal-ci" and tau < self.K_total:
            raise ValueError("orthogonal pilots need tau >= K_total")
        if self.pilot_mode == "gold-prb" and (tau != 24 or self.tau_c != 168):
            raise ValueError("gold-prb mode requires tau = 24 and tau_c = 168")

        if not 0.0 <= self.drop_fraction < 1.0:
            raise ValueError("drop_fraction must lie in [0, 1)")
        if self.lambda_active < 0 or self.lambda_active > self.K_total:
            raise ValueError("need 0 <= lambda_active <= K_total")
        if self.population_size < self.K_total:
            raise ValueError("K_pop must be at least K_total")
        if self.population_size - self.n_dropped < self.K_total:
            raise ValueError("dropping leaves fewer than K_total retained UEs")

        for name in ("bandwidth_hz", "subcarrier_spacing_hz", "carrier_frequency_hz",
                     "cell_radius_m", "delay_spread_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.rho_p is not None and self.rho_p <= 0:
            raise ValueError("rho_p must be strictly positive")
        if self.rho_u is not None and self.rho_u <= 0:
            raise ValueError("rho_u must be strictly positive")
        if not 0.0 < self.target_p_fa < 1.0:
            raise ValueError("target_p_fa must lie in (0, 1)")
        if self.n_taps < 1:
            raise ValueError("n_taps must be at least 1")
        if not 0.0 <= self.antenna_corr < 1.0:
            raise ValueError("antenna_corr must lie in [0, 1)")
        if self.n_subbands is not None and self.n_subbands < 1:
            raise ValueError("n_subbands must be at least 1")
        if self.cell_radius_m <= self.min_distance():
            raise ValueError("cell_radius_m must exceed the minimum UE distance")

        if self.detector_id == "np" and self.pilot_mode != "orthogonal-ci":
            raise ValueError("np detector requires orthogonal pilots")
        if self.detector_id == "prb-ml" and self.pilot_mode != "gold-prb":
            raise ValueError("prb-ml detector requires gold-prb pilots")
        if self.estimator_id == "ci-perue" and self.pilot_mode != "orthogonal-ci":
            raise ValueError("ci-perue estimator requires orthogonal pilots")
        if self.estimator_id == "prb" and self.pilot_mode != "gold-prb":
            raise ValueError("prb estimator requires gold-prb pilots")
        if self.estimator_id == "ci-diag" and self.pilot_mode == "gold-prb":
            raise ValueError("ci-diag estimator is only defined for CI pilot modes")
        return self


@dataclass
class UEPopulation:
    """Deployed UEs: placement, large-scale gains, power control, service flags."""

    distance_m: np.ndarray
    angle_rad: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    retained: np.ndarray
    authorized: np.ndarray  # population indices of the K_total pilot-holding UEs

    @property
    def size(self) -> int:
        return self.beta.size

    def authorized_beta(self) -> np.ndarray:
        return self.beta[self.authorized]

    def authorized_eta(self) -> np.ndarray:
        return self.eta[self.authorized]


@dataclass
class ActivityPattern:
    """Which of the K authorized UEs transmit in this interval."""

    indicator: np.ndarray  # {0,1}^K
    active: np.ndarray     # sorted indices into the authorized set

    @property
    def count(self) -> int:
        return int(self.active.size)


def pathloss_db(scenario: Scenario, distance_2d_m: np.ndarray) -> np.ndarray:
    """Median pathloss in dB at the given 2-D distances."""
    d2d = np.asarray(distance_2d_m, dtype=float)
    fc_ghz = scenario.carrier_frequency_hz / 1e9
    h_bs = scenario.bs_height()
    h_ue = scenario.ue_height()
    d3d = np.sqrt(d2d ** 2 + (h_bs - h_ue) ** 2)
    model = scenario.pathloss_model_id

    if model == "log-distance":
        return scenario.pathloss_ref_db + 10.0 * scenario.pathloss_exponent * np.log10(d3d)

    # Dual-slope LoS floor shared by the urban models; effective heights are
    # reduced by the 1 m environment height.
    c = 299792458.0
    d_bp = 4.0 * (h_bs - 1.0) * (h_ue - 1.0) * scenario.carrier_frequency_hz / c
    log_d = np.log10(d3d)
    if model == "uma-nlos":
        pl_los_near = 28.0 + 22.0 * log_d + 20.0 * np.log10(fc_ghz)
        pl_los_far = (28.0 + 40.0 * log_d + 20.0 * np.log10(fc_ghz)
                      - 9.0 * np.log10(d_bp ** 2 + (h_bs - h_ue) ** 2))
        pl_los = np.where(d2d <= d_bp, pl_los_near, pl_los_far)
        pl_nlos = (13.54 + 39.08 * log_d + 20.0 * np.log10(fc_ghz)
                   - 0.6 * (h_ue - 1.5))
        return np.maximum(pl_los, pl_nlos)
    if model == "umi-nlos":
        pl_los_near = 32.4 + 21.0 * log_d + 20.0 * np.log10(fc_ghz)
        pl_los_far = (32.4 + 40.0 * log_d + 20.0 * np.log10(fc_ghz)
                      - 9.5 * np.log10(d_bp ** 2 + (h_bs - h_ue) ** 2))
        pl_los = np.where(d2d <= d_bp, pl_los_near, pl_los_far)
        pl_nlos = (22.4 + 35.3 * log_d + 21.3 * np.log10(fc_ghz)
                   - 0.3 * (h_ue - 1.5))
        return np.maximum(pl_los, pl_nlos)
    raise ValueError(f"unknown pathloss model {model!r}")


def open_loop_power_control(population: UEPopulation) -> np.ndarray:
    """Power coefficients inverting large-scale fading over the retained set.

    The weakest retained UE transmits at full power (eta = 1); stronger UEs
    scale down so all retained UEs are received at equal average power.
    Dropped UEs get eta = 0.
    """
    retained = population.retained
    if not retained.any():
        raise ValueError("all UEs dropped; power control undefined")
    eta = np.zeros(population.size)
    beta_min = population.beta[retained].min()
    eta[retained] = beta_min / population.beta[retained]
    return eta


def build_population(scenario: Scenario, rng: np.random.Generator) -> UEPopulation:
    """Place UEs uniformly in the cell and derive their large-scale state.

    Placement is area-uniform over the annulus between the minimum distance
    and the cell radius. Draw order (radius, angle, shadowing, authorized
    subset) is fixed so a seeded generator reproduces the population exactly.
    """
    n = scenario.population_size
    r_min = scenario.min_distance()
    r_max = scenario.cell_radius_m
    u = rng.random(n)
    distance = np.sqrt(r_min ** 2 + (r_max ** 2 - r_min ** 2) * u)
    angle = rng.random(n) * 2.0 * np.pi
    shadow = rng.normal(0.0, scenario.shadowing_db(), n)
    loss_db = pathloss_db(scenario, distance) + shadow
    beta = 10.0 ** (-loss_db / 10.0)

    retained = np.ones(n, dtype=bool)
    n_drop = scenario.n_dropped
    if n_drop:
        retained[np.argsort(beta)[:n_drop]] = False

    population = UEPopulation(distance_m=distance, angle_rad=angle, beta=beta,
                              eta=np.zeros(n), retained=retained,
                              authorized=np.empty(0, dtype=int))
    if scenario.power_control == "open-loop":
        population.eta = open_loop_power_control(population)
    else:
        population.eta = retained.astype(float)

    retained_idx = np.flatnonzero(retained)
    if scenario.K_total == retained_idx.size:
        population.authorized = retained_idx
    else:
        population.authorized = np.sort(
            rng.choice(retained_idx, size=scenario.K_total, replace=False))
    return population


def draw_activity(scenario: Scenario, rng: np.random.Generator) -> ActivityPattern:
    """Poisson-many active UEs, clamped to [0, K_total], uniform over pilots."""
    n = int(min(rng.poisson(scenario.lambda_active), scenario.K_total))
    active = np.sort(rng.choice(scenario.K_total, size=n, replace=False))
    indicator = np.zeros(scenario.K_total, dtype=np.int8)
    indicator[active] = 1
    return ActivityPattern(indicator=indicator, active=active)


# -- configuration files ---------------------------------------------------

_FIELD_TYPES = {f.name: f for f in dataclasses.fields(Scenario)}


def _coerce(name: str, raw: str):
    """Parse a config/CLI string into the field's natural type."""
    text = raw.strip()
    if text.lower() in ("none", ""):
        return None
    f = _FIELD_TYPES[name]
    base = f.type.replace(" | None", "") if isinstance(f.type, str) else f.type
    if base == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean field {name} from {raw!r}")
    if base == "int":
        return int(text)
    if base == "float":
        return float(text)
    return text


def load_scenario(path: str, overrides: dict | None = None) -> Scenario:
    """Read a Scenario from an INI-style file, then apply overrides.

    Section names are ignored; keys anywhere in the file must match Scenario
    field names. ``overrides`` maps field name to an already-typed value or a
    string (strings are coerced like file values).
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str  # field names are case-sensitive (M vs m)
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)
    values: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown scenario field {key!r} in {path}")
            values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown scenario field {key!r}")
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    return Scenario(**values).validate()
