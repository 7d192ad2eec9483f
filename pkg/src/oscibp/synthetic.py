"""Synthetic cuff-deflation recordings with known ground truth.

Each record is a linear deflation ramp carrying one raised-cosine beat
per heart period, scaled by an asymmetric Gaussian amplitude envelope.
The envelope is constructed so that the conventional fixed-ratio
readout is exact: the mean arterial point sits at the envelope peak and
the systolic/diastolic pressures are where the envelope crosses the
configured ratios of the peak amplitude. That makes every record its
own oracle for end-to-end checks.

A reference fixed-ratio estimator (maximum-amplitude algorithm) is
included for closing the loop without any learned model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigurationError, RatioNotReachedError
from .seeds import STREAM_SYNTH, child_seed
from .signal_prep import (
    CuffDeflationRecord,
    OscillometricWaveform,
    detect_peaks,
    flag_outliers,
    segment_pulses,
)

__all__ = [
    "SyntheticCohortConfig",
    "SyntheticTruth",
    "SYS_RATIO",
    "DIA_RATIO",
    "PEAK_AMPLITUDE",
    "envelope_geometry",
    "envelope_amplitude",
    "generate_record",
    "generate_cohort",
    "fixed_ratio_readout",
    "maa_oracle",
]

SYS_RATIO = 0.55
DIA_RATIO = 0.75

PEAK_AMPLITUDE = 3.0          # mmHg, envelope maximum
MIN_PULSE_PRESSURE = 15.0     # smallest sbp - dbp the generator will draw
START_MARGIN = 30.0           # deflation starts this far above sbp
STOP_MARGIN = 20.0            # and ends this far below dbp (floor 20 mmHg)
AMPLITUDE_ARTIFACT_GAIN = 15.0
DURATION_ARTIFACT_STRETCH = 2.0
RECORD_JITTER = 3.0           # per-record BP wobble within a subject, mmHg

# ratio r of the peak is crossed sqrt(-2 ln r) standard deviations out
_SYS_Z = float(np.sqrt(-2.0 * np.log(SYS_RATIO)))
_DIA_Z = float(np.sqrt(-2.0 * np.log(DIA_RATIO)))


@dataclass
class SyntheticCohortConfig:
    n_subjects: int = 10
    records_per_subject: int = 5
    sbp_range: tuple[float, float] = (78.0, 199.0)
    dbp_range: tuple[float, float] = (36.0, 104.0)
    heart_rate_range: tuple[float, float] = (60.0, 100.0)
    deflation_rate: float = 3.0
    envelope_width: float = 25.0
    noise_sd: float = 0.0
    artifact_rate: float = 0.0
    sampling_rate: float = 100.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_subjects < 1 or self.records_per_subject < 1:
            raise InvalidConfigurationError("cohort must have subjects and records")
        for name in ("sbp_range", "dbp_range", "heart_rate_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo < hi):
                raise InvalidConfigurationError(f"{name} must satisfy 0 < lo < hi")
        if self.sbp_range[1] < self.dbp_range[1] + MIN_PULSE_PRESSURE:
            raise InvalidConfigurationError(
                "sbp_range must extend at least "
                f"{MIN_PULSE_PRESSURE:g} mmHg above dbp_range")
        for name in ("deflation_rate", "envelope_width", "sampling_rate"):
            if getattr(self, name) <= 0:
                raise InvalidConfigurationError(f"{name} must be positive")
        if self.noise_sd < 0 or self.artifact_rate < 0:
            raise InvalidConfigurationError("noise_sd and artifact_rate must be >= 0")


@dataclass
class SyntheticTruth:
    """Ground truth for one generated record.

    injected_artifact_indices index into beat_times; kinds holds the
    matching artifact type, "amplitude" or "duration".
    """

    sbp: float
    dbp: float
    map: float
    beat_times: np.ndarray                 # seconds, one entry per beat peak
    injected_artifact_indices: list[int] = field(default_factory=list)
    injected_artifact_kinds: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not (self.dbp < self.map < self.sbp):
            raise InvalidConfigurationError(
                f"need dbp < map < sbp, got {self.dbp}, {self.map}, {self.sbp}")


def envelope_geometry(sbp: float, dbp: float,
                      envelope_width: float) -> tuple[float, float, float]:
    """Place the envelope peak and side widths for exact ratio crossings.

    Returns (map, sigma_below, sigma_above). The peak sits between 1/4
    and 1/2 of the pulse pressure above dbp, defaulting to the
    configured width when that fits; the side widths are then solved so
    the envelope passes through the diastolic ratio at dbp and the
    systolic ratio at sbp.
    """
    pp = sbp - dbp
    offset = float(np.clip(_DIA_Z * envelope_width, 0.25 * pp, 0.5 * pp))
    map_ = dbp + offset
    sigma_below = offset / _DIA_Z
    sigma_above = (sbp - map_) / _SYS_Z
    return map_, sigma_below, sigma_above


def envelope_amplitude(cp: float, map_: float, sigma_below: float,
                       sigma_above: float) -> float:
    """Gaussian pulse amplitude at cuff pressure cp, in mmHg."""
    sigma = sigma_below if cp < map_ else sigma_above
    return PEAK_AMPLITUDE * float(np.exp(-((cp - map_) ** 2) / (2.0 * sigma * sigma)))


def generate_record(config: SyntheticCohortConfig, seed: int,
                    subject_id: str = "s0", record_id: str = "r0",
                    sbp: float | None = None,
                    dbp: float | None = None) -> tuple[CuffDeflationRecord, SyntheticTruth]:
    """Synthesize one deflation recording.

    The cuff ramps linearly from sbp + 30 down to max(dbp - 20, 20) at
    the configured rate. Beats are raised cosines of one heart period,
    each scaled by the envelope evaluated at the cuff pressure of its
    peak. Noise and artifacts are added per config. Fully deterministic
    for a given (config, seed, ids, overrides).
    """
    config.validate()
    rng = np.random.default_rng(seed)

    if dbp is None:
        dbp = float(rng.uniform(*config.dbp_range))
    if sbp is None:
        lo = max(config.sbp_range[0], dbp + MIN_PULSE_PRESSURE)
        sbp = float(rng.uniform(lo, config.sbp_range[1]))
    if not sbp > dbp:
        raise InvalidConfigurationError(f"sbp {sbp} must exceed dbp {dbp}")
    hr = float(rng.uniform(*config.heart_rate_range))

    map_, sig_b, sig_a = envelope_geometry(sbp, dbp, config.envelope_width)
    start = sbp + START_MARGIN
    stop = max(dbp - STOP_MARGIN, 20.0)
    duration = (start - stop) / config.deflation_rate
    fs = config.sampling_rate
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    slow = start - config.deflation_rate * t

    beat_dur = 60.0 / hr
    n_beats = int(duration / beat_dur)
    artifact_count = int(rng.poisson(config.artifact_rate)) if config.artifact_rate else 0
    # segmentation can never produce a pulse for the first or last beats
    # (pulses run trough to trough), so artifacts land on interior beats
    # where the cleaning stage can see them
    eligible = np.arange(2, n_beats - 2) if n_beats > 4 else np.arange(n_beats)
    chosen = (sorted(rng.choice(eligible, size=min(artifact_count, len(eligible)),
                                replace=False).tolist())
              if artifact_count else [])
    kind_of = {b: ("amplitude" if rng.integers(2) == 0 else "duration")
               for b in chosen}

    pulses = np.zeros(n)
    beat_times: list[float] = []
    art_idx: list[int] = []
    art_kind: list[str] = []
    for b in range(n_beats):
        t0 = b * beat_dur
        dur = beat_dur
        kind = kind_of.get(b)
        if kind == "duration":
            dur = beat_dur * DURATION_ARTIFACT_STRETCH
        peak_t = t0 + dur / 2.0
        if peak_t >= duration:
            continue
        cp = start - config.deflation_rate * peak_t
        if kind == "amplitude":
            # motion-spike artifact: a beat at 15x the nominal peak
            # amplitude, overwhelming the envelope wherever it lands
            amp = AMPLITUDE_ARTIFACT_GAIN * PEAK_AMPLITUDE
        else:
            amp = envelope_amplitude(cp, map_, sig_b, sig_a)
        i0 = int(round(t0 * fs))
        i1 = min(n, int(round((t0 + dur) * fs)))
        tt = t[i0:i1] - t0
        # raised-cosine template with its mean removed: a pulsation with
        # no sub-cutoff content, so the slow component stays unbiased
        pulses[i0:i1] += amp * -0.5 * np.cos(2.0 * np.pi * tt / dur)
        if kind is not None:
            art_idx.append(len(beat_times))
            art_kind.append(kind)
        beat_times.append(peak_t)

    x = slow + pulses
    if config.noise_sd > 0:
        x = x + rng.normal(0.0, config.noise_sd, size=n)

    record = CuffDeflationRecord(subject_id=subject_id, record_id=record_id,
                                 sampling_rate=fs, samples=x,
                                 ref_sbp=sbp, ref_dbp=dbp)
    truth = SyntheticTruth(sbp=sbp, dbp=dbp, map=map_,
                           beat_times=np.array(beat_times),
                           injected_artifact_indices=art_idx,
                           injected_artifact_kinds=art_kind)
    truth.validate()
    return record, truth


def generate_cohort(config: SyntheticCohortConfig) -> list[tuple[CuffDeflationRecord, SyntheticTruth]]:
    """Generate n_subjects x records_per_subject labeled records.

    Each subject's BP is drawn once; individual records wobble around it
    by up to +-3 mmHg to mimic repeated visits, clipped back into the
    configured ranges. Record seeds derive from the cohort seed, so
    cohorts are reproducible element by element.
    """
    config.validate()
    out = []
    for s in range(config.n_subjects):
        srng = np.random.default_rng(child_seed(config.seed, STREAM_SYNTH, s))
        dbp0 = float(srng.uniform(*config.dbp_range))
        lo = max(config.sbp_range[0], dbp0 + MIN_PULSE_PRESSURE)
        sbp0 = float(srng.uniform(lo, config.sbp_range[1]))
        for r in range(config.records_per_subject):
            sbp = float(np.clip(sbp0 + srng.uniform(-RECORD_JITTER, RECORD_JITTER),
                                *config.sbp_range))
            dbp = float(np.clip(dbp0 + srng.uniform(-RECORD_JITTER, RECORD_JITTER),
                                *config.dbp_range))
            rec, truth = generate_record(
                config, seed=child_seed(config.seed, STREAM_SYNTH, s, r),
                subject_id=f"s{s:03d}", record_id=f"r{r:02d}", sbp=sbp, dbp=dbp)
            out.append((rec, truth))
    return out


# ---------------------------------------------------------------------------
# fixed-ratio reference readout


def fixed_ratio_readout(pressures: np.ndarray, amplitudes: np.ndarray,
                        sys_ratio: float = SYS_RATIO,
                        dia_ratio: float = DIA_RATIO) -> tuple[float, float, float]:
    """Read (sbp, dbp, map) off a sampled amplitude envelope.

    map is the pressure of the largest amplitude, refined by the vertex
    of the parabola through the three samples around it so the estimate
    does not quantize to the beat spacing; sbp is where the envelope
    first falls to sys_ratio of the maximum above map, dbp where it
    falls to dia_ratio below map, both linearly interpolated between
    the bracketing samples. A ratio of exactly 1 collapses to the peak.
    """
    if not 0 < sys_ratio <= 1 or not 0 < dia_ratio <= 1:
        raise InvalidConfigurationError("ratios must lie in (0, 1]")
    press = np.asarray(pressures, dtype=np.float64)
    amp = np.asarray(amplitudes, dtype=np.float64)
    if press.shape != amp.shape or press.ndim != 1 or len(press) < 2:
        raise InvalidConfigurationError("need matching 1D envelope samples, >= 2 points")
    order = np.argsort(press, kind="stable")
    press, amp = press[order], amp[order]

    m = int(np.argmax(amp))
    a_max = float(amp[m])
    map_ = float(press[m])
    if 0 < m < len(amp) - 1:
        # vertex of the quadratic through the three points around the
        # peak; kept only when it is a genuine interior maximum
        coef = np.polyfit(press[m - 1:m + 2] - map_, amp[m - 1:m + 2], 2)
        if coef[0] < 0:
            vertex = map_ - coef[1] / (2.0 * coef[0])
            map_ = float(np.clip(vertex, press[m - 1], press[m + 1]))

    def crossing(idx_range, target):
        prev = m
        for i in idx_range:
            if amp[i] <= target:
                a0, a1 = amp[prev], amp[i]
                p0, p1 = press[prev], press[i]
                if a1 == a0:
                    return float(p1)
                return float(p0 + (target - a0) * (p1 - p0) / (a1 - a0))
            prev = i
        side = "above" if idx_range.step > 0 else "below"
        raise RatioNotReachedError(
            f"envelope never falls to {target / a_max:.3g} of its maximum {side} the peak")

    sbp = map_ if sys_ratio == 1.0 else crossing(range(m + 1, len(amp)), sys_ratio * a_max)
    dbp = map_ if dia_ratio == 1.0 else crossing(range(m - 1, -1, -1), dia_ratio * a_max)
    return sbp, dbp, map_


def maa_oracle(omw: OscillometricWaveform, slow: np.ndarray | None = None,
               sys_ratio: float = SYS_RATIO,
               dia_ratio: float = DIA_RATIO) -> tuple[float, float, float]:
    """Maximum-amplitude readout of (sbp, dbp, map) from the waveform.

    Pulse amplitudes of non-outlier beats form the envelope over their
    occurrence pressures; the fixed-ratio readout is then applied. The
    envelope amplitude is measured from the mean of the two bounding
    troughs, not a single one, so a sloping envelope does not skew the
    peak location. The slow trace defaults to the waveform's own slow
    component.
    """
    if slow is None:
        slow = omw.slow_component
    slow = np.asarray(slow, dtype=np.float64)
    pulses = flag_outliers(segment_pulses(omw, detect_peaks(omw)))
    kept = [p for p in pulses if not p.is_outlier]
    press = np.array([slow[p.peak_index] for p in kept])
    amp = np.array([p.peak_amp - 0.5 * (p.samples[0] + p.samples[-1]) for p in kept])
    return fixed_ratio_readout(press, amp, sys_ratio, dia_ratio)
