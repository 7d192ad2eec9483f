"""Cuff waveform preparation: component split, denoising, pulse detection,
segmentation, outlier flagging, and amplitude normalization.

The deflation record is separated into a slow pressure ramp and the
oscillometric waveform (omw) by zero-phase high-pass filtering, so the
two components always sum back to the original samples. Pulses are then
located with a multiscale local-maxima scan (AMPD) run over overlapping
windows, delimited by troughs chosen near each peak, and cleaned with
duration and amplitude outlier rules before max-abs normalization.

All filtering is zero-phase (forward-backward) so pulse morphology is
never skewed by filter phase.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.signal as sg

from .errors import (
    DegenerateWaveformError,
    InsufficientPulsesError,
    InvalidConfigurationError,
    ShortRecordError,
)

__all__ = [
    "CuffDeflationRecord",
    "OscillometricWaveform",
    "PulseSegment",
    "split_components",
    "denoise",
    "detect_peaks",
    "segment_pulses",
    "flag_outliers",
    "normalize_omw",
    "trough_threshold",
    "modified_zscore",
    "preprocess_record",
]

MIN_RECORD_SECONDS = 10.0
DENOISE_CUTOFF_HZ = 10.0
DENOISE_ORDER = 4
HP_ORDER = 2
TROUGH_LOCALITY = 5          # samples on each side a trough must undercut
DURATION_TOLERANCE_S = 0.3   # band around the median pulse duration
MZ_THRESHOLD = 10.0          # modified z-score cut for amplitude outliers
DEDUP_SECONDS = 0.2          # peaks closer than this are one beat


@dataclass
class CuffDeflationRecord:
    """Raw cuff pressure samples for one measurement."""

    subject_id: str
    record_id: str
    sampling_rate: float
    samples: np.ndarray
    ref_sbp: float
    ref_dbp: float

    def validate(self) -> None:
        if self.sampling_rate <= 0:
            raise InvalidConfigurationError("sampling_rate must be positive")
        if len(self.samples) < MIN_RECORD_SECONDS * self.sampling_rate:
            raise ShortRecordError(
                f"record {self.subject_id}/{self.record_id} shorter than "
                f"{MIN_RECORD_SECONDS:g} s")
        if not (self.ref_sbp > self.ref_dbp > 0):
            raise InvalidConfigurationError(
                f"need ref_sbp > ref_dbp > 0, got {self.ref_sbp}, {self.ref_dbp}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sampling_rate


@dataclass
class OscillometricWaveform:
    """High-pass component (samples) plus the slow deflation component."""

    samples: np.ndarray
    slow_component: np.ndarray
    sampling_rate: float

    def validate(self) -> None:
        if self.samples.shape != self.slow_component.shape:
            raise InvalidConfigurationError("omw and slow component lengths differ")


@dataclass
class PulseSegment:
    """One pulse between consecutive troughs.

    ``samples`` is the waveform slice from ``start_index`` through
    ``end_index`` inclusive; the peak and the amplitudes refer to the
    contained beat, with the trough that closes the pulse as the
    amplitude reference.
    """

    start_index: int
    end_index: int
    peak_index: int
    peak_amp: float
    trough_amp: float
    pulse_amp: float
    duration: float
    samples: np.ndarray
    is_outlier: bool = False


# ---------------------------------------------------------------------------
# filtering


def split_components(record: CuffDeflationRecord,
                     hp_cutoff: float = 0.3) -> OscillometricWaveform:
    """Separate the record into oscillometric and slow components.

    The omw is the zero-phase high-pass of the samples at ``hp_cutoff``;
    the slow component is the remainder, so the two sum back exactly.
    """
    fs = record.sampling_rate
    if hp_cutoff <= 0 or hp_cutoff >= fs / 2:
        raise InvalidConfigurationError(
            f"hp_cutoff {hp_cutoff} must be in (0, {fs / 2}) for fs={fs}")
    x = np.asarray(record.samples, dtype=np.float64)
    if len(x) <= int(fs / hp_cutoff):
        raise ShortRecordError(
            f"record has {len(x)} samples, need more than one {hp_cutoff} Hz period")
    sos = sg.butter(HP_ORDER, hp_cutoff, btype="highpass", fs=fs, output="sos")
    # generous padding lets the reflected extension settle, so a pure ramp
    # is annihilated to float noise
    padlen = min(len(x) - 1, int(10 * fs / hp_cutoff))
    omw = sg.sosfiltfilt(sos, x, padlen=padlen)
    return OscillometricWaveform(samples=omw, slow_component=x - omw, sampling_rate=fs)


def denoise(omw: OscillometricWaveform,
            cutoff: float = DENOISE_CUTOFF_HZ) -> OscillometricWaveform:
    """Zero-phase 4th-order Butterworth low-pass on the omw samples."""
    fs = omw.sampling_rate
    if fs <= 2 * cutoff:
        raise InvalidConfigurationError(
            f"sampling rate {fs} Hz too low for a {cutoff} Hz low-pass")
    sos = sg.butter(DENOISE_ORDER, cutoff, btype="lowpass", fs=fs, output="sos")
    clean = sg.sosfiltfilt(sos, np.asarray(omw.samples, dtype=np.float64))
    return OscillometricWaveform(samples=clean, slow_component=omw.slow_component,
                                 sampling_rate=fs)


# ---------------------------------------------------------------------------
# peak detection (AMPD with overlapping windows)


def _ampd(x: np.ndarray, max_scale: int | None = None) -> np.ndarray:
    """Multiscale local-maxima scan of one window.

    Builds the boolean scalogram lsm[k-1, i] = x[i] > x[i +- (k)] with
    out-of-range comparisons treated as true, picks the scale with the
    most maxima (edge-weighted), and keeps indices that are maxima at
    every scale up to it.
    """
    x = sg.detrend(np.asarray(x, dtype=np.float64))
    n = len(x)
    scales = n // 2 if max_scale is None else min(n // 2, int(max_scale))
    if scales < 1 or n < 3:
        return np.zeros(0, dtype=np.intp)
    lsm = np.ones((scales, n), dtype=bool)
    for k in range(1, scales + 1):
        lsm[k - 1, : n - k] &= x[: n - k] > x[k:]
        lsm[k - 1, k:] &= x[k:] > x[: n - k]
    counts = lsm.sum(axis=1) * np.arange(n - 1, n - 1 - scales, -1)
    best = int(np.argmax(counts)) + 1
    return np.nonzero(lsm[:best].all(axis=0))[0]


def detect_peaks(omw: OscillometricWaveform, window_s: float = 6.0,
                 max_scale_s: float = 2.0) -> np.ndarray:
    """Find pulse peak indices in the denoised omw.

    One full-signal AMPD pass estimates the beat period; the window
    length is then re-estimated from the median inter-peak interval and
    AMPD runs again over 50%-overlapping windows. Merged peaks within
    0.2 s are deduplicated keeping the taller sample.

    Parameters
    ----------
    window_s : float
        Initial window duration, seconds. Should cover at least two
        expected beat periods.
    max_scale_s : float
        Largest half-period considered by the scan, seconds.

    Returns
    -------
    np.ndarray of monotonically increasing sample indices, each a strict
    local maximum of the input.
    """
    x = np.asarray(omw.samples, dtype=np.float64)
    fs = omw.sampling_rate
    n = len(x)
    max_scale = max(1, int(max_scale_s * fs))

    first_pass = _ampd(x, max_scale=max_scale)
    if len(first_pass) >= 8:
        # re-estimate the window from the beat rate; keep it clamped so
        # a degraded first pass cannot disable the windowed scan
        median_interval = float(np.median(np.diff(first_pass))) / fs
        window_s = float(np.clip(4.0 * median_interval, 2.0, 12.0))

    win = int(window_s * fs)
    if win >= n:
        merged = first_pass if len(first_pass) else _ampd(x, max_scale=max_scale)
    else:
        hop = max(1, win // 2)
        found: set[int] = set()
        start = 0
        while True:
            stop = min(start + win, n)
            for p in _ampd(x[start:stop], max_scale=max_scale):
                found.add(start + int(p))
            if stop >= n:
                break
            start += hop
        merged = np.array(sorted(found), dtype=np.intp)

    # candidates come from detrended windows and may sit a sample or two
    # off the raw-signal peak; hill-climb each to the nearest local max
    snapped = []
    for p in merged:
        p = int(p)
        while p + 1 < n and x[p + 1] > x[p]:
            p += 1
        while p - 1 >= 0 and x[p - 1] > x[p]:
            p -= 1
        snapped.append(p)
    snapped.sort()

    # deduplicate beats split across window seams: cluster by gap, keep
    # the tallest sample of each cluster
    min_gap = DEDUP_SECONDS * fs
    peaks: list[int] = []
    for p in snapped:
        if peaks and p - peaks[-1] < min_gap:
            if x[p] > x[peaks[-1]]:
                peaks[-1] = p
        else:
            peaks.append(p)

    if len(peaks) < 3:
        raise InsufficientPulsesError(
            f"found {len(peaks)} peaks, need at least 3 to segment pulses")
    return np.array(peaks, dtype=np.intp)


# ---------------------------------------------------------------------------
# segmentation


def trough_threshold(peak_amp: float, min_amp: float) -> float:
    """Depth margin below the next peak that a trough must clear:
    4/5 of the peak-to-minimum range."""
    return 4.0 * (peak_amp - min_amp) / 5.0


def _find_trough(x: np.ndarray, min_idx: int, next_peak: int, level: float) -> int:
    """Nearest-to-peak sample in [min_idx, next_peak) that is the lowest
    among its five neighbors on each side and stays below ``level``;
    falls back to the inter-peak minimum."""
    n = len(x)
    for j in range(next_peak - 1, min_idx - 1, -1):
        if x[j] >= level:
            continue
        lo = max(0, j - TROUGH_LOCALITY)
        hi = min(n, j + TROUGH_LOCALITY + 1)
        if x[j] <= x[lo:hi].min():
            return j
    return min_idx


def segment_pulses(omw: OscillometricWaveform, peaks: np.ndarray) -> list[PulseSegment]:
    """Cut the omw into pulses delimited by consecutive troughs.

    For each adjacent peak pair a trough is located between the
    inter-peak minimum and the second peak; pulses are the sample runs
    between consecutive troughs, so ``len(peaks) - 2`` pulses come back,
    each containing exactly one interior peak.
    """
    x = np.asarray(omw.samples, dtype=np.float64)
    peaks = np.asarray(peaks, dtype=np.intp)
    if len(peaks) < 3:
        raise InsufficientPulsesError("need at least 3 peaks to form one pulse")
    troughs: list[int] = []
    for i in range(len(peaks) - 1):
        p0, p1 = int(peaks[i]), int(peaks[i + 1])
        seg = x[p0 + 1:p1]
        if seg.size == 0:
            raise InsufficientPulsesError(f"peaks {p0} and {p1} are adjacent samples")
        min_idx = p0 + 1 + int(np.argmin(seg))
        thr = trough_threshold(x[p1], x[min_idx])
        troughs.append(_find_trough(x, min_idx, p1, x[p1] - thr))

    fs = omw.sampling_rate
    pulses: list[PulseSegment] = []
    for i in range(len(troughs) - 1):
        t0, t1 = troughs[i], troughs[i + 1]
        peak = int(peaks[i + 1])
        pulses.append(PulseSegment(
            start_index=t0,
            end_index=t1,
            peak_index=peak,
            peak_amp=float(x[peak]),
            trough_amp=float(x[t1]),
            pulse_amp=float(x[peak] - x[t1]),
            duration=(t1 - t0) / fs,
            samples=x[t0:t1 + 1].copy(),
        ))
    return pulses


# ---------------------------------------------------------------------------
# outlier rules and normalization


def modified_zscore(amplitudes: np.ndarray) -> np.ndarray:
    """0.6745 * (A - mean(A)) / MAD(A), with MAD around the median.

    Returns all zeros when the MAD is zero, which disables the
    amplitude criterion for near-identical pulses.
    """
    a = np.asarray(amplitudes, dtype=np.float64)
    mad = float(np.median(np.abs(a - np.median(a))))
    if mad == 0.0:
        return np.zeros_like(a)
    return 0.6745 * (a - a.mean()) / mad


def flag_outliers(pulses: list[PulseSegment]) -> list[PulseSegment]:
    """Return pulses with ``is_outlier`` set.

    A pulse is flagged when its duration leaves the band of +-0.3 s
    around the median duration, or when the modified z-score of its
    amplitude exceeds 10.
    """
    if not pulses:
        return []
    durations = np.array([p.duration for p in pulses])
    med = float(np.median(durations))
    dur_bad = np.abs(durations - med) > DURATION_TOLERANCE_S
    mz = modified_zscore(np.array([p.pulse_amp for p in pulses]))
    amp_bad = mz > MZ_THRESHOLD
    return [replace(p, is_outlier=bool(d or a))
            for p, d, a in zip(pulses, dur_bad, amp_bad)]


def normalize_omw(omw: OscillometricWaveform,
                  pulses: list[PulseSegment]) -> tuple[OscillometricWaveform, list[PulseSegment]]:
    """Scale so the largest non-outlier pulse amplitude becomes one.

    Divides the omw samples and every pulse's amplitudes and samples by
    the max absolute non-outlier amplitude; the slow component is left
    in mmHg. Safe to apply twice: the second pass divides by one.
    """
    kept = [p for p in pulses if not p.is_outlier]
    if not kept:
        raise InsufficientPulsesError("no non-outlier pulses to normalize against")
    scale = max(abs(p.pulse_amp) for p in kept)
    if scale == 0.0:
        raise DegenerateWaveformError("all pulse amplitudes are zero")
    scaled = OscillometricWaveform(
        samples=np.asarray(omw.samples, dtype=np.float64) / scale,
        slow_component=omw.slow_component,
        sampling_rate=omw.sampling_rate,
    )
    new_pulses = [replace(
        p,
        peak_amp=p.peak_amp / scale,
        trough_amp=p.trough_amp / scale,
        pulse_amp=p.pulse_amp / scale,
        samples=p.samples / scale,
    ) for p in pulses]
    return scaled, new_pulses


# ---------------------------------------------------------------------------
# convenience pipeline


def preprocess_record(record: CuffDeflationRecord, hp_cutoff: float = 0.3,
                      lp_cutoff: float = DENOISE_CUTOFF_HZ,
                      window_s: float = 6.0):
    """Run the full preparation chain on one record.

    Returns ``(omw, pulses, peaks)`` where the omw is denoised and
    normalized and the pulses carry outlier flags.
    """
    record.validate()
    omw = denoise(split_components(record, hp_cutoff=hp_cutoff), cutoff=lp_cutoff)
    peaks = detect_peaks(omw, window_s=window_s)
    pulses = flag_outliers(segment_pulses(omw, peaks))
    omw, pulses = normalize_omw(omw, pulses)
    return omw, pulses, peaks
