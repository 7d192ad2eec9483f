"""Synthetic generator tests: envelope construction with exact ratio
crossings, record determinism, cohort shape, the fixed-ratio readout on
closed-form envelopes, and pipeline closure against generator truth."""
import numpy as np
import pytest

from oscibp.errors import (
    InsufficientPulsesError,
    InvalidConfigurationError,
    RatioNotReachedError,
)
from oscibp.signal_prep import (
    denoise,
    detect_peaks,
    flag_outliers,
    segment_pulses,
    split_components,
)
from oscibp.synthetic import (
    DIA_RATIO,
    PEAK_AMPLITUDE,
    SYS_RATIO,
    SyntheticCohortConfig,
    envelope_amplitude,
    envelope_geometry,
    fixed_ratio_readout,
    generate_cohort,
    generate_record,
    maa_oracle,
)


def prep(rec):
    return denoise(split_components(rec))


class TestConfig:
    def test_defaults_valid(self):
        SyntheticCohortConfig().validate()

    @pytest.mark.parametrize("kwargs", [
        dict(n_subjects=0),
        dict(records_per_subject=0),
        dict(sbp_range=(199.0, 78.0)),
        dict(dbp_range=(-5.0, 104.0)),
        dict(sbp_range=(78.0, 110.0), dbp_range=(36.0, 104.0)),
        dict(deflation_rate=0.0),
        dict(sampling_rate=-1.0),
        dict(noise_sd=-0.1),
        dict(artifact_rate=-1.0),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidConfigurationError):
            SyntheticCohortConfig(**kwargs).validate()


class TestEnvelopeGeometry:
    @pytest.mark.parametrize("sbp,dbp", [(120.0, 80.0), (199.0, 104.0),
                                         (95.0, 40.0), (140.0, 120.0)])
    def test_ratio_crossings_exact(self, sbp, dbp):
        map_, sb, sa = envelope_geometry(sbp, dbp, 25.0)
        assert dbp < map_ < sbp
        assert envelope_amplitude(map_, map_, sb, sa) == PEAK_AMPLITUDE
        assert envelope_amplitude(sbp, map_, sb, sa) == pytest.approx(
            SYS_RATIO * PEAK_AMPLITUDE, rel=1e-12)
        assert envelope_amplitude(dbp, map_, sb, sa) == pytest.approx(
            DIA_RATIO * PEAK_AMPLITUDE, rel=1e-12)

    def test_peak_offset_clipped_into_pulse_pressure(self):
        # narrow pulse pressure forces the peak to half the span
        map_, _, _ = envelope_geometry(100.0, 90.0, 25.0)
        assert map_ == pytest.approx(95.0)
        # wide pulse pressure forces at least a quarter
        map_, _, _ = envelope_geometry(199.0, 36.0, 1.0)
        assert map_ == pytest.approx(36.0 + 0.25 * 163.0)


class TestGenerateRecord:
    CFG = SyntheticCohortConfig()

    def test_same_seed_bit_identical(self):
        r1, t1 = generate_record(self.CFG, seed=42)
        r2, t2 = generate_record(self.CFG, seed=42)
        np.testing.assert_array_equal(r1.samples, r2.samples)
        assert (t1.sbp, t1.dbp, t1.map) == (t2.sbp, t2.dbp, t2.map)
        np.testing.assert_array_equal(t1.beat_times, t2.beat_times)

    def test_different_seeds_differ(self):
        r1, _ = generate_record(self.CFG, seed=1)
        r2, _ = generate_record(self.CFG, seed=2)
        assert r1.samples.shape != r2.samples.shape or \
            not np.array_equal(r1.samples, r2.samples)

    def test_deflation_spans_declared_range(self):
        rec, truth = generate_record(self.CFG, seed=3)
        assert rec.samples[0] == pytest.approx(truth.sbp + 30.0, abs=1.0)
        stop = max(truth.dbp - 20.0, 20.0)
        assert rec.samples[-1] == pytest.approx(stop, abs=2.0)

    def test_slow_component_strictly_decreasing(self):
        rec, _ = generate_record(self.CFG, seed=4)
        omw = prep(rec)
        fs = int(rec.sampling_rate)
        coarse = omw.slow_component[::fs]
        assert np.all(np.diff(coarse) < 0)

    def test_envelope_peak_near_truth_map(self):
        rec, truth = generate_record(self.CFG, seed=5)
        omw = prep(rec)
        pulses = flag_outliers(segment_pulses(omw, detect_peaks(omw)))
        kept = [p for p in pulses if not p.is_outlier]
        best = max(kept, key=lambda p: p.pulse_amp)
        cp = omw.slow_component[best.peak_index]
        # within one beat of pressure travel
        beat_spacing = self.CFG.deflation_rate * 60.0 / 60.0
        assert abs(cp - truth.map) <= 2.0 * beat_spacing

    def test_truth_ordering(self):
        for seed in range(5):
            _, truth = generate_record(self.CFG, seed=seed)
            assert truth.dbp < truth.map < truth.sbp

    def test_label_overrides_respected(self):
        rec, truth = generate_record(self.CFG, seed=6, sbp=135.0, dbp=85.0)
        assert truth.sbp == 135.0 and truth.dbp == 85.0
        assert rec.ref_sbp == 135.0 and rec.ref_dbp == 85.0

    def test_inverted_overrides_rejected(self):
        with pytest.raises(InvalidConfigurationError):
            generate_record(self.CFG, seed=0, sbp=80.0, dbp=120.0)

    def test_noise_changes_samples(self):
        quiet, _ = generate_record(self.CFG, seed=7)
        noisy, _ = generate_record(
            SyntheticCohortConfig(noise_sd=1.0), seed=7)
        assert not np.array_equal(quiet.samples, noisy.samples)

    def test_artifacts_recorded_in_truth(self):
        cfg = SyntheticCohortConfig(artifact_rate=3.0)
        found = 0
        for seed in range(5):
            _, truth = generate_record(cfg, seed=seed)
            assert len(truth.injected_artifact_indices) == \
                len(truth.injected_artifact_kinds)
            assert all(k in ("amplitude", "duration")
                       for k in truth.injected_artifact_kinds)
            assert all(0 <= i < len(truth.beat_times)
                       for i in truth.injected_artifact_indices)
            found += len(truth.injected_artifact_indices)
        assert found > 0

    def test_beat_times_cover_record(self):
        rec, truth = generate_record(self.CFG, seed=8)
        dur = len(rec.samples) / rec.sampling_rate
        assert truth.beat_times[0] < 1.5
        assert truth.beat_times[-1] > dur - 2.5
        assert np.all(np.diff(truth.beat_times) > 0)


class TestGenerateCohort:
    def test_size_and_ids(self):
        cfg = SyntheticCohortConfig(n_subjects=4, records_per_subject=3)
        cohort = generate_cohort(cfg)
        assert len(cohort) == 12
        ids = {(r.subject_id, r.record_id) for r, _ in cohort}
        assert len(ids) == 12
        assert len({r.subject_id for r, _ in cohort}) == 4

    def test_labels_within_ranges(self):
        cfg = SyntheticCohortConfig(n_subjects=6, records_per_subject=4)
        for rec, truth in generate_cohort(cfg):
            assert cfg.sbp_range[0] <= truth.sbp <= cfg.sbp_range[1]
            assert cfg.dbp_range[0] <= truth.dbp <= cfg.dbp_range[1]
            assert truth.dbp < truth.sbp

    def test_within_subject_jitter_small(self):
        cfg = SyntheticCohortConfig(n_subjects=3, records_per_subject=5)
        cohort = generate_cohort(cfg)
        by_subject = {}
        for rec, truth in cohort:
            by_subject.setdefault(rec.subject_id, []).append(truth.sbp)
        for vals in by_subject.values():
            assert max(vals) - min(vals) <= 6.0 + 1e-9

    def test_subjects_differ(self):
        cfg = SyntheticCohortConfig(n_subjects=5, records_per_subject=1)
        sbps = [t.sbp for _, t in generate_cohort(cfg)]
        assert len(set(sbps)) == 5

    def test_deterministic(self):
        cfg = SyntheticCohortConfig(n_subjects=2, records_per_subject=2, seed=9)
        a = generate_cohort(cfg)
        b = generate_cohort(cfg)
        for (ra, ta), (rb, tb) in zip(a, b):
            np.testing.assert_array_equal(ra.samples, rb.samples)
            assert ta.sbp == tb.sbp and ta.dbp == tb.dbp


class TestFixedRatioReadout:
    def test_triangle_closed_form(self):
        press = np.arange(60.0, 141.0, 2.0)
        amp = 1.0 - np.abs(press - 100.0) / 40.0
        sbp, dbp, map_ = fixed_ratio_readout(press, amp, 0.5, 0.5)
        assert map_ == pytest.approx(100.0, abs=1e-12)
        assert sbp == pytest.approx(120.0, abs=1e-9)
        assert dbp == pytest.approx(80.0, abs=1e-9)

    def test_ratio_one_collapses_to_peak(self):
        press = np.arange(60.0, 141.0, 2.0)
        amp = 1.0 - np.abs(press - 100.0) / 40.0
        sbp, dbp, map_ = fixed_ratio_readout(press, amp, 1.0, 1.0)
        assert sbp == dbp == map_ == 100.0

    def test_input_order_irrelevant(self):
        rng = np.random.default_rng(0)
        press = np.arange(60.0, 141.0, 2.0)
        amp = 1.0 - np.abs(press - 100.0) / 40.0
        perm = rng.permutation(len(press))
        a = fixed_ratio_readout(press, amp, 0.5, 0.6)
        b = fixed_ratio_readout(press[perm], amp[perm], 0.5, 0.6)
        assert a == b

    def test_ratio_not_reached(self):
        press = np.array([90.0, 100.0, 110.0])
        # high side never falls to 0.55 of the peak
        with pytest.raises(RatioNotReachedError):
            fixed_ratio_readout(press, np.array([0.2, 1.0, 0.9]), 0.55, 0.75)
        # low side never falls to 0.95 of the peak
        with pytest.raises(RatioNotReachedError):
            fixed_ratio_readout(press, np.array([0.97, 1.0, 0.2]), 0.5, 0.95)

    def test_bad_ratios(self):
        press = np.array([90.0, 100.0, 110.0])
        amp = np.array([0.2, 1.0, 0.2])
        for sr, dr in ((0.0, 0.5), (1.5, 0.5), (0.5, -1.0)):
            with pytest.raises(InvalidConfigurationError):
                fixed_ratio_readout(press, amp, sr, dr)

    def test_vertex_refinement_recovers_offset_peak(self):
        # quadratic peaking between samples: vertex lands on the truth
        press = np.arange(80.0, 121.0, 4.0)
        amp = 5.0 - 0.01 * (press - 101.7) ** 2
        _, _, map_ = fixed_ratio_readout(press, amp, 0.9, 0.9)
        assert map_ == pytest.approx(101.7, abs=1e-9)


class TestPipelineClosure:
    def test_noise_free_closure_20_records(self):
        cfg = SyntheticCohortConfig()
        for seed in range(20):
            rec, truth = generate_record(cfg, seed=seed)
            omw = prep(rec)
            peaks = detect_peaks(omw)
            assert abs(len(peaks) - len(truth.beat_times)) <= 1
            times = peaks / rec.sampling_rate
            d = np.abs(times[:, None] - truth.beat_times[None, :])
            assert (d.min(axis=0) <= 0.1).mean() >= 0.95
            sbp, dbp, map_ = maa_oracle(omw)
            assert abs(map_ - truth.map) <= 2.0
            assert abs(sbp - truth.sbp) <= 4.0
            assert abs(dbp - truth.dbp) <= 4.0

    def test_amplitude_artifacts_flagged(self):
        cfg = SyntheticCohortConfig(artifact_rate=2.0)
        total = caught = 0
        for seed in range(100):
            rec, truth = generate_record(cfg, seed=seed)
            omw = prep(rec)
            amp_times = [truth.beat_times[i] for i, k in
                         zip(truth.injected_artifact_indices,
                             truth.injected_artifact_kinds) if k == "amplitude"]
            try:
                pulses = flag_outliers(segment_pulses(omw, detect_peaks(omw)))
            except InsufficientPulsesError:
                # the record was rejected outright, artifacts and all
                total += len(amp_times)
                caught += len(amp_times)
                continue
            ptimes = np.array([p.peak_index / rec.sampling_rate for p in pulses])
            for t_art in amp_times:
                total += 1
                j = int(np.argmin(np.abs(ptimes - t_art)))
                if abs(ptimes[j] - t_art) <= 0.4 and pulses[j].is_outlier:
                    caught += 1
        assert total >= 50
        assert caught / total >= 0.95
