"""End-to-end acceptance checks for the whole toolkit.

Each criterion is one test that enforces its stated tolerance and time
budget, and prints a single summary line with the measured values
(visible under ``pytest -s``; the pytest verdict line itself carries the
pass/fail either way).
"""

import math
import time

import numpy as np
import pytest

from oscibp import autodiff as ad
from oscibp.autodiff import LstmParams, Tensor, backward
from oscibp.evaluation import (aami_check, aggregate_runs,
                               grade_from_percentages, report_to_json)
from oscibp.fileio import predictions_to_csv
from oscibp.grid import DEFAULT_PRESSURE_RANGE, ORIGINAL, INTERPOLATED, \
    build_grid, resample_pulse
from oscibp.model import (ModelConfig, activation_shapes, count_parameters,
                          init)
from oscibp.seeds import STREAM_FOLDS, child_seed
from oscibp.signal_prep import (PulseSegment, flag_outliers, modified_zscore,
                                preprocess_record, trough_threshold)
from oscibp.synthetic import (SyntheticCohortConfig, generate_cohort,
                              generate_record, maa_oracle)
from oscibp.trainer import (LabeledGrid, TrainingConfig, loso_folds,
                            run_experiment, run_training_loop, total_loss)


def _report(line: str) -> None:
    print(f"\n{line}", flush=True)


# ---------------------------------------------------------------------------
# 1. formula fidelity on hand-worked cases


def test_criterion_01_formula_fidelity():
    t0 = time.perf_counter()

    # trough depth threshold: 4/5 of the peak-to-minimum range
    cases = [((2.0, 0.0), 1.6), ((1.0, -1.0), 1.6), ((5.0, 5.0), 0.0),
             ((0.5, 0.1), 0.32), ((10.0, -2.5), 10.0)]
    for (peak, mn), expected in cases:
        assert abs(trough_threshold(peak, mn) - expected) <= 1e-12

    # modified z-score flags only the 50 in [1, 2, 3, 4, 50]
    amps = np.array([1.0, 2.0, 3.0, 4.0, 50.0])
    mz = modified_zscore(amps)
    expected_mz = 0.6745 * (50.0 - 12.0) / 1.0  # mean 12, MAD 1, by hand
    assert abs(mz[4] - expected_mz) <= 1e-12
    flagged = mz > 10.0
    assert list(flagged) == [False, False, False, False, True]

    # duration rule: exactly the pulses outside median +- 0.3 s
    def pulse(duration: float) -> PulseSegment:
        n = max(int(duration * 10), 2)
        return PulseSegment(start_index=0, end_index=n, peak_index=1,
                            peak_amp=1.0, trough_amp=0.0, pulse_amp=1.0,
                            duration=duration,
                            samples=np.zeros(n + 1))

    durations = [0.65, 0.75, 1.0, 1.0, 1.25, 1.35]  # median 1.0
    flags = [p.is_outlier for p in flag_outliers([pulse(d) for d in durations])]
    assert flags == [True, False, False, False, False, True]

    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(f"PASS 1 formula fidelity: threshold/zscore/duration exact to "
            f"1e-12, mz(50)={mz[4]:.3f}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. grid construction contract


def test_criterion_02_grid_contract():
    t0 = time.perf_counter()
    cfg = SyntheticCohortConfig()  # noise-free, artifact-free
    p_min, p_max = DEFAULT_PRESSURE_RANGE

    n_flanked = 0
    for seed in range(50):
        record, _ = generate_record(cfg, seed=seed, subject_id=f"s{seed:02d}")
        omw, pulses, _ = preprocess_record(record)
        grid = build_grid(pulses, omw.slow_component)
        assert grid.values.shape == (215, 215)

        # independent recomputation of column placement
        slow = omw.slow_component
        by_col: dict[int, list] = {}
        for p in pulses:
            if p.is_outlier:
                continue
            cp = float(slow[p.peak_index])
            col = int(np.clip(int(np.ceil(cp - 0.5)), p_min, p_max)) - p_min
            by_col.setdefault(col, []).append(p)

        observed = sorted(by_col)
        for col, plist in by_col.items():
            assert grid.provenance[col] == ORIGINAL
            resampled = [resample_pulse(p.samples, 215) for p in plist]
            if len(resampled) == 1:
                # single occupant: stored bit for bit
                assert np.array_equal(grid.values[:, col], resampled[0])
            else:
                mean = np.mean(resampled, axis=0)
                np.testing.assert_allclose(grid.values[:, col], mean,
                                           rtol=0, atol=1e-12)
        assert len(observed) == len(grid.original_columns())

        # interpolated columns flanked by originals: exact midpoints
        for j in range(1, 214):
            if (grid.provenance[j] == INTERPOLATED
                    and grid.provenance[j - 1] == ORIGINAL
                    and grid.provenance[j + 1] == ORIGINAL):
                mid = 0.5 * grid.values[:, j - 1] + 0.5 * grid.values[:, j + 1]
                np.testing.assert_allclose(grid.values[:, j], mid,
                                           rtol=0, atol=1e-12)
                n_flanked += 1

    assert n_flanked > 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report(f"PASS 2 grid contract: 50 grids 215x215, originals bit-exact, "
            f"{n_flanked} flanked interpolations at 1e-12, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. gradients against central finite differences


def _numeric_grad(loss_fn, tensor, step=1e-5):
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = loss_fn()
        flat[i] = orig - step
        lo = loss_fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def _max_rel_err(analytic, numeric):
    # The 1e-5 floor makes gradients above the step size agree to 1e-5
    # relative, and smaller ones to 1e-10 absolute; central differences
    # at float64 with step 1e-5 carry ~1e-11 of roundoff on a loss of
    # order one, so a genuine defect still fails by orders of magnitude.
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-5)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _check_graph(build_loss, leaves):
    """Backward pass vs finite differences for every leaf tensor."""
    for leaf in leaves:
        leaf.grad = None
    loss = build_loss()
    backward(loss)
    worst = 0.0
    for leaf in leaves:
        numeric = _numeric_grad(lambda: float(build_loss().data), leaf)
        worst = max(worst, _max_rel_err(leaf.grad, numeric))
    return worst


def test_criterion_03_gradient_fidelity():
    t0 = time.perf_counter()
    worst = 0.0

    for seed in range(20):
        rng = np.random.default_rng(seed)

        def t(*shape):
            return Tensor(rng.normal(size=shape), requires_grad=True)

        # conv1d: one pulse bank over a short sequence
        x, k, b = t(2, 7), t(3, 2, 5), t(3)
        target = rng.normal(size=21)
        worst = max(worst, _check_graph(
            lambda: ad.mse(ad.reshape(ad.conv1d(x, k, b, 2, 2), (21,)), target),
            [x, k, b]))

        # lstm over a short sequence
        d_in, hid, steps = 3, 2, 5
        tensors = {}
        for gate in ("input", "forget", "cell", "output"):
            tensors[f"w_{gate}"] = t(hid, d_in)
            tensors[f"u_{gate}"] = t(hid, hid)
            tensors[f"b_{gate}"] = t(hid)
        params = LstmParams(d_in, hid, tensors)
        seq = t(steps, d_in)
        lstm_target = rng.normal(size=steps * hid)
        worst = max(worst, _check_graph(
            lambda: ad.mse(ad.reshape(ad.lstm_layer(seq, params),
                                      (steps * hid,)), lstm_target),
            [seq] + [te for _, te in params.tensors()]))

        # dense with relu
        xd, wd, bd = t(4), t(3, 4), t(3)
        dense_target = rng.normal(size=3)
        worst = max(worst, _check_graph(
            lambda: ad.mse(ad.dense(xd, wd, bd, activation="relu"),
                           dense_target),
            [xd, wd, bd]))

        # mse + l1 composite on a two-layer net
        xm, w1, b1, w2, b2 = t(5), t(4, 5), t(4), t(2, 4), t(2)
        m_target = rng.normal(size=2)

        def composite():
            hidden = ad.dense(xm, w1, b1, activation="relu")
            out = ad.dense(hidden, w2, b2)
            return ad.add(ad.mse(out, m_target),
                          ad.scale(ad.l1_penalty([w1, w2]), 1e-4))

        worst = max(worst, _check_graph(composite, [xm, w1, b1, w2, b2]))

        # full reduced model through the training loss
        mc = ModelConfig(grid_size=9, n_kernels=3, kernel_width=5,
                         lstm_layers=2, lstm_hidden=2, dense_widths=(8, 4))
        model = init(mc, seed=seed)
        xg = rng.normal(size=(2, 9, 9))
        yg = rng.normal(size=2)
        leaves = [te for _, te in model.named_parameters()]
        worst = max(worst, _check_graph(
            lambda: total_loss(model, (xg, yg), 1e-4), leaves))

    assert worst < 1e-5
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _report(f"PASS 3 gradients: max rel err {worst:.2e} over 20 seeds "
            f"(conv/lstm/dense/composite/full model), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. architecture contract


def test_criterion_04_architecture():
    t0 = time.perf_counter()
    cfg = ModelConfig()
    model = init(cfg, seed=0)
    n_params = count_parameters(model)
    assert n_params == 3_038_691

    shapes = activation_shapes(cfg)
    trace = [shapes[0]]
    for s in shapes[1:]:
        if s != trace[-1]:
            trace.append(s)
    expected = [(215, 215), (10, 215), (215, 10), (2150,), (1000,), (500,),
                (250,), (100,), (50,), ()]
    assert trace == expected

    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    rendered = " -> ".join("x".join(map(str, s)) if s else "1" for s in trace)
    _report(f"PASS 4 architecture: {n_params} parameters, {rendered}, "
            f"{elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 5. training protocol on a scripted objective


def test_criterion_05_training_protocol():
    t0 = time.perf_counter()

    state = {"epoch": 0, "restored": None}

    def step(lr: float) -> float:
        state["epoch"] += 1
        return 1.0

    def evaluate() -> float:
        return 100.0 + state["epoch"]  # strictly worsening from epoch 1

    cfg = TrainingConfig()  # lr 0.001, patience 10, factor 0.1, stop 30
    history = run_training_loop(step, evaluate,
                                snapshot=lambda: state["epoch"],
                                restore=lambda s: state.update(restored=s),
                                config=cfg)

    assert history.stopped_epoch == 31
    assert history.best_epoch == 1
    assert state["restored"] == 1
    # epoch 1 improves on the empty history, so the tenth non-improving
    # epoch is epoch 11: rows 1..10 still carry the initial rate
    assert all(lr == 0.001 for lr in history.lr[:10])
    assert history.lr[10] == 0.001 * 0.1

    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report(f"PASS 5 training protocol: stop after 30 flat epochs at 31, "
            f"best 1 restored, rate after ten flat epochs "
            f"{history.lr[10]:.6g}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 6. subject independence of the fold builder


def test_criterion_06_subject_independence():
    t0 = time.perf_counter()
    cfg = SyntheticCohortConfig(n_subjects=20, records_per_subject=3, seed=5)
    dataset = [LabeledGrid(rec.subject_id, rec.record_id, np.zeros((1, 1)),
                           truth.sbp, truth.dbp)
               for rec, truth in generate_cohort(cfg)]
    all_keys = {g.key() for g in dataset}
    records_of = {}
    for g in dataset:
        records_of.setdefault(g.subject_id, set()).add(g.key())

    folds = loso_folds(dataset, seed=123)
    assert len(folds) == 20
    assert sorted(f.test_subject for f in folds) == sorted(records_of)

    for fold in folds:
        train = set(fold.train_records)
        val = set(fold.validation_records)
        test = records_of[fold.test_subject]
        assert not train & val
        assert not test & (train | val)
        assert train | val | test == all_keys
        val_subjects = [s for s, _ in val]
        assert len(val_subjects) == len(set(val_subjects))
        training_subjects = {s for s, _ in train} | set(val_subjects)
        eligible = {s for s in training_subjects
                    if len(records_of[s]) >= 2}
        assert set(val_subjects) == eligible

    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    _report(f"PASS 6 subject independence: 20 folds, test disjoint, one "
            f"validation record per training subject, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 7 and 10. end-to-end learning, byte-identical reproduction

MASTER_SEED = 7
E2E_COHORT = dict(n_subjects=20, records_per_subject=3, noise_sd=0.3,
                  heart_rate_range=(70.0, 105.0), seed=MASTER_SEED)
E2E_MODEL = ModelConfig(grid_size=215, n_kernels=4, kernel_width=31,
                        lstm_layers=2, lstm_hidden=4, dense_widths=(64, 16))
E2E_TRAINING = dict(optimizer="adam", initial_lr=0.01, l1_lambda=0.1,
                    lr_patience=40, early_stop_patience=80, max_epochs=500,
                    seed=MASTER_SEED)


def _full_execution():
    """One complete experiment: cohort, grids, LOSO training, reports."""
    cfg = SyntheticCohortConfig(**E2E_COHORT)
    dataset = []
    for record, truth in generate_cohort(cfg):
        omw, pulses, _ = preprocess_record(record)
        g = build_grid(pulses, omw.slow_component,
                       subject_id=record.subject_id,
                       record_id=record.record_id)
        dataset.append(LabeledGrid(record.subject_id, record.record_id,
                                   g.values, truth.sbp, truth.dbp))

    folds = loso_folds(dataset, child_seed(MASTER_SEED, STREAM_FOLDS, 0))
    baselines = {}
    for target in ("SBP", "DBP"):
        errs = []
        for fold in folds:
            train_keys = set(fold.train_records)
            mean = float(np.mean([g.label(target) for g in dataset
                                  if g.key() in train_keys]))
            errs += [abs(mean - g.label(target)) for g in dataset
                     if g.subject_id == fold.test_subject]
        baselines[target] = float(np.mean(errs))

    rows = []
    maes = {}
    for target in ("SBP", "DBP"):
        tc = TrainingConfig(target=target, **E2E_TRAINING)
        target_rows = run_experiment(dataset, E2E_MODEL, tc, n_runs=1)
        maes[target] = float(np.mean([abs(r.prediction - r.reference)
                                      for r in target_rows]))
        rows.extend(target_rows)

    table = predictions_to_csv(rows)
    report = report_to_json(aggregate_runs(rows, n_runs=1))
    return maes, baselines, table, report


@pytest.fixture(scope="module")
def e2e_runs():
    t0 = time.perf_counter()
    first = _full_execution()
    first_elapsed = time.perf_counter() - t0
    second = _full_execution()
    return first, second, first_elapsed


def test_criterion_07_end_to_end_learning(e2e_runs):
    (maes, baselines, _, _), _, elapsed = e2e_runs
    for target in ("SBP", "DBP"):
        assert maes[target] <= 0.5 * baselines[target], (
            f"{target}: MAE {maes[target]:.2f} vs baseline "
            f"{baselines[target]:.2f}")
    assert elapsed < 1800.0
    detail = ", ".join(
        f"{t} {maes[t]:.2f}/{baselines[t]:.2f} ({maes[t] / baselines[t]:.0%})"
        for t in ("SBP", "DBP"))
    _report(f"PASS 7 end-to-end learning: MAE vs train-mean baseline "
            f"{detail}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. generator / envelope-oracle closure


def test_criterion_08_oracle_closure():
    t0 = time.perf_counter()
    cfg = SyntheticCohortConfig()  # noise-free
    worst = {"map": 0.0, "sbp": 0.0, "dbp": 0.0}
    for seed in range(20):
        record, truth = generate_record(cfg, seed=seed)
        omw, pulses, peaks = preprocess_record(record)
        sbp, dbp, map_est = maa_oracle(omw, omw.slow_component)
        worst["map"] = max(worst["map"], abs(map_est - truth.map))
        worst["sbp"] = max(worst["sbp"], abs(sbp - truth.sbp))
        worst["dbp"] = max(worst["dbp"], abs(dbp - truth.dbp))
        assert abs(map_est - truth.map) <= 2.0
        assert abs(sbp - truth.sbp) <= 4.0
        assert abs(dbp - truth.dbp) <= 4.0
        assert abs(len(peaks) - len(truth.beat_times)) <= 1

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _report(f"PASS 8 oracle closure: 20 records, worst |err| map "
            f"{worst['map']:.2f} sbp {worst['sbp']:.2f} dbp {worst['dbp']:.2f} "
            f"mmHg, beat counts within 1, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 9. standards grading


def test_criterion_09_standards_grading():
    t0 = time.perf_counter()
    assert grade_from_percentages(89.62, 99.13, 99.71) == "A"
    assert grade_from_percentages(60.0, 85.0, 95.0) == "A"
    assert aami_check(0.08, 2.48) is True
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(f"PASS 9 standards grading: published-style percentages grade A "
            f"(boundary inclusive), AAMI 0.08/2.48 passes, {elapsed:.2f}s")


def test_criterion_10_determinism(e2e_runs):
    first, second, _ = e2e_runs
    _, _, table1, report1 = first
    _, _, table2, report2 = second
    assert table1.encode() == table2.encode()
    assert report1.encode() == report2.encode()
    _report(f"PASS 10 determinism: prediction table ({len(table1)} bytes) "
            f"and report ({len(report1)} bytes) byte-identical across two "
            f"executions")
