import json

import numpy as np
import pytest

from aeromodal.dmd_engine import DmdConfig, dmd_chain, extract_modal_parameters
from aeromodal.report import ModeEntry, ModeReport
from aeromodal.signal_ingest import ChannelRecord, ManeuverWindow, build_snapshot_matrix, compute_snr
from aeromodal.synth_bench import (
    STANDARD_FREQS,
    BenchmarkSpec,
    ModeSpec,
    clean_responses,
    continuous_exponent,
    generate,
    score,
    standard_benchmark,
    truth_json,
)


def report(*modes):
    return ModeReport("r", [ModeEntry(f, z) for f, z in modes])


def test_score_identical_reports():
    a = report((0.01, 0.03), (0.02, 0.05))
    table = score(a, a)
    assert len(table.matched) == 2 and not table.missed and not table.spurious
    assert all(r.freq_error_pct == 0 and r.damping_error_pct == 0 for r in table.matched)


def test_score_percent_error_example():
    table = score(report((0.0099, 0.03)), report((0.0095, 0.03)), freq_tol=0.05)
    assert round(table.matched[0].freq_error_pct, 2) == 4.21


def test_score_missed_and_spurious():
    table = score(ModeReport("e"), report((0.0116, 0.03)))
    assert len(table.missed) == 1 and not table.spurious
    table = score(report((0.0116, 0.03), (0.0153, 0.01)), report((0.0116, 0.03)))
    assert len(table.spurious) == 1 and table.spurious[0].flag == "unmatched"


def test_score_ignores_static_and_uses_each_mode_once():
    est = ModeReport("e", [ModeEntry(0.0, 1.0, is_static=True), ModeEntry(0.01001, 0.02)])
    table = score(est, report((0.01, 0.02), (0.01002, 0.02)))
    assert len(table.matched) == 1 and len(table.missed) == 1


def test_damping_gate():
    table = score(report((0.01, 0.05)), report((0.01, 0.02)), damp_tol=0.5)
    assert len(table.missed) == 1


def test_standard_benchmark_shape():
    spec = standard_benchmark(0)
    assert len(spec.modes) == 10 and spec.n_channels == 87
    assert spec.noise_snr_db == 10 and spec.outlier_fraction == 0.005 and spec.outlier_scale == 10
    assert {0.0116, 0.0172, 0.0249} <= set(STANDARD_FREQS)
    assert len(spec.onsets) == 6


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchmarkSpec([])
    with pytest.raises(ValueError):
        ModeSpec(0.01, 1.0)
    with pytest.raises(ValueError):
        BenchmarkSpec([ModeSpec(0.01, 0.1)], outlier_fraction=1.0)
    with pytest.raises(ValueError):
        BenchmarkSpec([ModeSpec(0.01, 0.1, spatial_weights=np.ones(3))], n_channels=4)


def test_continuous_exponent_round_trip():
    om = continuous_exponent(0.0172, 0.04)
    assert abs(om.imag) / np.pi == pytest.approx(0.0172)
    assert -om.real / abs(om) == pytest.approx(0.04)


def test_clean_record_without_noise_or_outliers():
    spec = standard_benchmark(3, noise_snr_db=float("inf"), outlier_fraction=0.0, n_channels=12)
    ds, _ = generate(spec)
    clean, _ = clean_responses(spec)
    assert np.array_equal(ds.valid_matrix(), clean)


def test_noise_hits_requested_snr():
    spec = standard_benchmark(1, outlier_fraction=0.0, n_channels=12)
    ds, truth = generate(spec)
    clean, onsets = clean_responses(spec)
    noise = ds.valid_matrix() - clean
    active = np.zeros(spec.record_length, dtype=bool)
    for o in onsets:
        active[o : o + spec.samples_per_maneuver] = True
    ratio = np.mean(clean[:, active] ** 2, axis=1) / np.var(noise, axis=1)
    assert np.allclose(10 * np.log10(ratio), 10.0, atol=0.3)


def test_outlier_fraction():
    spec = standard_benchmark(2, n_channels=20)
    ds, _ = generate(spec)
    clean, _ = clean_responses(spec)
    X = ds.valid_matrix()
    rms = np.sqrt(np.mean(clean**2, axis=1, where=clean != 0))
    spikes = np.abs(X) >= 0.999 * 10 * rms[:, None] * 0.9
    assert spikes.mean() == pytest.approx(0.005, abs=0.0015)


def test_generation_is_deterministic():
    spec = standard_benchmark(5, n_channels=10, n_defective=2)
    a, ta = generate(spec)
    b, tb = generate(spec)
    for x, y in zip(a.channels, b.channels):
        assert np.array_equal(x.samples, y.samples, equal_nan=True)
    assert truth_json(ta) == truth_json(tb)


def test_defective_channels_are_flagged():
    ds, _ = generate(standard_benchmark(0, n_channels=10, n_defective=3))
    assert len(ds.channels) == 13 and len(ds.excluded) == 3


def test_truth_json():
    _, truth = generate(standard_benchmark(0, n_channels=5))
    doc = json.loads(truth_json(truth))
    assert [m["scaled_freq"] for m in doc["modes"]] == sorted(STANDARD_FREQS)
    assert doc["onsets"][:2] == [400, 3000]


def test_single_noiseless_mode_round_trip():
    spec = BenchmarkSpec([ModeSpec(0.0025, 0.01)], n_channels=8, seed=1)
    ds, truth = generate(spec)
    # each excitation front is a step the difference estimator books as
    # noise, so the clean-signal check runs on whole maneuver segments
    for onset in truth.provenance["onsets"][:5]:
        for c in ds.valid_channels:
            seg = ChannelRecord(c.channel_id, c.samples[onset : onset + 2200])
            assert compute_snr(seg) >= 40
    windows = [ManeuverWindow(j + 1, o, 2200) for j, o in enumerate(truth.provenance["onsets"][:5])]
    snap = build_snapshot_matrix(ds, windows)
    res = dmd_chain(snap.values, DmdConfig(truncation="fixed", fixed_rank=2, delay=10))
    (p,) = extract_modal_parameters(res)
    assert p.scaled_freq == pytest.approx(0.0025, rel=1e-6)
    assert p.damping_ratio == pytest.approx(0.01, rel=1e-6)
