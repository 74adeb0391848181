import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeromodal.compressed_sensing import (
    SparseBasis,
    compress,
    cs_dmd,
    load_measurement,
    make_measurement,
    omp,
    reconstruct_full_modes,
    rip_diagnostic,
    save_measurement,
)
from aeromodal.config import PipelineConfig, apply_overrides
from aeromodal.signal_ingest import (
    ChannelRecord,
    ManeuverWindow,
    ParseError,
    SnapshotMatrix,
    TestPointDataset,
    build_snapshot_matrix,
)


def toy_snapshot(n_ch=6, n_man=3, T=50, seed=0):
    rng = np.random.default_rng(seed)
    ds = TestPointDataset("t", [ChannelRecord(str(i), rng.standard_normal(n_man * T)) for i in range(n_ch)])
    windows = [ManeuverWindow(j + 1, j * T, T) for j in range(n_man)]
    return build_snapshot_matrix(ds, windows, T)


def test_kind_aliases_and_errors():
    assert make_measurement("gaussian", 2, 4).kind == "gaussian_random"
    with pytest.raises(ValueError):
        make_measurement("bogus", 2, 4)
    with pytest.raises(ValueError):
        make_measurement("gaussian", 5, 4)


def test_single_pixel_full_is_permutation():
    C = make_measurement("single_pixel", 10, 10, seed=3).entries
    assert np.array_equal(C @ C.T, np.eye(10))
    assert np.array_equal(C.sum(axis=0), np.ones(10))


def test_single_pixel_rows_distinct():
    C = make_measurement("single_pixel", 7, 40, seed=1).entries
    assert len({int(np.argmax(r)) for r in C}) == 7


def test_gaussian_moments():
    p, n = 500, 1000
    C = make_measurement("gaussian_random", p, n, seed=0).entries
    assert abs(C.mean()) <= 3 / np.sqrt(p * n)
    assert abs(C.var() - 1 / n) <= 0.05 / n


def test_uniform_scaling():
    n = 400
    C = make_measurement("uniform_random", 300, n, seed=0).entries
    assert np.abs(C).max() <= 1 / np.sqrt(n)
    # U(-1, 1) has variance 1/3
    assert C.var() == pytest.approx(1 / (3 * n), rel=0.05)


@pytest.mark.parametrize("kind", ["uniform_random", "gaussian_random", "single_pixel"])
def test_seeded_determinism(kind):
    a = make_measurement(kind, 5, 30, seed=11).entries
    b = make_measurement(kind, 5, 30, seed=11).entries
    assert np.array_equal(a, b)


def test_measurement_csv_round_trip():
    C = make_measurement("gaussian", 4, 9, seed=2)
    buf = io.StringIO()
    save_measurement(C, buf)
    assert buf.getvalue().startswith("# kind=gaussian_random,p=4,n=9,seed=2\n")
    back = load_measurement(io.StringIO(buf.getvalue()))
    assert back.kind == C.kind and back.seed == 2
    assert np.array_equal(back.entries, C.entries)
    with pytest.raises(ParseError):
        load_measurement(io.StringIO("1,2\n"))


def test_sorted_identity_measurement_is_noop():
    snap = toy_snapshot()
    C = make_measurement("single_pixel", 6, 6, sort=True)
    Y = compress(snap, C)
    assert np.array_equal(Y.values, snap.values)


def test_compress_stacks_per_maneuver():
    snap = toy_snapshot(n_ch=87, n_man=5, T=2200)
    Y = compress(snap, make_measurement("single_pixel", 5, 87, seed=0))
    assert Y.shape == (25, 2200)
    assert Y.row_labels[:5] == [("y0", m) for m in range(1, 6)]
    assert Y.meta["measurement"]["p"] == 5


def test_compress_matches_blockwise_product():
    snap = toy_snapshot()
    C = make_measurement("gaussian", 3, 6, seed=4)
    Y = compress(snap, C)
    for m in range(3):
        block = snap.values[m::3]
        assert np.allclose(Y.values[m::3], C.entries @ block, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
def test_compress_is_linear(a, b, seed):
    s1, s2 = toy_snapshot(seed=seed), toy_snapshot(seed=seed + 1)
    C = make_measurement("uniform", 4, 6, seed=seed)
    mix = SnapshotMatrix(a * s1.values + b * s2.values, s1.row_labels)
    lhs = compress(mix, C).values
    rhs = a * compress(s1, C).values + b * compress(s2, C).values
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


def test_compress_dataset_and_size_errors():
    rng = np.random.default_rng(0)
    ds = TestPointDataset("d", [ChannelRecord(str(i), rng.standard_normal(20)) for i in range(4)])
    out = compress(ds, make_measurement("gaussian", 2, 4))
    assert [c.channel_id for c in out.channels] == ["y0", "y1"]
    with pytest.raises(ValueError):
        compress(ds, make_measurement("gaussian", 2, 5))
    with pytest.raises(ValueError):
        compress(toy_snapshot(), make_measurement("gaussian", 2, 5))


def test_rip_unitary_identity():
    C = make_measurement("single_pixel", 20, 20, seed=0)
    for k in (1, 5, 20):
        assert rip_diagnostic(C, SparseBasis.identity(20), k) <= 1e-10


def test_rip_gaussian_mostly_below_one():
    ok = sum(rip_diagnostic(make_measurement("gaussian", 50, 200, seed=s), SparseBasis.identity(200), 5, seed=s) < 1
             for s in range(20))
    assert ok >= 19


def test_rip_edge_cases():
    C = make_measurement("gaussian", 3, 10)
    assert rip_diagnostic(C, SparseBasis.identity(10), 0) == 0.0
    with pytest.raises(ValueError):
        rip_diagnostic(C, SparseBasis.identity(10), 4)


def test_bases_have_unit_columns():
    for basis in (SparseBasis.fourier(16), SparseBasis.dct(16), SparseBasis.identity(16)):
        assert np.allclose(np.linalg.norm(basis.Psi, axis=0), 1)
    with pytest.raises(ValueError):
        SparseBasis(2 * np.eye(3), "bad")


def test_omp_identity_one_step():
    y = np.zeros(8)
    y[3] = 2.5
    res = omp(np.eye(8), y, k=1)
    assert res.support.tolist() == [3] and res.x[3] == 2.5 and res.residual == 0


def planted_sparse(seed, p=50, n=200, k=5):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, n)) / np.sqrt(p)
    x = np.zeros(n)
    supp = np.sort(rng.choice(n, k, replace=False))
    x[supp] = rng.choice([-1, 1], k) * rng.uniform(1, 2, k)
    return A, x, supp


def test_omp_planted_recovery():
    hits = 0
    for seed in range(20):
        A, x, supp = planted_sparse(seed)
        res = omp(A, A @ x, k=5)
        hits += np.array_equal(res.support, supp) and res.residual <= 1e-10 and np.allclose(res.x, x, atol=1e-10)
    assert hits >= 19


def test_omp_complex_measurements():
    A, x, supp = planted_sparse(3)
    xc = x * np.exp(1j * np.arange(len(x)))
    res = omp(A, A @ xc, k=5)
    assert np.array_equal(res.support, supp)
    assert np.allclose(res.x, xc, atol=1e-10)


def test_omp_k_zero_and_tolerance_stop():
    A, x, _ = planted_sparse(1)
    y = A @ x
    res = omp(A, y, k=0)
    assert not res.x.any() and res.residual == pytest.approx(np.linalg.norm(y))
    res = omp(A, y, tol=1e-9)
    assert res.residual <= 1e-9 and len(res.support) == 5


def test_omp_errors():
    A = np.eye(4)
    A[:, 2] = 0
    with pytest.raises(ValueError):
        omp(A, np.ones(4), k=1)
    with pytest.raises(ValueError):
        omp(np.eye(4)[:2], np.ones(2), k=3)
    with pytest.raises(ValueError):
        omp(np.eye(3), np.ones(3))


def test_reconstruct_full_modes_unitary():
    rng = np.random.default_rng(0)
    C = make_measurement("single_pixel", 12, 12, seed=5)
    Phi_X = rng.standard_normal((12, 3)) + 1j * rng.standard_normal((12, 3))
    out = reconstruct_full_modes(C.entries @ Phi_X, C, SparseBasis.identity(12), k=12)
    assert not out.failed.any()
    assert np.allclose(out.modes, C.entries.T @ (C.entries @ Phi_X), atol=1e-8)


def test_reconstruct_fourier_sparse_modes():
    n, k = 64, 3
    basis = SparseBasis.fourier(n)
    rng = np.random.default_rng(2)
    modes = []
    for _ in range(4):
        s = np.zeros(n, dtype=complex)
        s[rng.choice(n, k, replace=False)] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        modes.append(basis.Psi @ s)
    Phi_X = np.column_stack(modes)
    C = make_measurement("gaussian", 4 * k, n, seed=1)
    out = reconstruct_full_modes(C.entries @ Phi_X, C, basis, k)
    for j in range(4):
        cos = abs(np.vdot(out.modes[:, j], Phi_X[:, j])) / (np.linalg.norm(out.modes[:, j]) * np.linalg.norm(Phi_X[:, j]))
        assert cos >= 0.99


def test_reconstruct_flags_underdetermined():
    C = make_measurement("gaussian", 2, 10)
    out = reconstruct_full_modes(np.ones((2, 2)), C, SparseBasis.identity(10), k=3)
    assert out.failed.all()


def test_single_pixel_single_mode_eigenvalue():
    om = -0.004 + 0.06j
    n, m = 8, 1200
    rng = np.random.default_rng(0)
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    X = np.real(np.outer(w, np.exp(om * np.arange(m))))
    snap = SnapshotMatrix(X, [(str(i), 1) for i in range(n)])
    C = make_measurement("single_pixel", 1, n, seed=0)
    Y = compress(snap, C)
    assert Y.shape == (1, m)
    cfg = apply_overrides(PipelineConfig(), [("rpca.enabled", "false"), ("truncation.method", "fixed"),
                                             ("truncation.rank", "1"), ("delay.d", "4"),
                                             ("dmd.second_level", "fixed"), ("dmd.second_level_rank", "2")])
    res = cs_dmd(Y, cfg, C)
    target = np.exp(om)
    assert np.min(np.abs(res.eigenvalues - target)) <= 1e-4
    assert res.measurement is C
