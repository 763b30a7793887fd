import math
import os

import numpy as np
import pytest

import defield

scipy_stats = pytest.importorskip("scipy.stats")


def blob(shape, center, sigma):
    z, y, x = np.indices(shape, dtype=np.float64)
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return np.exp(-r2 / (2 * sigma**2)).astype(np.float32)


def test_jacobian_of_radial_field_matches_closed_form():
    shape = (32, 32, 32)
    c = (15.5, 15.5, 15.5)
    a, w = -0.3, 6.0
    field, analytic = defield.radial_gaussian_field(shape, c, a, w)
    assert field.shape == shape + (3,)
    j = defield.jacobian_map(field)
    # closed form computed here, independently of the library
    z, y, x = np.indices(shape, dtype=np.float64)
    r = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)
    f = a * np.exp(-(r**2) / (2 * w**2))
    rfp = -(r**2) / w**2 * f
    expected = (1 + f) ** 2 * (1 + f + rfp)
    inner = (slice(8, -8),) * 3
    np.testing.assert_allclose(analytic[inner], expected[inner], rtol=1e-5)
    np.testing.assert_allclose(j[inner], expected[inner], rtol=0.03)


def test_uniform_shift_warp():
    vol = np.random.default_rng(0).random((6, 7, 8)).astype(np.float32)
    disp = np.zeros(vol.shape + (3,), np.float32)
    disp[..., 0] = 1.0
    out = defield.warp_volume(vol, disp)
    np.testing.assert_allclose(out[:, :, 1:], vol[:, :, :-1], atol=1e-6)
    np.testing.assert_allclose(out[:, :, 0], vol[:, :, 0], atol=1e-6)


def test_partition_labels():
    warped = np.zeros((4, 4, 4), np.uint8)
    nxt = np.zeros((4, 4, 4), np.uint8)
    warped[1, 1, 1] = warped[1, 1, 2] = 1
    nxt[1, 1, 2] = nxt[2, 2, 2] = 1
    labels = defield.partition_regions(warped, nxt)
    assert labels[1, 1, 1] == 2  # R
    assert labels[1, 1, 2] == 1  # U
    assert labels[2, 2, 2] == 3  # G
    assert (labels == 0).sum() == 64 - 3

    jac = np.arange(64, dtype=np.float32).reshape(4, 4, 4) / 64 + 0.5
    samples = defield.region_samples(jac, labels)
    # interior voxels only: (1, 1, 1), (1, 1, 2), (2, 2, 2) are all interior
    np.testing.assert_allclose(samples["R"], [jac[1, 1, 1]])
    np.testing.assert_allclose(samples["U"], [jac[1, 1, 2]])
    np.testing.assert_allclose(samples["G"], [jac[2, 2, 2]])
    assert len(samples["N"]) == 8 - 3


@pytest.mark.parametrize("table", [(12, 4, 9, 13), (0, 5, 6, 2), (3, 1, 1, 3), (20, 3, 2, 25)])
def test_fisher_against_scipy(table):
    a, b, c, d = table
    r = defield.fisher_exact(a, b, c, d)
    odds, p = scipy_stats.fisher_exact([[a, b], [c, d]])
    assert r["odds_ratio"] == pytest.approx(odds, rel=1e-9)
    assert r["p"] == pytest.approx(p, rel=1e-6)


def test_pooled_t_against_scipy():
    rng = np.random.default_rng(5)
    x = rng.normal(1.0, 0.2, 40)
    y = rng.normal(1.1, 0.3, 55)
    r = defield.pooled_t_test(x, y)
    ref = scipy_stats.ttest_ind(x, y, equal_var=True)
    assert r["t"] == pytest.approx(ref.statistic, rel=1e-9)
    assert r["p"] == pytest.approx(ref.pvalue, rel=1e-6)
    assert r["df"] == 93


def test_bootstrap_brackets_mean_and_is_seeded():
    x = np.random.default_rng(2).normal(3.0, 1.0, 200)
    lo, hi = defield.bootstrap_ci(x, resamples=500, seed=7)
    assert lo < x.mean() < hi
    assert (lo, hi) == defield.bootstrap_ci(x, resamples=500, seed=7)


def test_classify_and_metrics():
    assert defield.classify(0.9, 1.0, 1.1)["decision"] == "PR-classified"
    assert defield.classify(1.2, 1.3, 1.4)["decision"] == "no-decision"
    missing = defield.classify(0.9, None, 1.1)
    assert missing["decision"] == "no-decision" and missing["note"]
    m = defield.metrics(12, 4, 9, 13)
    assert m["accuracy"] == pytest.approx(100 * 25 / 38)
    assert m["precision"] == pytest.approx(75.0)
    assert m["recall"] == pytest.approx(100 * 12 / 21)
    assert defield.metrics(0, 0, 3, 4)["precision"] is None


def test_reproduce_tables_from_fixture():
    fixture = os.environ.get("DEFIELD_FIXTURE")
    if not fixture:
        pytest.skip("DEFIELD_FIXTURE not set")
    rep = defield.reproduce_tables(fixture)
    assert rep["full"]["contingency"] == {"a": 12, "b": 4, "c": 9, "d": 13}
    assert rep["three_weeks"]["contingency"] == {"a": 11, "b": 3, "c": 10, "d": 14}
    assert rep["full"]["fisher"]["p"] == pytest.approx(0.0515679, abs=1e-6)


def test_registration_improves_similarity():
    shape = (24, 24, 24)
    src = blob(shape, (12.0, 11.5, 11.5), 4.0) + 0.5 * blob(shape, (8.0, 14.0, 12.0), 2.5)
    tgt = blob(shape, (13.0, 11.5, 11.5), 4.0) + 0.5 * blob(shape, (9.0, 14.0, 12.0), 2.5)
    r = defield.register(src, tgt, pyramid_levels=2, iterations_per_level=30)
    before = defield.lcc_similarity(src, tgt)
    after = defield.lcc_similarity(defield.warp_volume(src, r["forward"]), tgt)
    assert after > before
    assert r["trace"]
    assert defield.jacobian_map(r["forward"]).min() > 0


def test_errors_carry_codes():
    with pytest.raises(defield.DefieldError) as info:
        defield.warp_volume(np.zeros((4, 4, 4), np.float32), np.zeros((4, 4, 5, 3), np.float32))
    assert info.value.code == "geometry_mismatch"
    with pytest.raises(ValueError):
        defield.jacobian_map(np.zeros((4, 4, 4), np.float32))
    bad = np.zeros((4, 4, 4), np.float32)
    bad[0, 0, 0] = math.nan
    with pytest.raises(defield.DefieldError) as info:
        defield.lcc_similarity(bad, bad)
    assert info.value.code == "non_finite"
