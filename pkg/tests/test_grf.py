import numpy as np
import pytest
from scipy import stats

from wabh.errors import DomainError, GenerationError
from wabh.grf import embedding_available, grf_sample


def test_zero_variance():
    np.testing.assert_array_equal(grf_sample((8, 8), 3.0, 0.0, rng=1), 0.0)


def test_validation():
    with pytest.raises(DomainError):
        grf_sample((4, 4), 0.0)
    with pytest.raises(DomainError):
        grf_sample((4, 4), 1.0, -1.0)
    with pytest.raises(DomainError):
        grf_sample((4, 4), 1.0, method="fft")


def test_iid_limit():
    rng = np.random.default_rng(0)
    f = np.stack([grf_sample((30, 30), 0.01, rng=rng) for _ in range(200)])
    r = np.corrcoef(f[:, :, :-1].ravel(), f[:, :, 1:].ravel())[0, 1]
    assert abs(r) < 0.05


def test_lag_covariance_and_marginals():
    rng = np.random.default_rng(1)
    f = np.stack([grf_sample((30, 30), 10.0, 2.0, rng=rng) for _ in range(300)])
    cov = np.mean(f[:, :, :-5] * f[:, :, 5:])
    assert cov == pytest.approx(2.0 * np.exp(-0.25), abs=0.1)
    # one grid point per field: independent N(0, 2) draws
    assert stats.kstest(f[:, 7, 11] / np.sqrt(2.0), "norm").pvalue > 0.01


def test_cholesky_path_agrees_in_distribution():
    rng = np.random.default_rng(2)
    f = np.stack([grf_sample((20, 20), 4.0, rng=rng, method="cholesky") for _ in range(400)])
    cov = np.mean(f[:, :, :-2] * f[:, :, 2:])
    assert cov == pytest.approx(np.exp(-0.25), abs=0.05)
    assert np.var(f) == pytest.approx(1.0, abs=0.05)


def test_three_dimensional():
    f = grf_sample((6, 7, 8), 2.0, rng=3)
    assert f.shape == (6, 7, 8)


def test_seeded():
    np.testing.assert_array_equal(grf_sample((10, 10), 3.0, rng=5), grf_sample((10, 10), 3.0, rng=5))


def test_circulant_only_raises_when_no_embedding():
    shape, scale = (6, 6), 40.0
    if embedding_available(shape, scale):
        pytest.skip("embedding exists for this configuration")
    with pytest.raises(GenerationError):
        grf_sample(shape, scale, method="circulant")
    assert grf_sample(shape, scale, rng=0).shape == shape
