import numpy as np
import pytest

from covercache import (
    CatalogError,
    FileSizes,
    Popularity,
    lognormal_sizes,
    load_popularity_csv,
    tail_mass,
    zipf_popularity,
)
from covercache.catalog import sizes_from_normals


def test_zipf_small_hand_values():
    # exponent 1, four files: normalizer is 1 + 1/2 + 1/3 + 1/4 = 25/12
    pop = zipf_popularity(4, 1.0)
    expected = np.array([12, 6, 4, 3]) / 25.0
    assert np.allclose(pop.probs, expected, atol=1e-15)


def test_zipf_uniform_limit():
    pop = zipf_popularity(7, 0.0)
    assert np.allclose(pop.probs, np.full(7, 1 / 7), atol=1e-15)


def test_zipf_single_file():
    assert zipf_popularity(1, 2.3).probs.tolist() == [1.0]


@pytest.mark.parametrize("n_files", [10, 1000, 10**6])
def test_zipf_sums_to_one(n_files):
    pop = zipf_popularity(n_files, 0.8)
    assert abs(pop.probs.sum() - 1.0) <= 1e-12


def test_tail_mass_always_missed_fractions():
    # 62 caches * 10 slots = 620 distinct files max; 42.04% of requests
    # fall outside. With 20 slots each: 1240 files, 36.31% outside.
    pop = zipf_popularity(100_000, 1.0)
    assert tail_mass(pop, 620) == pytest.approx(0.4204, abs=5e-4)
    assert tail_mass(pop, 1240) == pytest.approx(0.3631, abs=5e-4)


def test_tail_mass_edges_and_monotonicity():
    pop = zipf_popularity(50, 1.2)
    assert tail_mass(pop, 0) == pytest.approx(1.0, abs=1e-12)
    assert tail_mass(pop, 50) == 0.0
    values = [tail_mass(pop, n) for n in range(51)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    with pytest.raises(CatalogError):
        tail_mass(pop, 51)
    with pytest.raises(CatalogError):
        tail_mass(pop, -1)


def test_popularity_validation():
    with pytest.raises(CatalogError):
        Popularity([0.2, 0.5, 0.3])  # unordered
    with pytest.raises(CatalogError):
        Popularity([0.9, 0.2])  # bad sum
    with pytest.raises(CatalogError):
        Popularity([1.1, -0.1])  # negative
    with pytest.raises(CatalogError):
        Popularity([])


def test_lognormal_degenerate_variance():
    sizes = lognormal_sizes(100, 0.0, seed=1)
    assert np.all(sizes.sizes == 1.0)


def test_lognormal_mean_one():
    n = 10**5
    sizes = lognormal_sizes(n, 1.0, seed=7)
    # Var(size) = e^{sigma^2} - 1 for mean-1 log-normals
    se = np.sqrt((np.e - 1) / n)
    assert abs(sizes.sizes.mean() - 1.0) <= 3 * se
    assert np.all(sizes.sizes > 0)


def test_lognormal_deterministic():
    a = lognormal_sizes(1000, 0.5, seed=42).sizes
    b = lognormal_sizes(1000, 0.5, seed=42).sizes
    assert np.array_equal(a, b)
    c = lognormal_sizes(1000, 0.5, seed=43).sizes
    assert not np.array_equal(a, c)


def test_sizes_from_common_normals_mean_one():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(10**5)
    for sigma2 in (0.0, 0.25, 1.0):
        sizes = sizes_from_normals(z, sigma2)
        assert abs(sizes.sizes.mean() - 1.0) <= 0.02
    assert np.all(sizes_from_normals(z, 0.0).sizes == 1.0)


def test_file_sizes_validation():
    with pytest.raises(CatalogError):
        FileSizes([1.0, 0.0])
    with pytest.raises(CatalogError):
        FileSizes([])


def test_popularity_csv_roundtrip(tmp_path):
    pop = zipf_popularity(5, 1.0)
    path = tmp_path / "pop.csv"
    path.write_text("\n".join(repr(float(p)) for p in pop.probs) + "\n")
    loaded = load_popularity_csv(path)
    assert np.array_equal(loaded.probs, pop.probs)


def test_popularity_csv_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.5\nnot-a-number\n")
    with pytest.raises(CatalogError, match="line 2"):
        load_popularity_csv(path)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(CatalogError):
        load_popularity_csv(empty)
