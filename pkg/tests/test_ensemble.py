import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinetic_storage.ensemble import (ParticleEnsemble, RngStream, batch_means, empirical_means,
                                      picard_diagnostic, quantile_band, wasserstein1_1d)
from kinetic_storage.errors import EmptyInput, SizeMismatch, ValidationError


def ensemble(n_steps=4, n=6, seed=0):
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(n_steps + 1, n, 4))
    return ParticleEnsemble(np.linspace(0, 1, n_steps + 1), states)


def test_means_of_identical_particles():
    states = np.tile([0.1, 0.4, 0.7, 3.0], (5, 1))
    assert batch_means(states) == pytest.approx((0.7, 3.0, 1.1))


def test_means_cancel():
    states = np.array([[0.1, 0, -1, 0], [0.1, 0, 1, 0]], dtype=float)
    assert batch_means(states)[0] == 0


def test_means_permutation_invariant():
    ens = ensemble()
    perm = ens.states[:, ::-1]
    other = ParticleEnsemble(ens.time_grid, perm)
    assert empirical_means(ens, 2) == pytest.approx(empirical_means(other, 2), abs=1e-15)


def test_ensemble_checks():
    ens = ensemble()
    assert ens.check_means()
    assert ens.n_steps == 4 and ens.n_particles == 6
    with pytest.raises(ValidationError):
        ParticleEnsemble(np.array([0, 0.1, 0.5]), np.zeros((3, 2, 4)))


def test_quantiles():
    vals = np.arange(1, 101)
    assert quantile_band(vals, 0.05, 0.95) == pytest.approx((5.95, 95.05))
    assert quantile_band(np.full(7, 2.5), 0.1, 0.9) == (2.5, 2.5)
    assert quantile_band(vals, 0.0, 1.0) == (1, 100)
    with pytest.raises(EmptyInput):
        quantile_band([], 0.1, 0.9)


def test_w1_examples():
    assert wasserstein1_1d([1, 2, 3], [3, 1, 2]) == 0
    assert wasserstein1_1d([0], [1]) == 1
    assert wasserstein1_1d([0, 2], [1, 3]) == 1
    with pytest.raises(SizeMismatch):
        wasserstein1_1d([0, 1], [1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5),
       st.lists(st.floats(-10, 10), min_size=5, max_size=5),
       st.lists(st.floats(-10, 10), min_size=5, max_size=5))
def test_w1_metric_axioms(a, b, c):
    ab, ba = wasserstein1_1d(a, b), wasserstein1_1d(b, a)
    assert ab == pytest.approx(ba, abs=1e-12)
    assert wasserstein1_1d(a, a) == 0
    assert ab <= wasserstein1_1d(a, c) + wasserstein1_1d(c, b) + 1e-12


def test_picard_diagnostic():
    rng = np.random.default_rng(0)
    flow = rng.normal(size=(5, 20, 2))
    assert picard_diagnostic(flow, flow) == 0
    shifted = flow.copy()
    shifted[..., 1] += 1
    assert picard_diagnostic(flow, shifted) == pytest.approx(1.0)
    with pytest.raises(SizeMismatch):
        picard_diagnostic(flow, flow[:, :10])


def test_rng_reproducible_and_layout_free():
    s = RngStream(11)
    a = s.normals(100, 0, 3, 4, 2)
    b = RngStream(11).normals(100, 0, 3, 4, 2)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, s.normals(100, 0, 3, 5, 2))
    # a longer batch extends, not reshuffles, the first draws
    assert np.array_equal(s.normals(50, 0, 3, 4, 2), a[:50])


def test_antithetic_pairs_cancel():
    z = RngStream(3).normals(64, 0, 0, 0, 0, antithetic=True)
    assert np.array_equal(z[32:], -z[:32])
    # summed pair by pair, the batch mean is exactly zero
    assert (z[:32] + z[32:]).sum() == 0.0


def test_path_normals_shape():
    z = RngStream(0).path_normals(2, 5, 8, antithetic=True)
    assert z.shape == (5, 8, 3)
    assert np.all(z[:, :4] + z[:, 4:] == 0)
