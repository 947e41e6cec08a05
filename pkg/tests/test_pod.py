import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptpi.networks import ConfigurationError, ShapeError
from ptpi.pod import (
    RankDeficiencyWarning,
    SnapshotSet,
    e_pod,
    pod_basis,
    pod_gap_estimate,
    pod_project,
    pod_reconstruct,
    projection_error,
)


def test_axis_aligned():
    b = pod_basis(np.array([[2.0, 0.0], [0.0, 1.0]]), 1)
    np.testing.assert_allclose(np.abs(b.V[:, 0]), [1, 0])
    np.testing.assert_allclose(b.sigma, [2.0])
    assert np.isclose(b.discarded_energy, 1.0)


def test_rank_one_exact():
    v = np.random.default_rng(0).normal(size=10)
    U = np.outer(v, [1.0, -2.0, 0.5])
    b = pod_basis(U, 1)
    assert np.max(projection_error(b.V, U)) < 1e-24 * 1e6


def test_exact_vs_randomized_full_rank():
    U = np.random.default_rng(1).normal(size=(8, 5))
    a, b = pod_basis(U, 5), pod_basis(U, 5, method="randomized", seed=3)
    pa, pb = a.V @ a.V.T @ U, b.V @ b.V.T @ U
    assert np.linalg.norm(pa - pb) / np.linalg.norm(pa) <= 1e-8


def test_matches_dense_svd():
    U = np.random.default_rng(2).normal(size=(30, 9))
    b = pod_basis(U, 4)
    Ud, s, _ = np.linalg.svd(U, full_matrices=False)
    np.testing.assert_allclose(b.sigma, s[:4], rtol=1e-10)
    np.testing.assert_allclose(np.abs(b.V.T @ Ud[:, :4]), np.eye(4), atol=1e-8)


def test_sign_convention():
    U = np.random.default_rng(3).normal(size=(12, 6))
    V = pod_basis(U, 3).V
    idx = np.argmax(np.abs(V), axis=0)
    assert np.all(V[idx, np.arange(3)] > 0)
    V2 = pod_basis(-U, 3).V
    np.testing.assert_allclose(V, V2, atol=1e-12)


@pytest.mark.parametrize("N", [0, 6])
def test_rank_out_of_range(N):
    with pytest.raises(ConfigurationError):
        pod_basis(np.ones((4, 5)), N)


def test_weight_must_be_positive():
    with pytest.raises(ConfigurationError):
        pod_basis(np.eye(3), 1, weight=0.0)


def test_rank_deficiency_warning():
    v = np.arange(1.0, 7.0)
    U = np.outer(v, [1.0, 2.0, 3.0])
    with pytest.warns(RankDeficiencyWarning):
        b = pod_basis(U, 2)
    assert b.V.shape[1] == 1


def test_project_reconstruct():
    rng = np.random.default_rng(4)
    b = pod_basis(rng.normal(size=(10, 6)), 3)
    u = b.V @ rng.normal(size=3)
    np.testing.assert_allclose(pod_reconstruct(b, pod_project(b, u)), u, atol=1e-12)
    w = rng.normal(size=10)
    w -= b.V @ (b.V.T @ w)
    np.testing.assert_allclose(pod_project(b, w), 0.0, atol=1e-12)
    with pytest.raises(ShapeError):
        pod_project(b, np.ones(4))


def test_hand_projection():
    from ptpi.pod import PODBasis

    b = PODBasis(np.array([[1.0], [0.0]]), np.array([1.0]), 1.0, 0.0)
    u = np.array([0.0, 3.0])
    assert pod_project(b, u)[0] == 0.0
    assert np.linalg.norm(u - pod_reconstruct(b, pod_project(b, u))) == 3.0


def test_e_pod_cases():
    rng = np.random.default_rng(5)
    U = rng.normal(size=(6, 4))
    assert e_pod(pod_basis(U, 4), U) <= 1e-10
    b = pod_basis(U, 2)
    w = rng.normal(size=6)
    w -= b.V @ (b.V.T @ w)
    assert np.isclose(e_pod(b, w), 1.0)
    with pytest.raises(ZeroDivisionError):
        e_pod(b, np.zeros((6, 2)))


def test_eikonal_e_pod(eikonal_data, eikonal_test):
    _, data = eikonal_data
    assert e_pod(pod_basis(data.fields, 2), eikonal_test) <= 1e-5


def test_orthonormal_and_sorted():
    U = np.random.default_rng(6).normal(size=(40, 15))
    for method in ("exact", "randomized"):
        b = pod_basis(U, 6, method=method)
        assert np.max(np.abs(b.V.T @ b.V - np.eye(6))) <= 1e-10
        assert np.all(np.diff(b.sigma) <= 0) and np.all(b.sigma >= 0)


def test_eckart_young_dominance():
    rng = np.random.default_rng(7)
    U = rng.normal(size=(20, 12))
    best = projection_error(pod_basis(U, 3).V, U).sum()
    for _ in range(100):
        W, _ = np.linalg.qr(rng.normal(size=(20, 3)))
        assert projection_error(W, U).sum() >= best


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), N=st.integers(1, 5), w=st.floats(0.1, 10.0))
def test_discarded_energy_identity(seed, N, w):
    U = np.random.default_rng(seed).normal(size=(15, 8))
    b = pod_basis(U, N, weight=w)
    lhs = w * projection_error(b.V, U).sum()
    assert abs(lhs - b.discarded_energy) <= 1e-10 * max(b.discarded_energy, 1e-300) + 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_discarded_energy_monotone(seed):
    U = np.random.default_rng(seed).normal(size=(10, 7))
    e = [pod_basis(U, N).discarded_energy for N in range(1, 8)]
    assert all(b <= a + 1e-10 for a, b in zip(e, e[1:]))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_randomized_matches_exact_rank5(seed):
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(40, 5)) @ rng.normal(size=(5, 20))
    a, b = pod_basis(U, 3), pod_basis(U, 3, method="randomized", seed=seed)
    ea, eb = projection_error(a.V, U).sum(), projection_error(b.V, U).sum()
    assert abs(ea - eb) / ea <= 1e-6


def test_multichannel_block_diagonal():
    rng = np.random.default_rng(8)
    U = rng.normal(size=(2 * 10, 7))
    b = pod_basis(U, 3, channels=2)
    assert b.V.shape == (20, 6)
    assert np.all(b.V[:10, 3:] == 0) and np.all(b.V[10:, :3] == 0)
    np.testing.assert_allclose(b.V[:10, :3], pod_basis(U[:10], 3).V)


def test_snapshot_ordering():
    coords = np.zeros((2, 1))
    fields = np.arange(12.0).reshape(2, 6)
    s = SnapshotSet(coords, [[1.0], [2.0]], [0.0, 1.0, 2.0], fields)
    assert s.column(1, 2) == 5
    mu, t = s.pairs()
    assert mu[4, 0] == 2.0 and t[4] == 1.0
    with pytest.raises(ValueError):
        SnapshotSet(coords, [[1.0]], [0.0], np.array([[np.nan], [0.0]]))


def test_gap_rank_one_manifold():
    v0 = np.sin(np.linspace(0, 3, 50))
    sampler = lambda mu, t: np.outer(v0, mu[:, 0]).repeat(len(t), axis=1)
    gaps = pod_gap_estimate(sampler, 1, [4, 8, 16], 50, 0, [[0.5, 2.0]])
    np.testing.assert_allclose(gaps, 0.0, atol=1e-20)


def _sine_sampler(x):
    return lambda mu, t: np.sin(np.pi * np.outer(x, mu[:, 0])).repeat(len(t), axis=1)


def test_gap_deterministic():
    s = _sine_sampler(np.linspace(0, 1, 200))
    a = pod_gap_estimate(s, 3, [4, 8], 100, 9, [[1.0, 2.0]])
    b = pod_gap_estimate(s, 3, [4, 8], 100, 9, [[1.0, 2.0]])
    assert a.tobytes() == b.tobytes()


def test_gap_errors():
    s = _sine_sampler(np.linspace(0, 1, 20))
    with pytest.raises(ConfigurationError):
        pod_gap_estimate(s, 3, [8, 4], 10, 0, [[1.0, 2.0]])
    with pytest.raises(ConfigurationError):
        pod_gap_estimate(s, 5, [4, 8], 10, 0, [[1.0, 2.0]])
    with pytest.raises(ConfigurationError):
        pod_gap_estimate(s, 1, [4, 8], 10, 0, [[1.0, 2.0]], sampling="sobol")


def test_gap_sine_manifold_decreasing_across_seed_groups():
    s = _sine_sampler(np.linspace(0, 1, 200))
    for group in range(10):
        g = np.mean([pod_gap_estimate(s, 3, [4, 8, 16, 32, 64], 500, 5 * group + r, [[1.0, 2.0]]) for r in range(5)], axis=0)
        assert np.all(np.diff(g) <= 0) and g[-1] <= 1e-3, (group, g)


def test_gap_uniform_sampling_option():
    s = _sine_sampler(np.linspace(0, 1, 50))
    g = pod_gap_estimate(s, 2, [4, 64], 100, 0, [[1.0, 2.0]], sampling="uniform")
    assert g.shape == (2,) and np.all(g >= 0)
