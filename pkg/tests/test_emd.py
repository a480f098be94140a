import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedgmcc.data import ClientDataset, gen_base_task
from fedgmcc.emd import (
    Signature,
    emd_flow,
    emd_matrix,
    emd_pair,
    emd_population,
    signature_from_dataset,
    transport,
)
from oracles import emd_lp, euclid_costs


def random_signature(rng, m, dim=2, mass=1.0):
    w = rng.uniform(0.05, 1.0, size=m)
    return Signature(rng.normal(size=(m, dim)), mass * w / w.sum())


def test_identical_signatures_have_zero_distance():
    rng = np.random.default_rng(0)
    s = random_signature(rng, 4)
    assert emd_pair(s, s) == pytest.approx(0.0, abs=1e-14)


def test_point_masses():
    assert emd_pair(Signature([[0.0]], [1.0]), Signature([[3.0]], [1.0])) == pytest.approx(3.0, abs=1e-15)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        emd_pair(Signature([[0.0]], [1.0]), Signature([[0.0, 1.0]], [1.0]))


def test_bad_signatures_rejected():
    with pytest.raises(ValueError):
        Signature([[0.0]], [0.0])
    with pytest.raises(ValueError):
        Signature([[0.0], [1.0]], [1.0])


def test_matches_lp_oracle_on_random_small_pairs():
    rng = np.random.default_rng(1)
    for _ in range(100):
        m, n = rng.integers(1, 6, size=2)
        a, b = random_signature(rng, m), random_signature(rng, n)
        expected = emd_lp(a.weights, b.weights, euclid_costs(a.centroids, b.centroids))
        assert emd_pair(a, b) == pytest.approx(expected, abs=1e-9)


def test_unequal_masses_use_partial_matching():
    rng = np.random.default_rng(2)
    for _ in range(30):
        a = random_signature(rng, 4, mass=1.0)
        b = random_signature(rng, 3, mass=0.6)
        expected = emd_lp(a.weights, b.weights, euclid_costs(a.centroids, b.centroids))
        r = emd_flow(a, b)
        assert r.distance == pytest.approx(expected, abs=1e-9)
        assert r.flows.sum() == pytest.approx(0.6, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_flow_is_feasible_and_symmetric(seed, m, n):
    rng = np.random.default_rng(seed)
    a, b = random_signature(rng, m), random_signature(rng, n)
    r = emd_flow(a, b)
    assert np.all(r.flows >= -1e-12)
    np.testing.assert_allclose(r.flows.sum(axis=1), a.weights, atol=1e-12)
    np.testing.assert_allclose(r.flows.sum(axis=0), b.weights, atol=1e-12)
    assert emd_pair(a, b) == pytest.approx(emd_pair(b, a), abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_signature(rng, int(rng.integers(1, 5))) for _ in range(3))
    assert emd_pair(a, c) <= emd_pair(a, b) + emd_pair(b, c) + 1e-12


def test_transport_handles_degenerate_problems():
    # equal row/column sums create many degenerate pivots
    supply = np.full(6, 1.0)
    demand = np.full(6, 1.0)
    costs = np.abs(np.subtract.outer(np.arange(6), np.arange(6)[::-1])).astype(float)
    flows = transport(supply, demand, costs)
    # the cheapest assignment of a reversed line is the identity in cost terms
    best = min(sum(costs[i, p[i]] for i in range(6)) for p in itertools.permutations(range(6)))
    assert np.sum(flows * costs) == pytest.approx(best, abs=1e-12)


def test_signature_of_single_point():
    d = ClientDataset(0, [[0.2, 0.7]], [1], n_classes=2)
    s = signature_from_dataset(d, bins=4)
    assert len(s.weights) == 1 and s.weights[0] == 1.0 and s.labels.tolist() == [1]


@given(st.integers(0, 1000), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_signature_weights_sum_to_one(seed, bins):
    d = gen_base_task(60, 3, seed=seed)
    s = signature_from_dataset(d, bins)
    assert s.total == pytest.approx(1.0, abs=1e-9)
    assert np.array_equal(signature_from_dataset(d, bins).centroids, s.centroids)


def test_label_disagreement_costs_at_least_the_diameter():
    x = np.array([[0.0, 0.0], [1.0, 1.0]])
    a = ClientDataset(0, x, [0, 0], 2)
    b = ClientDataset(1, x, [1, 1], 2)
    bounds = (np.zeros(2), np.ones(2))
    d = emd_pair(signature_from_dataset(a, 2, bounds), signature_from_dataset(b, 2, bounds))
    assert d == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_population_zero_for_identical_clients():
    d = gen_base_task(80, 2, seed=0)
    clients = [ClientDataset(i, d.x, d.y, 2) for i in range(3)]
    assert emd_population(clients, bins=3) == pytest.approx(0.0, abs=1e-12)


def test_population_two_disjoint_point_masses():
    # client A: class 0 at x=0; client B: class 1 at x=1; 2 bins on [0, 1]
    # centroids 0.25 and 0.75, class gap = diameter 1, so the off-class cost is
    # sqrt(0.5^2 + 1^2). Pooled mass is half on each, so each client ships half
    # its mass across: EMD = 0.5 * sqrt(1.25) for both, and so is the mean.
    a = ClientDataset(0, np.zeros((5, 1)), np.zeros(5, dtype=int), 2)
    b = ClientDataset(1, np.ones((5, 1)), np.ones(5, dtype=int), 2)
    expected = 0.5 * np.sqrt(1.25)
    assert emd_population([a, b], bins=2) == pytest.approx(expected, abs=1e-12)
    assert emd_population([b, a], bins=2) == pytest.approx(expected, abs=1e-12)


def test_population_is_size_weighted_and_order_free():
    d = gen_base_task(300, 3, seed=4)
    order = np.argsort(d.x[:, 0])
    parts = [d.subset(order[:60], 0), d.subset(order[60:200], 1), d.subset(order[200:], 2)]
    score = emd_population(parts, bins=3)
    assert score == pytest.approx(emd_population(parts[::-1], bins=3), abs=1e-12)
    m = emd_matrix(parts, bins=3)
    assert np.allclose(m, m.T) and np.all(np.diag(m) == 0)


def test_population_needs_two_clients():
    with pytest.raises(ValueError):
        emd_population([gen_base_task(40, 2, seed=0)], bins=2)
