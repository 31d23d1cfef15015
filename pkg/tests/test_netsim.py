import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from malleability.netsim import (
    MODIFIED, ORIGINAL, InfeasibleConfig, Network, SimConfig, build_network, estimate_success,
    run_trial, sweep, trial_rng, wilson_interval,
)

SMALL = SimConfig(node_count=100, degree=6, attacker_connections=20, trials=200, seed=3)


def test_complete_graph():
    net = build_network(SimConfig(node_count=4, degree=3, attacker_connections=1), np.random.default_rng(0))
    assert net.edges.tolist() == [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]


def test_default_size_edges_and_connectivity():
    net = build_network(SimConfig(), np.random.default_rng(5))
    assert net.edge_count == 4000
    assert len({tuple(e) for e in net.edges.tolist()}) == 4000
    assert all(u < v for u, v in net.edges.tolist())
    assert net.is_connected()


def test_build_is_deterministic():
    a = build_network(SMALL, np.random.default_rng(9))
    b = build_network(SMALL, np.random.default_rng(9))
    assert np.array_equal(a.edges, b.edges)


@pytest.mark.parametrize("bad", [
    {"degree": 1}, {"degree": 100}, {"attacker_connections": 101}, {"trials": 0},
    {"latency_ms": (5, 1)}, {"attacker_delay_ms": -1}, {"attacker_mode": "x"},
])
def test_infeasible(bad):
    with pytest.raises(InfeasibleConfig):
        SimConfig(**{**SMALL.to_dict(), **bad}).validate()


def test_unknown_key_rejected():
    with pytest.raises(InfeasibleConfig):
        SimConfig.from_mapping({"nodes": 5})


def test_line_geometry_modified_wins():
    net = Network(4, np.array([[0, 1], [1, 2], [2, 3]]))
    cfg = SimConfig(node_count=4, degree=2, latency_ms=(1, 1), attacker_delay_ms=0,
                    attacker_mode="simultaneous")
    res = run_trial(net, cfg, np.random.default_rng(0), victim=0, attacker_peers=[3], miner=3,
                    latencies=np.full(3, 100.0))
    assert res.node_versions == (ORIGINAL, ORIGINAL, MODIFIED, MODIFIED)
    assert res.modified_won and res.first_seen_original_fraction == 0.5


def test_react_attacker_waits_for_original():
    net = Network(4, np.array([[0, 1], [1, 2], [2, 3]]))
    cfg = SimConfig(node_count=4, degree=2, latency_ms=(1, 1), attacker_delay_ms=0)
    res = run_trial(net, cfg, np.random.default_rng(0), victim=0, attacker_peers=[3], miner=3,
                    latencies=np.full(3, 100.0))
    assert res.node_versions == (ORIGINAL,) * 4


def test_no_attacker_means_original():
    cfg = SimConfig(**{**SMALL.to_dict(), "attacker_connections": 0, "trials": 50})
    est = estimate_success(cfg)
    assert est.probability == 0.0 and est.mean_original_fraction == 1.0


def test_huge_delay_means_original():
    cfg = SimConfig(**{**SMALL.to_dict(), "attacker_delay_ms": 1e7, "trials": 50})
    assert estimate_success(cfg).successes == 0


@pytest.mark.parametrize("seed", range(5))
def test_first_seen_matches_dijkstra(seed):
    cfg = SimConfig(node_count=60, degree=4, attacker_connections=6, latency_ms=(40, 40), attacker_delay_ms=15,
                    attacker_mode="simultaneous")
    rng = np.random.default_rng(seed)
    net = build_network(cfg, rng)
    lat = rng.uniform(20, 200, net.edge_count)
    peers = rng.choice(60, 6, replace=False).tolist()
    victim = int(rng.integers(60))
    res = run_trial(net, cfg, rng, victim=victim, attacker_peers=peers, miner=0, latencies=lat)

    n = 60
    a = n  # virtual attacker node
    rows = net.edges[:, 0].tolist() + net.edges[:, 1].tolist() + [a] * len(peers)
    cols = net.edges[:, 1].tolist() + net.edges[:, 0].tolist() + peers
    w = lat.tolist() * 2 + [15 + 40] * len(peers)
    graph = coo_matrix((w, (rows, cols)), shape=(n + 1, n + 1)).tocsr()
    _, _, sources = dijkstra(graph, indices=[victim, a], min_only=True,
                             return_predecessors=True)
    expected = tuple(MODIFIED if s == a else ORIGINAL for s in sources[:n])
    assert res.node_versions == expected


def test_estimate_deterministic_and_interval():
    a, b = estimate_success(SMALL), estimate_success(SMALL)
    assert a == b
    lo, hi = a.interval
    assert lo <= a.probability <= hi


def test_trials_are_paired():
    r1 = trial_rng(3, 7).random(4)
    assert np.array_equal(r1, trial_rng(3, 7).random(4))
    assert not np.array_equal(r1, trial_rng(3, 8).random(4))


def test_sweep_monotone_and_sorted():
    rows = sweep(SMALL, "attacker_connections", [50, 1, 10, 5])
    assert [v for v, _ in rows] == [1, 5, 10, 50]
    probs = [e.probability for _, e in rows]
    assert probs == sorted(probs)
    assert probs[-1] > probs[0]


def test_sweep_unknown_parameter():
    with pytest.raises(InfeasibleConfig):
        sweep(SMALL, "nope", [1])


def test_wilson():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-4) and hi == pytest.approx(0.5962, abs=1e-4)
    assert wilson_interval(0, 10)[0] == 0.0


def test_wilson_edges_are_exact():
    assert wilson_interval(0, 300)[0] == 0.0
    assert wilson_interval(300, 300)[1] == 1.0
