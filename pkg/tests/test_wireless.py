import numpy as np
import pytest

from dmml_sim import wireless
from dmml_sim.wireless import (Topology, TopologyError, build_adjacency,
                               build_topology, is_connected, link_rate,
                               mh_weights, pairwise_distances, path_loss_db,
                               place_devices, sample_channel,
                               sample_round_gains)


class TestPlacement:
    def test_inside_disc(self):
        pos = place_devices(500, 100.0, seed=0)
        assert np.all(np.hypot(pos[:, 0], pos[:, 1]) <= 50.0 + 1e-9)

    def test_uniform_over_area(self):
        # under area-uniform placement, half the mass lies within r/sqrt(2)
        pos = place_devices(20000, 100.0, seed=1)
        frac = np.mean(np.hypot(pos[:, 0], pos[:, 1]) <= 50.0 / np.sqrt(2.0))
        assert frac == pytest.approx(0.5, abs=0.02)

    def test_deterministic(self):
        assert np.array_equal(place_devices(8, 100.0, 5), place_devices(8, 100.0, 5))

    def test_too_few(self):
        with pytest.raises(TopologyError):
            place_devices(1, 100.0, 0)


class TestGraph:
    def test_adjacency_by_range(self):
        pos = np.array([[0.0, 0.0], [30.0, 0.0], [90.0, 0.0]])
        adj = build_adjacency(pos, 50.0)
        assert adj[0, 1] and adj[1, 0]
        assert not adj[0, 2] and not adj[1, 2]
        assert not adj.diagonal().any()

    def test_connectivity(self):
        chain = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
        assert is_connected(chain)
        split = np.zeros((3, 3), dtype=bool)
        split[0, 1] = split[1, 0] = True
        assert not is_connected(split)


class TestMHWeights:
    def test_path_graph_hand_values(self):
        # path 1-2-3: degrees 1,2,1 so both edges weigh 1/3
        adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
        W = mh_weights(adj)
        assert W[0, 1] == pytest.approx(1 / 3)
        assert W[1, 2] == pytest.approx(1 / 3)
        assert W[0, 0] == pytest.approx(2 / 3)
        assert W[1, 1] == pytest.approx(1 / 3)

    def test_complete_graph(self):
        adj = ~np.eye(4, dtype=bool)
        W = mh_weights(adj)
        assert np.allclose(W, np.full((4, 4), 0.25))

    def test_isolated_node_self_weight(self):
        W = mh_weights(np.zeros((2, 2), dtype=bool))
        assert np.allclose(W, np.eye(2))

    def test_doubly_stochastic_100_random_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            K = int(rng.integers(2, 13))
            pos = place_devices(K, 100.0, int(rng.integers(1 << 30)))
            W = mh_weights(build_adjacency(pos, 50.0))
            assert np.allclose(W, W.T)
            assert np.allclose(W.sum(axis=0), 1.0, atol=1e-12)
            assert np.allclose(W.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(W >= -1e-15)


class TestTopology:
    def test_owner_sets_and_subgraph_weights(self):
        topo = build_topology([(0, 1), (0,), (1,), (0, 1)], 100.0, 50.0, seed=3)
        assert topo.modality_owners[0].tolist() == [0, 1, 3]
        assert topo.modality_owners[1].tolist() == [0, 2, 3]
        for W in topo.modality_weights:
            assert np.allclose(W.sum(axis=1), 1.0)

    def test_connected_after_retries(self):
        # huge disc with tiny range forces retries until failure
        with pytest.raises(TopologyError):
            build_topology([(0,)] * 6, 1e6, 1.0, seed=0, max_retries=5)

    def test_modality_neighbors(self):
        pos = np.zeros((3, 2))
        pos[1] = [10.0, 0.0]
        pos[2] = [0.0, 10.0]
        adj = build_adjacency(pos, 50.0)
        topo = Topology(pos, adj, pairwise_distances(pos), mh_weights(adj),
                        [np.array([0, 1]), np.array([0, 1, 2])],
                        [np.eye(2), np.eye(3)])
        assert topo.modality_neighbors(2, 0).tolist() == [0, 1]
        assert topo.modality_neighbors(2, 1).tolist() == [0, 1]


class TestChannel:
    def test_path_loss_hand_values(self):
        # 32.4 + 20 log10(2.6) at 1 m
        assert path_loss_db(1.0) == pytest.approx(40.6999, abs=1e-3)
        assert path_loss_db(50.0) == pytest.approx(40.6999 + 20 * np.log10(50), abs=1e-3)
        assert path_loss_db(50.0) == pytest.approx(74.679, abs=1e-2)

    def test_path_loss_monotone(self):
        ds = np.linspace(1, 100, 50)
        pl = [path_loss_db(d) for d in ds]
        assert np.all(np.diff(pl) > 0)

    def test_reciprocal_and_round_varying(self):
        a = sample_channel(1, 4, 2, 5, 30.0)
        b = sample_channel(1, 4, 5, 2, 30.0)
        c = sample_channel(1, 5, 2, 5, 30.0)
        assert a == b
        assert a != c

    def test_rayleigh_mean_matches_path_loss(self):
        d = 20.0
        target = 10.0 ** (-path_loss_db(d) / 20.0)
        draws = [sample_channel(s, 0, 0, 1, d) for s in range(20000)]
        assert np.mean(draws) == pytest.approx(target, rel=0.02)

    def test_round_gains_cover_edges(self):
        topo = build_topology([(0, 1)] * 6, 100.0, 50.0, seed=9)
        gains = sample_round_gains(topo, seed=2, round_index=0)
        edges = {(k, k2) for k in range(6)
                 for k2 in np.flatnonzero(topo.adjacency[k]) if k2 > k}
        assert set(gains) == edges
        assert all(g > 0 for g in gains.values())


class TestRate:
    def test_zero_gain_zero_rate(self):
        assert link_rate(0.0, 0.1, 5e5, 1e-17) == 0.0

    def test_hand_value(self):
        # SNR = 0.1 * 1 / (5e5 * 2e-7) = 1 -> rate = B
        assert link_rate(1.0, 0.1, 5e5, 2e-7) == pytest.approx(5e5)

    def test_monotone_in_gain(self):
        r = [link_rate(g, 0.1, 5e5, 1e-17) for g in (1e-5, 1e-4, 1e-3)]
        assert r[0] < r[1] < r[2]
