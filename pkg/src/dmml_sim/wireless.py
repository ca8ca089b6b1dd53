"""Device placement, D2D topology, channel model, and aggregation weights.

Devices are dropped uniformly in a disc; edges connect devices within range.
Channel gains are Rayleigh with amplitude mean matched to the free-space
path loss at 2.6 GHz. Aggregation weights are Metropolis-Hastings, computed
on the full graph for the common parameters and on each modality-owner
subgraph for the per-modality parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CARRIER_GHZ = 2.6


class TopologyError(RuntimeError):
    """Could not build a usable topology."""


def place_devices(K: int, diameter_m: float, seed: int) -> np.ndarray:
    """K points uniform over a disc of the given diameter, centred at 0."""
    if K < 2:
        raise TopologyError("need at least 2 devices")
    rng = np.random.default_rng(seed)
    r = (diameter_m / 2.0) * np.sqrt(rng.uniform(size=K))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=K)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def build_adjacency(positions: np.ndarray, range_m: float) -> np.ndarray:
    d = pairwise_distances(positions)
    adj = (d <= range_m)
    np.fill_diagonal(adj, False)
    return adj


def is_connected(adj: np.ndarray) -> bool:
    K = adj.shape[0]
    seen = {0}
    stack = [0]
    while stack:
        k = stack.pop()
        for k2 in np.flatnonzero(adj[k]):
            if k2 not in seen:
                seen.add(int(k2))
                stack.append(int(k2))
    return len(seen) == K


def mh_weights(adj: np.ndarray) -> np.ndarray:
    """Metropolis-Hastings mixing matrix for an adjacency matrix.

    Off-diagonal entries 1/(1+max(deg_i, deg_j)) for edges, diagonal takes
    the remainder. Symmetric and doubly stochastic; an isolated node gets
    self-weight 1.
    """
    adj = np.asarray(adj, dtype=bool)
    deg = adj.sum(axis=1)
    K = adj.shape[0]
    W = np.zeros((K, K))
    for i in range(K):
        for j in np.flatnonzero(adj[i]):
            W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


@dataclass
class Topology:
    """Immutable round-independent network structure."""

    positions: np.ndarray
    adjacency: np.ndarray
    distances: np.ndarray
    weights: np.ndarray                       # common MH matrix, K x K
    modality_owners: list[np.ndarray]         # device ids owning modality m
    modality_weights: list[np.ndarray]        # MH matrix over each owner set

    def neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[k])

    def modality_neighbors(self, k: int, m: int) -> np.ndarray:
        owners = set(self.modality_owners[m].tolist())
        return np.array([k2 for k2 in self.neighbors(k) if k2 in owners], dtype=np.int64)


def build_topology(modality_sets: list[tuple[int, ...]], diameter_m: float,
                   range_m: float, seed: int, max_retries: int = 50) -> Topology:
    """Place devices and build all weight matrices. Retries placement with a
    derived seed until the full graph is connected."""
    K = len(modality_sets)
    num_modalities = max(max(s) for s in modality_sets) + 1
    for attempt in range(max_retries):
        positions = place_devices(K, diameter_m, seed + attempt)
        adj = build_adjacency(positions, range_m)
        if is_connected(adj):
            break
    else:
        raise TopologyError(f"no connected topology in {max_retries} attempts")
    owners, mod_weights = [], []
    for m in range(num_modalities):
        own = np.array([k for k, s in enumerate(modality_sets) if m in s], dtype=np.int64)
        owners.append(own)
        mod_weights.append(mh_weights(adj[np.ix_(own, own)]))
    return Topology(positions, adj, pairwise_distances(positions),
                    mh_weights(adj), owners, mod_weights)


# ---------------------------------------------------------------------------
# Channel and rate
# ---------------------------------------------------------------------------


def path_loss_db(d_m: float, carrier_ghz: float = CARRIER_GHZ) -> float:
    if d_m <= 0:
        raise ValueError("distance must be positive")
    return 32.4 + 20.0 * np.log10(carrier_ghz) + 20.0 * np.log10(d_m)


def sample_channel(seed: int, round_index: int, k: int, k2: int, d_m: float,
                   carrier_ghz: float = CARRIER_GHZ) -> float:
    """Rayleigh gain for an unordered pair, reciprocal within a round and
    reproducible from (seed, round, pair)."""
    lo, hi = (k, k2) if k <= k2 else (k2, k)
    # stream tag 3 keeps channel draws disjoint from other simulator streams
    rng = np.random.default_rng(np.random.SeedSequence((seed, 3, round_index, lo, hi)))
    mean = 10.0 ** (-path_loss_db(d_m, carrier_ghz) / 20.0)
    scale = mean / np.sqrt(np.pi / 2.0)
    return float(rng.rayleigh(scale))


def sample_round_gains(topology: Topology, seed: int, round_index: int,
                       carrier_ghz: float = CARRIER_GHZ) -> dict[tuple[int, int], float]:
    """Gains for every edge of the topology, keyed by ordered (lo, hi)."""
    gains = {}
    K = topology.adjacency.shape[0]
    for k in range(K):
        for k2 in np.flatnonzero(topology.adjacency[k]):
            if k2 > k:
                gains[(k, int(k2))] = sample_channel(
                    seed, round_index, k, int(k2), topology.distances[k, k2], carrier_ghz)
    return gains


def link_rate(g: float, power_w: float, bandwidth_hz: float, noise_psd: float) -> float:
    """Shannon rate in bits/s with log base 2."""
    snr = power_w * g * g / (bandwidth_hz * noise_psd)
    return bandwidth_hz * np.log2(1.0 + snr)


def dump_topology(topology: Topology, path: str):
    with open(path, "w") as fh:
        for k, (x, y) in enumerate(topology.positions):
            fh.write(f"device {k} pos ({x:.3f}, {y:.3f})\n")
        K = topology.adjacency.shape[0]
        for k in range(K):
            for k2 in range(k + 1, K):
                if topology.adjacency[k, k2]:
                    fh.write(f"edge {k}-{k2} dist {topology.distances[k, k2]:.3f} "
                             f"weight {topology.weights[k, k2]:.6f}\n")
