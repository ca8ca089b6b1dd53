"""Synthetic two-modality dataset and device partitioning.

Each sample draws a class prototype in a latent space, perturbs it into a
shared latent, and projects it through a fixed random linear map per modality
plus modality noise. Both modalities of one sample share the latent, so
cross-modal structure exists for distillation to exploit.

Partitioning covers the modality-availability axis (gamma) and the
label-skew axis (phi).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class PartitionError(ValueError):
    """Invalid partition request (divisibility, sample shortage, ...)."""


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 6
    latent_dim: int = 16
    input_dims: tuple[int, ...] = (32, 32)
    sigma_shared: float = 0.5
    sigma_noise: float | tuple[float, ...] = (1.0, 2.5)   # scalar or per modality
    specific_dim: int = 8          # modality-specific nuisance latent size
    sigma_specific: float = 3.0    # scale of the nuisance latent
    train_per_class: int = 100
    test_per_class: int = 50
    seed: int = 0


@dataclass
class Dataset:
    """Global sample store; every sample carries all modality arrays."""

    x: list[np.ndarray]          # one [N x d_m] array per modality
    y: np.ndarray
    x_test: list[np.ndarray]
    y_test: np.ndarray
    prototypes: np.ndarray       # [C x latent_dim]
    proj: list[np.ndarray]       # per-modality [d_m x latent_dim]

    @property
    def num_train(self) -> int:
        return self.y.shape[0]


@dataclass
class DevicePartition:
    device: int
    modalities: tuple[int, ...]
    sample_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    dominant_label: int | None = None


def generate(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    C, dz, du = spec.num_classes, spec.latent_dim, spec.specific_dim
    prototypes = rng.standard_normal((C, dz))
    proj = [rng.standard_normal((d, dz)) / np.sqrt(dz) for d in spec.input_dims]
    # fixed maps carrying the class-irrelevant modality-specific structure
    nuisance = [rng.standard_normal((d, du)) / np.sqrt(max(1, du))
                for d in spec.input_dims]

    sigmas = (spec.sigma_noise if isinstance(spec.sigma_noise, (tuple, list))
              else [spec.sigma_noise] * len(spec.input_dims))

    def draw(per_class: int):
        labels = np.repeat(np.arange(C), per_class)
        latents = prototypes[labels] + spec.sigma_shared * rng.standard_normal((labels.size, dz))
        xs = []
        for A, B, sn in zip(proj, nuisance, sigmas):
            x = latents @ A.T + sn * rng.standard_normal((labels.size, A.shape[0]))
            if du > 0 and spec.sigma_specific > 0.0:
                u = spec.sigma_specific * rng.standard_normal((labels.size, du))
                x += u @ B.T
            xs.append(x)
        return xs, labels

    x, y = draw(spec.train_per_class)
    x_test, y_test = draw(spec.test_per_class)
    return Dataset(x, y, x_test, y_test, prototypes, proj)


def partition_modalities(K: int, gamma: float, num_modalities: int = 2) -> list[tuple[int, ...]]:
    """Per-device modality sets for gamma in {1, 0.5, 0}.

    gamma=1: everyone owns both; gamma=0.5: half own both, a quarter each own
    only one; gamma=0: half own modality 0, half modality 1.
    """
    if num_modalities != 2:
        raise PartitionError("modality availability axis is defined for 2 modalities")
    if gamma == 1:
        return [(0, 1)] * K
    if gamma == 0.5:
        if K % 4 != 0:
            raise PartitionError(f"gamma=0.5 needs K divisible by 4, got {K}")
        return [(0, 1)] * (K // 2) + [(0,)] * (K // 4) + [(1,)] * (K // 4)
    if gamma == 0:
        if K % 2 != 0:
            raise PartitionError(f"gamma=0 needs K divisible by 2, got {K}")
        return [(0,)] * (K // 2) + [(1,)] * (K // 2)
    raise PartitionError(f"gamma must be one of 1, 0.5, 0; got {gamma}")


def partition_labels(labels: np.ndarray, K: int, phi, seed: int) -> list[DevicePartition]:
    """Split sample indices across K devices with equal quotas.

    phi='iid' shuffles uniformly; numeric phi assigns each device a dominant
    class (round-robin over classes by device id) and fills that fraction of
    its quota from the dominant class, the rest uniformly from other classes.
    """
    labels = np.asarray(labels)
    N = labels.shape[0]
    rng = np.random.default_rng(seed)
    quota = N // K
    parts = [DevicePartition(k, ()) for k in range(K)]

    if phi == "iid":
        order = rng.permutation(N)
        for k in range(K):
            ids = np.sort(order[k * quota:(k + 1) * quota])
            parts[k].sample_ids = ids
        return parts

    phi = float(phi)
    if not 0.0 < phi < 1.0:
        raise PartitionError(f"phi must be 'iid' or a fraction in (0,1); got {phi}")
    classes = np.unique(labels)
    pools = {int(c): list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    n_dom = int(round(phi * quota))
    # reserve every device's dominant draw first so a device late in the
    # order cannot find its dominant pool drained by earlier uniform fills
    doms = [int(classes[k % len(classes)]) for k in range(K)]
    taken: dict[int, list[int]] = {}
    for k, dom in enumerate(doms):
        parts[k].dominant_label = dom
        if len(pools[dom]) < n_dom:
            raise PartitionError(f"class {dom} exhausted while building device {k}")
        taken[k] = [pools[dom].pop() for _ in range(n_dom)]
    # remainder: allocate one sample at a time from the class with the most
    # supply left to the eligible (non-dominant) device with the most unmet
    # demand; global balancing keeps tight configurations feasible
    rest = quota - n_dom
    demand = {k: rest for k in range(K)}
    counts = {k: {int(c): 0 for c in classes} for k in range(K)}
    supply = {c: len(pool) for c, pool in pools.items()}
    for _ in range(rest * K):
        need = max(demand.values())
        k_ties = [k for k, d in demand.items() if d == need]
        k = k_ties[int(rng.integers(len(k_ties)))]
        elig = {c: n for c, n in supply.items() if c != doms[k] and n > 0}
        if elig:
            top = max(elig.values())
            c_ties = [c for c, n in elig.items() if n == top]
            c = c_ties[int(rng.integers(len(c_ties)))]
            counts[k][c] += 1
            supply[c] -= 1
            demand[k] -= 1
            continue
        # endgame repair: only device k's own dominant class has stock, so
        # swap a unit through a device that can absorb that class instead
        c0 = doms[k]
        if supply.get(c0, 0) == 0:
            raise PartitionError("not enough non-dominant samples to fill quotas")
        for j in range(K):
            if j == k or doms[j] == c0:
                continue
            swap = next((c for c in sorted(counts[j]) if c != c0 and counts[j][c] > 0), None)
            if swap is not None:
                counts[j][swap] -= 1
                counts[k][swap] += 1
                counts[j][c0] += 1
                supply[c0] -= 1
                demand[k] -= 1
                break
        else:
            raise PartitionError("not enough non-dominant samples to fill quotas")
    for k in range(K):
        chosen: list[int] = []
        for c in sorted(counts[k]):
            if counts[k][c] == 0:
                continue
            pick = set(rng.choice(len(pools[c]), size=counts[k][c], replace=False).tolist())
            chosen += [pools[c][i] for i in pick]
            pools[c] = [v for i, v in enumerate(pools[c]) if i not in pick]
        parts[k].sample_ids = np.sort(np.array(taken[k] + chosen, dtype=np.int64))
    return parts


def build_partitions(dataset: Dataset, K: int, gamma: float, phi, seed: int) -> list[DevicePartition]:
    mods = partition_modalities(K, gamma, len(dataset.x))
    parts = partition_labels(dataset.y, K, phi, seed)
    for k, p in enumerate(parts):
        p.modalities = mods[k]
    return parts


def export_dataset(dataset: Dataset, path: str):
    """Columnar CSV dump: sample id, label, then the modality vectors."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["sample_id", "label"]
        for m, x in enumerate(dataset.x):
            header += [f"x{m}_{j}" for j in range(x.shape[1])]
        writer.writerow(header)
        for i in range(dataset.num_train):
            row = [i, int(dataset.y[i])]
            for x in dataset.x:
                row += [repr(v) for v in x[i]]
            writer.writerow(row)


def export_partition_manifest(parts: list[DevicePartition], path: str):
    with open(path, "w") as fh:
        for p in parts:
            mods = ",".join(str(m) for m in p.modalities)
            ids = ",".join(str(i) for i in p.sample_ids)
            fh.write(f"device {p.device} modalities [{mods}] "
                     f"dominant {p.dominant_label} samples [{ids}]\n")
