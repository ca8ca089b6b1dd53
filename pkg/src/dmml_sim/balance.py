"""Training-balance machinery.

Parameter-variation measurement, the balance metric coupling iteration
counts with inverse variation, reference-modality selection, the uniform
round-robin iteration scheduler, per-iteration activation masks, and the
cluster-head coordination step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPSILON = 1e-8


class SchedulingError(RuntimeError):
    pass


def param_variation(local_new: list[np.ndarray], agg_prev: list[np.ndarray],
                    agg_new: list[np.ndarray], epsilon: float = DEFAULT_EPSILON) -> float:
    """Relative extractor variation: ||local_new - agg_prev|| / ||agg_new||
    over the concatenated block list. A zero-norm denominator falls back to
    dividing by epsilon."""
    num = np.sqrt(sum(float(((a - b) ** 2).sum())
                      for a, b in zip(local_new, agg_prev)))
    den = np.sqrt(sum(float((a ** 2).sum()) for a in agg_new))
    if den == 0.0:
        return num / epsilon
    return num / den


def balance_metric(n_by_device: dict[int, int], coeff: dict[int, float]) -> float:
    """gamma = sum_k N_k * coeff_k, linear in the iteration counts."""
    return sum(n_by_device[k] * coeff[k] for k in coeff)


def select_reference_modality(n_max: dict[int, int], coeff: dict[int, dict[int, float]]) -> int:
    """Modality whose full-budget balance metric is smallest (it keeps the
    maximum feasible iterations); ties go to the lowest modality id."""
    best_m, best_val = None, None
    for m in sorted(coeff):
        val = balance_metric({k: n_max[k] for k in coeff[m]}, coeff[m])
        if best_val is None or val < best_val - 1e-15:
            best_m, best_val = m, val
    return best_m


def schedule_iterations(n_max: dict[int, int], coeff: dict[int, dict[int, float]],
                        owners: dict[int, list[int]], multi_owners: dict[int, list[int]]):
    """Round-robin iteration scheduling.

    The reference modality and all single-modality devices keep their full
    budget. Every other modality starts all its multi-modal owners at the
    budget and decrements them one iteration at a time in ascending device
    id until its balance metric drops to the reference value, flooring at
    zero. Returns (schedule, m_hat, gamma, infeasible set).
    """
    m_hat = select_reference_modality(n_max, coeff)
    gamma_ref = balance_metric({k: n_max[k] for k in coeff[m_hat]}, coeff[m_hat])
    schedule = {m: {k: n_max[k] for k in owners[m]} for m in owners}
    gamma = {m_hat: gamma_ref}
    infeasible = set()
    for m in sorted(owners):
        if m == m_hat:
            continue
        n = schedule[m]
        adjustable = sorted(multi_owners[m])
        i = 0
        while balance_metric(n, coeff[m]) > gamma_ref:
            if not adjustable or all(n[k] == 0 for k in adjustable):
                infeasible.add(m)
                break
            k = adjustable[i % len(adjustable)]
            if n[k] > 0:
                n[k] -= 1
            i += 1
        gamma[m] = balance_metric(n, coeff[m])
    return schedule, m_hat, gamma, infeasible


def build_masks(n_m: int, n_k: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean activation vector over n_k iteration slots with exactly n_m
    uniformly chosen ones."""
    if not 0 <= n_m <= n_k:
        raise SchedulingError(f"mask count {n_m} outside [0, {n_k}]")
    mask = np.zeros(n_k, dtype=bool)
    mask[rng.choice(n_k, size=n_m, replace=False)] = True
    return mask


@dataclass
class ClusterReport:
    """One device's message to the cluster head: its feasible iteration
    budget and, per owned modality, the terms xi/(phi+eps) it computed for
    each in-neighborhood device (itself included)."""

    device: int
    n_max: int
    terms: dict[int, dict[int, float]] = field(default_factory=dict)


def select_cluster_head(adjacency: np.ndarray) -> int:
    deg = np.asarray(adjacency).sum(axis=1)
    return int(np.argmax(deg))  # argmax takes the lowest id on ties


def cluster_head_round(reports: list[ClusterReport], owners: dict[int, list[int]],
                       multi_owners: dict[int, list[int]], expected_devices):
    """Run the scheduling step as the cluster head would: sum the received
    terms into per-device coefficients, then apply the round-robin scheduler.
    A report from every expected device must be present."""
    expected = set(expected_devices)
    present = {r.device for r in reports}
    if present != expected:
        raise SchedulingError(f"missing reports from devices {sorted(expected - present)}")
    n_max = {r.device: r.n_max for r in reports}
    coeff: dict[int, dict[int, float]] = {m: {k: 0.0 for k in owners[m]} for m in owners}
    for r in reports:
        for m, row in r.terms.items():
            for k2, val in row.items():
                coeff[m][k2] += val
    return schedule_iterations(n_max, coeff, owners, multi_owners)
