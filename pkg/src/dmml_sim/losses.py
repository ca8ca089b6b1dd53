"""Scalar training objectives.

Task cross-entropy, the three feature-decomposition terms (similarity,
auxiliary classification, orthogonality), the distillation term against the
aggregated generator, and the generator's own objective. All functions build
tape Tensors so gradients come out of the same graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn_kernel import LOG_FLOOR, PROB_FLOOR, Tensor
from .mm_model import generator_forward


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0   # similarity
    alpha2: float = 1.0   # auxiliary classification
    alpha3: float = 1.0   # orthogonality
    alpha4: float = 1.0   # distillation
    beta: float = 1.0     # generator feature-mean pull


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """KL divergence between two probability vectors, entries floored at
    1e-12 inside the logs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    logs = np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR))
    return float(np.sum(p * logs))


def _kl_rows(logits_p: Tensor, logits_q: Tensor) -> Tensor:
    """Row-wise KL(softmax(logits_p) || softmax(logits_q)), length-batch."""
    log_p = logits_p.log_softmax().clamp_min(LOG_FLOOR)
    log_q = logits_q.log_softmax().clamp_min(LOG_FLOOR)
    p = logits_p.log_softmax().exp()
    return (p * (log_p - log_q)).sum(axis=1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    labels = np.asarray(labels)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    log_p = logits.log_softmax().clamp_min(LOG_FLOOR)
    return -(Tensor(onehot) * log_p).sum() / labels.shape[0]


def f_task(logits: Tensor, labels: np.ndarray) -> Tensor:
    return cross_entropy(logits, labels)


def f_sim(h_common: dict[int, Tensor], head_W: Tensor) -> Tensor:
    """Average pairwise KL between the common-classifier outputs of the
    active modalities. Zero for fewer than two active modalities."""
    mods = sorted(h_common)
    if len(mods) < 2:
        return Tensor(0.0)
    logits = {m: h_common[m] @ head_W.T for m in mods}
    total = None
    for m in mods:
        for m2 in mods:
            if m2 == m:
                continue
            term = _kl_rows(logits[m], logits[m2]).mean()
            total = term if total is None else total + term
    return total / (len(mods) * (len(mods) - 1))


def f_cls(h_common: dict[int, Tensor], head_W: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of the common classifier over active modalities."""
    total = None
    for m in sorted(h_common):
        term = cross_entropy(h_common[m] @ head_W.T, labels)
        total = term if total is None else total + term
    return total / len(h_common)


def f_dif(features: dict[int, tuple[Tensor, Tensor]]) -> Tensor:
    """Orthogonality penalty: mean squared entry of the cross-Gram matrix
    between common and specific feature batches, summed over active
    modalities. The per-pair mean keeps the penalty's magnitude independent
    of batch size so it cannot drown the task gradient."""
    total = None
    for m in sorted(features):
        h_common, h_specific = features[m]
        # feature rows are samples, so the cross-Gram is sample-by-sample
        term = (h_common @ h_specific.T).square().mean()
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def f_dec(features: dict[int, tuple[Tensor, Tensor]], head_W: Tensor,
          labels: np.ndarray, weights: LossWeights) -> Tensor:
    h_common = {m: f[0] for m, f in features.items()}
    return (weights.alpha1 * f_sim(h_common, head_W)
            + weights.alpha2 * f_cls(h_common, head_W, labels)
            + weights.alpha3 * f_dif(features))


def f_kd(h_common: dict[int, Tensor], labels: np.ndarray, head_W: Tensor,
         gen_params: dict[int, Tensor], num_classes: int,
         z_by_modality: dict[int, np.ndarray]) -> Tensor:
    """Distillation against the frozen aggregated generator: KL between the
    common-classifier output of each active modality and that of a generated
    feature conditioned on the sample's label."""
    total = None
    for m in sorted(h_common):
        h_gen = generator_forward(z_by_modality[m], labels, gen_params, num_classes)
        term = _kl_rows(h_common[m] @ head_W.T, h_gen @ head_W.T).mean()
        total = term if total is None else total + term
    return total / len(h_common)


def f_gen(gen_params: dict[int, Tensor], head_W: Tensor, h_bar: dict[int, np.ndarray],
          labels: np.ndarray, z: np.ndarray, num_classes: int, beta: float) -> Tensor:
    """Generator objective: classify generated features correctly while
    pulling them toward the per-label mean of the true common features.
    head_W must be a frozen tensor."""
    labels = np.asarray(labels)
    h_gen = generator_forward(z, labels, gen_params, num_classes)
    ce = cross_entropy(h_gen @ head_W.T, labels)
    targets = np.stack([h_bar[int(y)] for y in labels])
    dist = ((h_gen - Tensor(targets)).square().sum(axis=1)
            .clamp_min(1e-24).sqrt().mean())
    return ce + beta * dist
