"""Multi-modal network with feature decomposition and a conditional generator.

Each modality branch is a 2-layer dense extractor whose output splits into a
modality-common half and a modality-specific half. The common half feeds a
classifier shared across modalities; the specific half feeds a per-modality
classifier. A small conditional generator maps (gaussian noise, one-hot label)
to a common-half feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn_kernel import KernelError, OptimizerState, ParamBlock, Tensor, leaf


@dataclass(frozen=True)
class ModelDims:
    """Architecture hyper-parameters, identical on every device."""

    input_dims: tuple[int, ...] = (32, 32)   # per modality
    hidden: int = 64
    l_hat: int = 16                          # common/specific half length
    num_classes: int = 6
    z_dim: int = 16
    gen_hidden: int = 64

    @property
    def num_modalities(self) -> int:
        return len(self.input_dims)


def _he_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = np.sqrt(6.0 / in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def extractor_block_ids(m: int) -> list[str]:
    return [f"ext{m}_W1", f"ext{m}_b1", f"ext{m}_W2", f"ext{m}_b2"]


def branch_block_ids(m: int) -> list[str]:
    return extractor_block_ids(m) + [f"spec{m}_W"]

HEAD_IDS = ["head_W", "head_b"]
GEN_IDS = ["gen_W1", "gen_b1", "gen_W2", "gen_b2"]


@dataclass
class DeviceModel:
    """Trainable state of one device: owned branches, shared head, generator."""

    modalities: tuple[int, ...]
    dims: ModelDims
    blocks: dict[str, ParamBlock]
    opt_model: OptimizerState = field(default_factory=lambda: OptimizerState(lr=5e-4))
    opt_gen: OptimizerState = field(default_factory=lambda: OptimizerState(lr=1e-4))

    # The extractor's output layer starts small so the feature magnitudes,
    # and with them the quartic orthogonality penalty, stay modest until
    # the task loss has shaped the representation.
    EXT_OUT_INIT_SCALE = 0.1

    @classmethod
    def create(cls, modalities, dims: ModelDims, seed: int,
               model_lr: float = 5e-4, gen_lr: float = 1e-4) -> "DeviceModel":
        """Build a fresh model. Every device uses the same seed so all start
        from identical parameters."""
        rng = np.random.default_rng(seed)
        blocks: dict[str, ParamBlock] = {}
        for m in range(dims.num_modalities):
            d_in = dims.input_dims[m]
            blocks[f"ext{m}_W1"] = ParamBlock(f"ext{m}_W1", _he_uniform(rng, dims.hidden, d_in))
            blocks[f"ext{m}_b1"] = ParamBlock(f"ext{m}_b1", np.zeros(dims.hidden))
            blocks[f"ext{m}_W2"] = ParamBlock(
                f"ext{m}_W2",
                cls.EXT_OUT_INIT_SCALE * _he_uniform(rng, 2 * dims.l_hat, dims.hidden))
            blocks[f"ext{m}_b2"] = ParamBlock(f"ext{m}_b2", np.zeros(2 * dims.l_hat))
            blocks[f"spec{m}_W"] = ParamBlock(f"spec{m}_W", _he_uniform(rng, dims.num_classes, dims.l_hat))
        blocks["head_W"] = ParamBlock("head_W", _he_uniform(rng, dims.num_classes, dims.l_hat))
        blocks["head_b"] = ParamBlock("head_b", np.zeros(dims.num_classes))
        gin = dims.z_dim + dims.num_classes
        blocks["gen_W1"] = ParamBlock("gen_W1", _he_uniform(rng, dims.gen_hidden, gin))
        blocks["gen_b1"] = ParamBlock("gen_b1", np.zeros(dims.gen_hidden))
        blocks["gen_W2"] = ParamBlock("gen_W2", _he_uniform(rng, dims.l_hat, dims.gen_hidden))
        blocks["gen_b2"] = ParamBlock("gen_b2", np.zeros(dims.l_hat))
        # drop branches the device does not own: it never holds those blocks
        keep = set(HEAD_IDS) | set(GEN_IDS)
        for m in modalities:
            keep.update(branch_block_ids(m))
        blocks = {k: v for k, v in blocks.items() if k in keep}
        return cls(tuple(sorted(modalities)), dims, blocks,
                   opt_model=OptimizerState(lr=model_lr),
                   opt_gen=OptimizerState(lr=gen_lr))

    def leaves(self, ids) -> dict[str, Tensor]:
        return {i: leaf(self.blocks[i]) for i in ids}

    def frozen(self, ids) -> dict[str, Tensor]:
        return {i: Tensor(self.blocks[i].values) for i in ids}


# ---------------------------------------------------------------------------
# Forward operations (tape Tensors throughout; pass frozen leaves for eval)
# ---------------------------------------------------------------------------


def extract(x: np.ndarray, p: dict[str, Tensor], m: int, l_hat: int):
    """Run the modality-m extractor; split output into (common, specific)."""
    W1, b1 = p[f"ext{m}_W1"], p[f"ext{m}_b1"]
    if x.shape[1] != W1.shape[1]:
        raise KernelError(f"modality {m}: input dim {x.shape[1]} != {W1.shape[1]}")
    hid = (Tensor(x) @ W1.T + b1).relu()
    out = hid @ p[f"ext{m}_W2"].T + p[f"ext{m}_b2"]
    return out.cols(0, l_hat), out.cols(l_hat, 2 * l_hat)


def fuse_predict(features: dict[int, tuple[Tensor, Tensor]], p: dict[str, Tensor]) -> Tensor:
    """Fused logits over the active modalities: sum of common+specific
    classifier outputs plus the shared bias."""
    if not features:
        raise KernelError("fuse_predict requires at least one active modality")
    total = None
    for m, (h_common, h_specific) in sorted(features.items()):
        term = h_common @ p["head_W"].T + h_specific @ p[f"spec{m}_W"].T
        total = term if total is None else total + term
    return total + p["head_b"]


def per_modality_predict(m: int, h_common: Tensor, h_specific: Tensor,
                         p: dict[str, Tensor], m_total: int) -> Tensor:
    """Single-modality approximated logits: full bias split evenly over the
    m_total modalities entering the fused prediction."""
    return (h_common @ p["head_W"].T + h_specific @ p[f"spec{m}_W"].T
            + p["head_b"] * (1.0 / m_total))


def generator_forward(z: np.ndarray, labels: np.ndarray, p: dict[str, Tensor],
                      num_classes: int) -> Tensor:
    """Map (noise, one-hot label) batches to common-feature vectors."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    labels = np.atleast_1d(labels)
    onehot = np.zeros((labels.shape[0], num_classes))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    inp = Tensor(np.concatenate([z, onehot], axis=1))
    hid = (inp @ p["gen_W1"].T + p["gen_b1"]).relu()
    return hid @ p["gen_W2"].T + p["gen_b2"]


def mean_common_features(model: DeviceModel, x_by_modality: dict[int, np.ndarray],
                         labels: np.ndarray) -> dict[int, np.ndarray]:
    """Per-label mean of the common-half features over the device's data and
    owned modalities. Labels with no samples are absent from the map."""
    labels = np.asarray(labels)
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    params = model.frozen(model.blocks.keys())
    for m in model.modalities:
        h_common, _ = extract(x_by_modality[m], params, m, model.dims.l_hat)
        h = h_common.data
        for y in np.unique(labels):
            sel = h[labels == y]
            y = int(y)
            sums[y] = sums.get(y, 0.0) + sel.sum(axis=0)
            counts[y] = counts.get(y, 0) + sel.shape[0]
    return {y: sums[y] / counts[y] for y in sums}
