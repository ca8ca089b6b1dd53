"""FLOPs accounting, per-round energy, and the remaining-energy ledger.

Computation energy follows the capacitance model (eps * f^2 / e joules per
FLOP-cycle bundle); communication energy is payload bits over the Shannon
rate times transmit power. The feasible per-round iteration count is the
largest integer whose full-schedule energy fits the remaining budget.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .mm_model import ModelDims, branch_block_ids, GEN_IDS, HEAD_IDS

BITS_PER_PARAM = 64


class EnergyError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeviceHardware:
    cpu_hz: float = 1e9            # f_k
    flops_per_cycle: float = 4.0   # e_k
    capacitance: float = 2e-28     # eps_k
    tx_power_w: float = 0.1        # p_k
    initial_energy_j: float = 1e9

    @property
    def joules_per_flop(self) -> float:
        return self.capacitance * self.cpu_hz ** 2 / self.flops_per_cycle


@dataclass(frozen=True)
class FlopsProfile:
    """Per-iteration FLOPs of each model part, already scaled by batch size."""

    modality: tuple[float, ...]    # extractor + specific classifier, FP+BP
    common: float                  # common classifier, FP+BP
    bias: float                    # bias add, FP+BP
    gen_fp: float                  # generator forward only
    gen: float                     # generator FP+BP

    def without_generator(self) -> "FlopsProfile":
        return replace(self, gen_fp=0.0, gen=0.0)


def _dense_fp(n_in: int, n_out: int) -> float:
    return 2.0 * n_in * n_out


def flops_profile(dims: ModelDims, batch: int, gen_batch: int) -> FlopsProfile:
    """Desk-scale FLOPs profile: FP = 2*in*out per sample per dense layer,
    FP+BP counted as 3x FP, linear in batch size."""
    per_mod = []
    for d in dims.input_dims:
        fp = (_dense_fp(d, dims.hidden) + _dense_fp(dims.hidden, 2 * dims.l_hat)
              + _dense_fp(dims.l_hat, dims.num_classes))
        per_mod.append(3.0 * batch * fp)
    common = 3.0 * batch * _dense_fp(dims.l_hat, dims.num_classes)
    bias = 3.0 * batch * dims.num_classes
    gen_fp = gen_batch * (_dense_fp(dims.z_dim + dims.num_classes, dims.gen_hidden)
                          + _dense_fp(dims.gen_hidden, dims.l_hat))
    return FlopsProfile(tuple(per_mod), common, bias, gen_fp, 3.0 * gen_fp)


def _param_count(dims: ModelDims, ids) -> int:
    n = 0
    for i in ids:
        if i.startswith("ext"):
            m = int(i[3])
            d, H, L2 = dims.input_dims[m], dims.hidden, 2 * dims.l_hat
            n += {"W1": H * d, "b1": H, "W2": L2 * H, "b2": L2}[i.split("_")[1]]
        elif i.startswith("spec"):
            n += dims.num_classes * dims.l_hat
        elif i == "head_W":
            n += dims.num_classes * dims.l_hat
        elif i == "head_b":
            n += dims.num_classes
        elif i.startswith("gen"):
            gin, GH, L = dims.z_dim + dims.num_classes, dims.gen_hidden, dims.l_hat
            n += {"W1": GH * gin, "b1": GH, "W2": L * GH, "b2": L}[i.split("_")[1]]
    return n


def modality_payload_bits(dims: ModelDims, m: int) -> float:
    return BITS_PER_PARAM * _param_count(dims, branch_block_ids(m))


def common_payload_bits(dims: ModelDims, with_generator: bool) -> float:
    ids = list(HEAD_IDS) + (list(GEN_IDS) if with_generator else [])
    return BITS_PER_PARAM * _param_count(dims, ids)


def comm_energy(hw: DeviceHardware, payload_mod: dict[int, float], payload_common: float,
                mod_rates: dict[int, list[float]], common_rates: list[float]) -> float:
    total = 0.0
    for m, rates in mod_rates.items():
        for r in rates:
            if r <= 0.0:
                raise EnergyError("unusable link (zero rate)")
            total += hw.tx_power_w * payload_mod[m] / r
    for r in common_rates:
        if r <= 0.0:
            raise EnergyError("unusable link (zero rate)")
        total += hw.tx_power_w * payload_common / r
    return total


def round_energy(hw: DeviceHardware, profile: FlopsProfile, schedule: dict[int, int],
                 n_max: int, n_hat: int, payload_mod: dict[int, float],
                 payload_common: float, mod_rates: dict[int, list[float]],
                 common_rates: list[float]) -> tuple[float, float]:
    """(computation, communication) energy of one round for one device."""
    coef = hw.joules_per_flop
    e_cmp = coef * (sum(n * (profile.modality[m] + profile.common)
                        for m, n in schedule.items())
                    + n_max * (profile.bias + profile.gen_fp)
                    + n_hat * profile.gen)
    e_com = comm_energy(hw, payload_mod, payload_common, mod_rates, common_rates)
    return e_cmp, e_com


def max_iterations(hw: DeviceHardware, profile: FlopsProfile, owned: tuple[int, ...],
                   n_hat: int, e_com: float, e_remaining: float, n_k: int) -> int | None:
    """Largest N in [0, n_k] such that running every modality for N
    iterations fits the remaining energy; None when even the fixed costs
    (generator training + transmission) do not fit."""
    coef = hw.joules_per_flop
    per_iter = coef * (sum(profile.modality[m] + profile.common for m in owned)
                       + profile.bias + profile.gen_fp)
    fixed = coef * n_hat * profile.gen + e_com
    if fixed + n_k * per_iter <= e_remaining:
        return n_k
    if fixed > e_remaining:
        return None
    return min(n_k, int((e_remaining - fixed) / per_iter))


class EnergyLedger:
    """Per-device remaining energy with nonnegativity enforced."""

    def __init__(self, K: int, initial_energy_j: float):
        self.remaining = [float(initial_energy_j) for _ in range(K)]

    def commit(self, device: int, e_round: float):
        if e_round < 0.0:
            raise EnergyError("negative round energy")
        if e_round > self.remaining[device] + 1e-9:
            raise EnergyError(
                f"device {device} overspent: {e_round} > {self.remaining[device]}")
        self.remaining[device] = max(0.0, self.remaining[device] - e_round)
