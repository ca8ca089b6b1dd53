import numpy as np
import pytest

from dmml_sim.energy import (BITS_PER_PARAM, DeviceHardware, EnergyError,
                             EnergyLedger, FlopsProfile, comm_energy,
                             common_payload_bits, flops_profile,
                             max_iterations, modality_payload_bits,
                             round_energy)
from dmml_sim.mm_model import ModelDims

DIMS = ModelDims(input_dims=(8, 6), hidden=10, l_hat=4, num_classes=3,
                 z_dim=5, gen_hidden=7)


class TestHardware:
    def test_per_flop_energy_at_reference_constants(self):
        hw = DeviceHardware()
        # eps * f^2 / e = 2e-28 * 1e18 / 4
        assert hw.joules_per_flop == pytest.approx(5e-11, rel=1e-15)

    def test_scaling_with_frequency(self):
        hw = DeviceHardware(cpu_hz=2e9)
        assert hw.joules_per_flop == pytest.approx(2e-10, rel=1e-12)


class TestFlopsProfile:
    def test_modality_branch_hand_count(self):
        p = flops_profile(DIMS, batch=1, gen_batch=1)
        # two dense layers (8->10, 10->8) plus specific classifier (4->3), 3x for FP+BP
        fp = 2 * (8 * 10 + 10 * 8 + 4 * 3)
        assert p.modality[0] == pytest.approx(3.0 * fp)

    def test_common_and_bias(self):
        p = flops_profile(DIMS, batch=2, gen_batch=1)
        assert p.common == pytest.approx(3.0 * 2 * 2 * 4 * 3)
        assert p.bias == pytest.approx(3.0 * 2 * 3)

    def test_generator_counts(self):
        p = flops_profile(DIMS, batch=1, gen_batch=4)
        fp = 4 * 2 * ((5 + 3) * 7 + 7 * 4)
        assert p.gen_fp == pytest.approx(fp)
        assert p.gen == pytest.approx(3.0 * fp)

    def test_batch_linearity(self):
        a = flops_profile(DIMS, batch=1, gen_batch=1)
        b = flops_profile(DIMS, batch=5, gen_batch=1)
        assert b.modality[1] == pytest.approx(5.0 * a.modality[1])

    def test_without_generator(self):
        p = flops_profile(DIMS, batch=1, gen_batch=1).without_generator()
        assert p.gen == 0.0 and p.gen_fp == 0.0
        assert p.common > 0.0


class TestPayloads:
    def test_modality_payload_counts_branch_params(self):
        # ext W1 (10x8) + b1 (10) + W2 (8x10) + b2 (8) + spec (3x4)
        expected = BITS_PER_PARAM * (80 + 10 + 80 + 8 + 12)
        assert modality_payload_bits(DIMS, 0) == expected

    def test_common_payload_with_and_without_generator(self):
        head = BITS_PER_PARAM * (3 * 4 + 3)
        gen = BITS_PER_PARAM * (7 * 8 + 7 + 4 * 7 + 4)
        assert common_payload_bits(DIMS, with_generator=False) == head
        assert common_payload_bits(DIMS, with_generator=True) == head + gen


class TestCommEnergy:
    HW = DeviceHardware(tx_power_w=0.5)

    def test_hand_value(self):
        # one modality link at rate 100 with 200 bits plus one common link at
        # rate 50 with 100 bits: 0.5*(200/100) + 0.5*(100/50) = 2 J
        got = comm_energy(self.HW, {0: 200.0}, 100.0, {0: [100.0]}, [50.0])
        assert got == pytest.approx(2.0)

    def test_zero_rate_raises(self):
        with pytest.raises(EnergyError):
            comm_energy(self.HW, {0: 1.0}, 1.0, {0: [0.0]}, [])
        with pytest.raises(EnergyError):
            comm_energy(self.HW, {}, 1.0, {}, [0.0])

    def test_no_links_free(self):
        assert comm_energy(self.HW, {}, 1.0, {}, []) == 0.0


class TestRoundEnergy:
    def test_components_hand_value(self):
        hw = DeviceHardware()  # 5e-11 J per FLOP
        profile = FlopsProfile(modality=(100.0, 60.0), common=40.0, bias=10.0,
                               gen_fp=20.0, gen=60.0)
        e_cmp, e_com = round_energy(hw, profile, {0: 3, 1: 2}, n_max=3, n_hat=4,
                                    payload_mod={0: 100.0}, payload_common=50.0,
                                    mod_rates={0: [10.0]}, common_rates=[10.0])
        flops = 3 * (100 + 40) + 2 * (60 + 40) + 3 * (10 + 20) + 4 * 60
        assert e_cmp == pytest.approx(5e-11 * flops)
        assert e_com == pytest.approx(0.1 * (100.0 / 10.0 + 50.0 / 10.0))


class TestMaxIterations:
    HW = DeviceHardware(capacitance=4e-28, cpu_hz=1e9, flops_per_cycle=4)  # 1e-10 J/FLOP

    def _profile(self, per_iter_flops, gen_flops):
        # single modality carrying all per-iteration cost
        return FlopsProfile(modality=(per_iter_flops,), common=0.0, bias=0.0,
                            gen_fp=0.0, gen=gen_flops)

    def test_budget_fits_everything(self):
        p = self._profile(1e10, 0.0)  # 1 J per iteration
        assert max_iterations(self.HW, p, (0,), 0, 0.0, 100.0, 5) == 5

    def test_partial_budget(self):
        # 2 J per iteration, 1 J fixed comm, 7 J remaining -> floor(6/2) = 3
        p = self._profile(2e10, 0.0)
        assert max_iterations(self.HW, p, (0,), 0, 1.0, 7.0, 10) == 3

    def test_generator_cost_is_fixed(self):
        # 1 J/iter, generator 10 iters at 0.2 J, comm 1 J, budget 6 J -> 3 iters
        p = self._profile(1e10, 2e9)
        assert max_iterations(self.HW, p, (0,), 10, 1.0, 6.0, 10) == 3

    def test_exhausted(self):
        p = self._profile(1e10, 0.0)
        assert max_iterations(self.HW, p, (0,), 0, 5.0, 4.0, 10) is None

    def test_zero_iterations_still_feasible(self):
        # fixed costs fit but not a single iteration
        p = self._profile(1e11, 0.0)
        assert max_iterations(self.HW, p, (0,), 0, 1.0, 5.0, 10) == 0

    def test_monotone_in_budget(self):
        p = self._profile(3e10, 1e9)
        values = [max_iterations(self.HW, p, (0,), 5, 0.5, b, 8)
                  for b in np.linspace(0.1, 40.0, 60)]
        cleaned = [-1 if v is None else v for v in values]
        assert all(a <= b for a, b in zip(cleaned, cleaned[1:]))

    def test_two_modalities_share_budget(self):
        p = FlopsProfile(modality=(1e10, 1e10), common=0.0, bias=0.0,
                         gen_fp=0.0, gen=0.0)
        # 2 J per iteration over both branches, 5 J -> 2
        assert max_iterations(self.HW, p, (0, 1), 0, 0.0, 5.0, 9) == 2


class TestLedger:
    def test_commit_sequence(self):
        led = EnergyLedger(2, 10.0)
        led.commit(0, 4.0)
        led.commit(0, 6.0)
        assert led.remaining[0] == 0.0
        assert led.remaining[1] == 10.0

    def test_overspend_raises(self):
        led = EnergyLedger(1, 1.0)
        with pytest.raises(EnergyError):
            led.commit(0, 2.0)

    def test_negative_raises(self):
        with pytest.raises(EnergyError):
            EnergyLedger(1, 1.0).commit(0, -0.1)
