"""End-to-end round execution.

Each round: masked local updates, generator training (kd modes), parameter
and generator exchange/aggregation, parameter-variation measurement, energy
accounting, evaluation, and scheduling of the next round (full budget, or
the cluster-head balance step in balance mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import balance, energy, losses, wireless
from .config import ExperimentConfig
from .data_synth import build_partitions, generate
from .mm_model import (DeviceModel, GEN_IDS, HEAD_IDS, branch_block_ids,
                       extract, extractor_block_ids, fuse_predict,
                       mean_common_features, per_modality_predict)
from .nn_kernel import Tensor, collect_grads

# RNG stream tags (tag 3 is the channel stream inside wireless)
_MASK, _BATCH, _KD, _GEN = 4, 5, 6, 7


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass
class RoundPlan:
    """Schedule for one round, produced at the end of the previous one."""

    n_max: dict[int, int]
    schedule: dict[int, dict[int, int]]      # device -> modality -> iterations
    gamma: dict[int, float] = field(default_factory=dict)
    infeasible: set = field(default_factory=set)
    exhausted: set = field(default_factory=set)


@dataclass
class RoundMetricsRecord:
    round: int
    device: int
    mode: str
    acc: float
    acc_m: dict[int, float]
    loss_task: float
    loss_sim: float
    loss_cls: float
    loss_dif: float
    loss_kd: float
    loss_gen: float
    gamma: dict[int, float]
    phi_mean: dict[int, float]
    n_m: dict[int, int]
    n_max: int
    e_cmp: float
    e_com: float
    e_remaining: float
    infeasible: bool


class Simulation:
    """Deterministic simulator state for one configuration."""

    def __init__(self, config: ExperimentConfig):
        config.validate()
        self.cfg = config
        self.mode = config.mode
        self.use_generator = self.mode in ("dmml_kd", "dmml_kd_balance")
        self.dims = config.model_dims()
        self.hw = config.hardware()
        self.M = self.dims.num_modalities

        self.dataset = generate(config.synthetic_spec())
        self.partitions = build_partitions(
            self.dataset, config.K, float(config.gamma), config.phi, config.seed + 1)
        mod_sets = [p.modalities for p in self.partitions]
        self.topology = wireless.build_topology(
            mod_sets, config.diameter_m, config.range_m, config.seed + 2)

        self.models = [
            DeviceModel.create(p.modalities, self.dims, config.seed,
                               model_lr=config.model_lr, gen_lr=config.gen_lr)
            for p in self.partitions
        ]
        self.local_x = []
        self.local_y = []
        for p in self.partitions:
            ids = p.sample_ids
            self.local_x.append({m: self.dataset.x[m][ids] for m in p.modalities})
            self.local_y.append(self.dataset.y[ids])
        self.n_k = [max(1, math.ceil(config.local_epochs * len(p.sample_ids) / config.batch))
                    for p in self.partitions]

        profile = energy.flops_profile(self.dims, config.batch, config.gen_batch)
        if config.flops_override:
            profile = replace(profile, **{
                k: tuple(v) if k == "modality" else float(v)
                for k, v in config.flops_override.items()})
        self.profile = profile if self.use_generator else profile.without_generator()
        self.n_hat = config.n_hat if self.use_generator else 0
        pm = {m: energy.modality_payload_bits(self.dims, m) for m in range(self.M)}
        pc = energy.common_payload_bits(self.dims, with_generator=self.use_generator)
        if "modality" in config.payload_override:
            pm = {m: float(v) for m, v in enumerate(config.payload_override["modality"])}
        if "common" in config.payload_override:
            pc = float(config.payload_override["common"])
        self.payload_mod, self.payload_common = pm, pc

        self.ledger = energy.EnergyLedger(config.K, config.initial_energy_j)
        self.active = [True] * config.K
        self._rebuild_weights()
        self.plan = self._initial_plan()
        self.iteration_hook = None   # optional: f(device, round, n, active_mods, model)

    # ------------------------------------------------------------------
    # topology views over the currently active devices
    # ------------------------------------------------------------------

    def _rebuild_weights(self):
        adj = self.topology.adjacency.copy()
        for k, a in enumerate(self.active):
            if not a:
                adj[k, :] = False
                adj[:, k] = False
        self.cur_adj = adj
        act = [k for k in range(self.cfg.K) if self.active[k]]
        self.common_weights = {}      # (k, k2) -> xi
        sub = wireless.mh_weights(adj[np.ix_(act, act)])
        for i, k in enumerate(act):
            for j, k2 in enumerate(act):
                if sub[i, j] != 0.0:
                    self.common_weights[(k, k2)] = sub[i, j]
        self.mod_owners = {}
        self.mod_weights = {}
        for m in range(self.M):
            own = [k for k in act if m in self.partitions[k].modalities]
            self.mod_owners[m] = own
            subm = wireless.mh_weights(adj[np.ix_(own, own)])
            w = {}
            for i, k in enumerate(own):
                for j, k2 in enumerate(own):
                    if subm[i, j] != 0.0:
                        w[(k, k2)] = subm[i, j]
            self.mod_weights[m] = w

    def _active_devices(self):
        return [k for k in range(self.cfg.K) if self.active[k]]

    def _common_neighbors(self, k):
        return [k2 for k2 in np.flatnonzero(self.cur_adj[k])]

    def _mod_neighbors(self, k, m):
        owners = set(self.mod_owners[m])
        return [k2 for k2 in self._common_neighbors(k) if k2 in owners]

    # ------------------------------------------------------------------
    # scheduling
    # ------------------------------------------------------------------

    def _round_rates(self, round_index):
        gains = wireless.sample_round_gains(
            self.topology, self.cfg.seed, round_index, self.cfg.carrier_ghz)
        rates = {}
        for (k, k2), g in gains.items():
            rates[(k, k2)] = rates[(k2, k)] = wireless.link_rate(
                g, self.cfg.tx_power_w, self.cfg.bandwidth_hz, self.cfg.noise_psd)
        return rates

    def _comm_energy(self, k, rates):
        mod_rates = {m: [rates[(k, k2)] for k2 in self._mod_neighbors(k, m)]
                     for m in self.partitions[k].modalities}
        common_rates = [rates[(k, k2)] for k2 in self._common_neighbors(k)]
        return energy.comm_energy(self.hw, self.payload_mod, self.payload_common,
                                  mod_rates, common_rates)

    def _feasible_budgets(self, round_index):
        """n_max per active device for the given round, marking exhaustion."""
        rates = self._round_rates(round_index)
        n_max, newly_exhausted = {}, set()
        for k in self._active_devices():
            e_com = self._comm_energy(k, rates)
            n = energy.max_iterations(self.hw, self.profile,
                                      self.partitions[k].modalities, self.n_hat,
                                      e_com, self.ledger.remaining[k], self.n_k[k])
            if n is None:
                newly_exhausted.add(k)
            else:
                n_max[k] = n
        return n_max, newly_exhausted

    def _initial_plan(self) -> RoundPlan:
        n_max, exhausted = self._feasible_budgets(1)
        if exhausted:
            for k in exhausted:
                self.active[k] = False
            self._rebuild_weights()
            n_max, more = self._feasible_budgets(1)
            exhausted |= more
        schedule = {k: {m: n_max[k] for m in self.partitions[k].modalities}
                    for k in n_max}
        return RoundPlan(n_max, schedule, exhausted=exhausted)

    def _phi_and_coefficients(self, locals_ext, prev_agg_ext):
        """phi table from this round's exchange, plus the per-device
        coefficient terms each device would report to the cluster head."""
        eps = balance.DEFAULT_EPSILON
        phi = {m: {} for m in range(self.M)}
        terms = {k: {} for k in self._active_devices()}
        for m in range(self.M):
            for k in self.mod_owners[m]:
                agg_new = [self.models[k].blocks[i].values for i in extractor_block_ids(m)]
                row = {}
                for k2 in self._mod_neighbors(k, m) + [k]:
                    p = balance.param_variation(locals_ext[k2][m], prev_agg_ext[k][m], agg_new)
                    phi[m][(k, k2)] = p
                    row[k2] = self.mod_weights[m].get((k, k2), 0.0) / (p + eps)
                terms[k][m] = row
        return phi, terms

    def _plan_next_round(self, round_index, phi, terms) -> RoundPlan:
        """Build the plan for round_index (the upcoming round)."""
        n_max, newly_exhausted = self._feasible_budgets(round_index)
        if newly_exhausted:
            for k in newly_exhausted:
                self.active[k] = False
            self._rebuild_weights()
            n_max, more = self._feasible_budgets(round_index)
            newly_exhausted |= more
        act = self._active_devices()
        owners = {m: [k for k in self.mod_owners[m]] for m in range(self.M)}
        multi = {m: [k for k in owners[m] if len(self.partitions[k].modalities) > 1]
                 for m in range(self.M)}

        if self.mode == "dmml_kd_balance" and act:
            reports = [balance.ClusterReport(k, n_max[k],
                                             {m: terms[k].get(m, {}) for m in terms[k]})
                       for k in act]
            sched_by_mod, m_hat, gamma, infeasible = balance.cluster_head_round(
                reports, owners, multi, act)
            schedule = {k: {m: sched_by_mod[m][k] for m in self.partitions[k].modalities}
                        for k in act}
            return RoundPlan(n_max, schedule, gamma, infeasible, set(newly_exhausted))

        schedule = {k: {m: n_max[k] for m in self.partitions[k].modalities} for k in act}
        gamma = {}
        if phi is not None:
            coeff = {m: {k2: sum(terms[k].get(m, {}).get(k2, 0.0) for k in owners[m])
                         for k2 in owners[m]} for m in range(self.M)}
            for m in range(self.M):
                gamma[m] = balance.balance_metric({k: n_max[k] for k in owners[m]}, coeff[m])
        return RoundPlan(n_max, schedule, gamma, set(), set(newly_exhausted))

    # ------------------------------------------------------------------
    # local training
    # ------------------------------------------------------------------

    def _batch_order(self, k, round_index):
        rng = _rng(self.cfg.seed, _BATCH, k, round_index)
        D = self.local_y[k].shape[0]
        need = self.n_k[k] * self.cfg.batch
        order = []
        while len(order) < need:
            order.extend(rng.permutation(D).tolist())
        return np.asarray(order[:need])

    def _local_update(self, k, round_index, masks, kd_teacher):
        """Run the masked local iterations of device k; returns mean loss
        components over the executed iterations."""
        cfg, model = self.cfg, self.models[k]
        owned = self.partitions[k].modalities
        order = self._batch_order(k, round_index)
        kd_rng = _rng(cfg.seed, _KD, k, round_index)
        sums = {"task": 0.0, "sim": 0.0, "cls": 0.0, "dif": 0.0, "kd": 0.0}
        executed = 0
        for n in range(self.n_k[k]):
            active = [m for m in owned if masks[m][n]]
            if self.iteration_hook is not None:
                self.iteration_hook(k, round_index, n, active, model)
            if not active:
                continue
            ids = order[n * cfg.batch:(n + 1) * cfg.batch]
            y = self.local_y[k][ids]
            param_ids = list(HEAD_IDS)
            for m in active:
                param_ids += branch_block_ids(m)
            leaves = model.leaves(param_ids)
            features = {m: extract(self.local_x[k][m][ids], leaves, m, self.dims.l_hat)
                        for m in active}
            loss_task = losses.f_task(fuse_predict(features, leaves), y)
            total = loss_task
            sums["task"] += float(loss_task.data)
            if self.mode != "dmml":
                w = losses.LossWeights(cfg.alpha1, cfg.alpha2, cfg.alpha3,
                                       cfg.alpha4, cfg.beta)
                h_common = {m: f[0] for m, f in features.items()}
                l_sim = losses.f_sim(h_common, leaves["head_W"])
                l_cls = losses.f_cls(h_common, leaves["head_W"], y)
                l_dif = losses.f_dif(features)
                total = total + w.alpha1 * l_sim + w.alpha2 * l_cls + w.alpha3 * l_dif
                sums["sim"] += float(l_sim.data)
                sums["cls"] += float(l_cls.data)
                sums["dif"] += float(l_dif.data)
                if kd_teacher is not None:
                    l_kd = None
                    for _ in range(cfg.kd_samples):
                        z = {m: kd_rng.standard_normal((len(ids), self.dims.z_dim))
                             for m in active}
                        term = losses.f_kd(h_common, y, leaves["head_W"],
                                           kd_teacher, self.dims.num_classes, z)
                        l_kd = term if l_kd is None else l_kd + term
                    l_kd = l_kd / cfg.kd_samples
                    total = total + w.alpha4 * l_kd
                    sums["kd"] += float(l_kd.data)
            total.backward()
            model.opt_model.step(model.blocks, collect_grads(leaves))
            executed += 1
        d = max(1, executed)
        return {key: val / d for key, val in sums.items()}

    def _train_generator(self, k, round_index):
        cfg, model = self.cfg, self.models[k]
        h_bar = mean_common_features(model, self.local_x[k], self.local_y[k])
        label_set = np.array(sorted(h_bar))
        if label_set.size == 0:
            return 0.0
        rng = _rng(cfg.seed, _GEN, k, round_index)
        head_frozen = model.frozen(["head_W"])["head_W"]
        total = 0.0
        for _ in range(cfg.n_hat):
            labels = rng.choice(label_set, size=cfg.gen_batch)
            z = rng.standard_normal((cfg.gen_batch, self.dims.z_dim))
            leaves = model.leaves(GEN_IDS)
            loss = losses.f_gen(leaves, head_frozen, h_bar, labels, z,
                                self.dims.num_classes, cfg.beta)
            loss.backward()
            model.opt_gen.step(model.blocks, collect_grads(leaves))
            total += float(loss.data)
        return total / max(1, cfg.n_hat)

    # ------------------------------------------------------------------
    # aggregation and evaluation
    # ------------------------------------------------------------------

    def _aggregate(self):
        """Simultaneous gossip aggregation of all exchanged blocks."""
        act = self._active_devices()
        locals_ = {k: {name: b.values.copy() for name, b in self.models[k].blocks.items()}
                   for k in act}
        common_ids = list(HEAD_IDS) + (list(GEN_IDS) if self.use_generator else [])
        for k in act:
            model = self.models[k]
            for name in common_ids:
                agg = sum(xi * locals_[k2][name]
                          for (kk, k2), xi in self.common_weights.items() if kk == k)
                model.blocks[name].values = agg
            for m in self.partitions[k].modalities:
                for name in branch_block_ids(m):
                    agg = sum(xi * locals_[k2][name]
                              for (kk, k2), xi in self.mod_weights[m].items() if kk == k)
                    model.blocks[name].values = agg
        return locals_

    def evaluate(self, k):
        """(overall accuracy, per-owned-modality accuracy) on the test set."""
        model = self.models[k]
        owned = self.partitions[k].modalities
        params = model.frozen(model.blocks.keys())
        y = self.dataset.y_test
        features = {m: extract(self.dataset.x_test[m], params, m, self.dims.l_hat)
                    for m in owned}
        logits = fuse_predict(features, params).data
        acc = float(np.mean(np.argmax(logits, axis=1) == y))
        acc_m = {}
        for m in owned:
            lm = per_modality_predict(m, *features[m], params, len(owned)).data
            acc_m[m] = float(np.mean(np.argmax(lm, axis=1) == y))
        return acc, acc_m

    # ------------------------------------------------------------------
    # round driver
    # ------------------------------------------------------------------

    def run_round(self, t: int) -> list[RoundMetricsRecord]:
        cfg = self.cfg
        plan = self.plan
        act = self._active_devices()
        rates = self._round_rates(t)
        kd_on = self.use_generator and t >= 2

        masks = {}
        for k in act:
            masks[k] = {m: balance.build_masks(plan.schedule[k][m], self.n_k[k],
                                               _rng(cfg.seed, _MASK, t, k, m))
                        for m in self.partitions[k].modalities}

        prev_agg_ext = {k: {m: [self.models[k].blocks[i].values.copy()
                                for i in extractor_block_ids(m)]
                            for m in self.partitions[k].modalities}
                        for k in act}

        loss_stats, gen_stats = {}, {}
        for k in act:
            teacher = self.models[k].frozen(GEN_IDS) if kd_on else None
            loss_stats[k] = self._local_update(k, t, masks[k], teacher)
            gen_stats[k] = self._train_generator(k, t) if self.use_generator else 0.0

        locals_ = self._aggregate()
        locals_ext = {k: {m: [locals_[k][i] for i in extractor_block_ids(m)]
                          for m in self.partitions[k].modalities}
                      for k in act}
        phi, terms = self._phi_and_coefficients(locals_ext, prev_agg_ext)

        records = []
        e_round = {}
        for k in act:
            mod_rates = {m: [rates[(k, k2)] for k2 in self._mod_neighbors(k, m)]
                         for m in self.partitions[k].modalities}
            common_rates = [rates[(k, k2)] for k2 in self._common_neighbors(k)]
            e_cmp, e_com = energy.round_energy(
                self.hw, self.profile, plan.schedule[k], plan.n_max[k], self.n_hat,
                self.payload_mod, self.payload_common, mod_rates, common_rates)
            self.ledger.commit(k, e_cmp + e_com)
            e_round[k] = (e_cmp, e_com)

        next_plan = self._plan_next_round(t + 1, phi, terms)

        for k in act:
            acc, acc_m = self.evaluate(k)
            phi_mean = {}
            for m in range(self.M):
                vals = [v for (kk, _), v in phi[m].items() if kk == k]
                phi_mean[m] = float(np.mean(vals)) if vals else 0.0
            e_cmp, e_com = e_round[k]
            records.append(RoundMetricsRecord(
                round=t, device=k, mode=self.mode, acc=acc, acc_m=acc_m,
                loss_task=loss_stats[k]["task"], loss_sim=loss_stats[k]["sim"],
                loss_cls=loss_stats[k]["cls"], loss_dif=loss_stats[k]["dif"],
                loss_kd=loss_stats[k]["kd"], loss_gen=gen_stats[k],
                gamma=dict(next_plan.gamma), phi_mean=phi_mean,
                n_m=dict(plan.schedule[k]), n_max=plan.n_max[k],
                e_cmp=e_cmp, e_com=e_com, e_remaining=self.ledger.remaining[k],
                infeasible=bool(next_plan.infeasible)))

        self.plan = next_plan
        return records

    def run(self) -> list[RoundMetricsRecord]:
        out = []
        for t in range(1, self.cfg.T + 1):
            out.extend(self.run_round(t))
        return out
