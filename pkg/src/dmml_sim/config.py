"""Experiment configuration: defaults, YAML loading, validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .data_synth import SyntheticSpec
from .energy import DeviceHardware
from .mm_model import ModelDims

MODES = ("dmml", "dmml_kd", "dmml_kd_balance")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "dmml_kd_balance"
    K: int = 12
    T: int = 80
    gamma: float = 1.0            # modality availability axis: 1, 0.5 or 0
    phi: object = "iid"           # label skew axis: "iid", 0.3 or 0.5
    seed: int = 1

    # architecture
    input_dims: tuple = (32, 32)
    hidden: int = 64
    l_hat: int = 16
    num_classes: int = 6
    z_dim: int = 16
    gen_hidden: int = 64

    # losses
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    beta: float = 1.0

    # training
    model_lr: float = 5e-4
    gen_lr: float = 1e-4
    batch: int = 32
    gen_batch: int = 32
    local_epochs: int = 5
    n_hat: int = 50               # generator iterations per round
    kd_samples: int = 1           # generator samples per (datum, modality)

    # hardware / energy
    cpu_hz: float = 1e9
    flops_per_cycle: float = 4.0
    capacitance: float = 2e-28
    tx_power_w: float = 0.1
    initial_energy_j: float = 1e4

    # wireless
    bandwidth_hz: float = 5e5
    noise_psd: float = 1e-17      # -140 dBm/Hz
    diameter_m: float = 100.0
    range_m: float = 50.0
    carrier_ghz: float = 2.6

    # synthetic data
    latent_dim: int = 16
    sigma_shared: float = 0.5
    sigma_noise: object = (1.0, 2.5)   # scalar or one value per modality
    specific_dim: int = 8
    sigma_specific: float = 3.0
    train_per_class: int = 100
    test_per_class: int = 50

    # optional overrides of computed FLOPs / payload sizes (paper-scale runs)
    flops_override: dict = field(default_factory=dict)
    payload_override: dict = field(default_factory=dict)

    out_dir: str = "runs/default"
    emit_plots: bool = False

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gamma not in (1, 1.0, 0.5, 0, 0.0):
            raise ConfigError(f"gamma must be 1, 0.5 or 0; got {self.gamma}")
        if self.phi != "iid" and self.phi not in (0.3, 0.5):
            raise ConfigError(f"phi must be 'iid', 0.3 or 0.5; got {self.phi}")
        for name in ("K", "T", "hidden", "l_hat", "num_classes", "z_dim",
                     "gen_hidden", "batch", "gen_batch", "local_epochs",
                     "latent_dim", "train_per_class", "test_per_class"):
            v = getattr(self, name)
            if not isinstance(v, int) or (v <= 0 and name != "T"):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.T < 0 or self.n_hat < 0 or self.kd_samples < 1:
            raise ConfigError("T and n_hat must be >= 0, kd_samples >= 1")
        if not isinstance(self.specific_dim, int) or self.specific_dim < 0:
            raise ConfigError(f"specific_dim must be a nonnegative integer, "
                              f"got {self.specific_dim!r}")
        for name in ("model_lr", "gen_lr", "cpu_hz", "flops_per_cycle",
                     "capacitance", "tx_power_w", "initial_energy_j",
                     "bandwidth_hz", "noise_psd", "diameter_m", "range_m",
                     "carrier_ghz", "sigma_shared", "sigma_specific"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0):
                raise ConfigError(f"{name} must be a nonnegative number, got {v!r}")
        sn = self.sigma_noise
        sn_vals = sn if isinstance(sn, (tuple, list)) else (sn,)
        if (isinstance(sn, (tuple, list)) and len(sn) != len(self.input_dims)) or \
                not all(isinstance(v, (int, float)) and v >= 0 for v in sn_vals):
            raise ConfigError(f"sigma_noise must be a nonnegative number or one "
                              f"per modality, got {sn!r}")
        for name in ("alpha1", "alpha2", "alpha3", "alpha4", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        allowed_flops = {"modality", "common", "bias", "gen_fp", "gen"}
        if not set(self.flops_override) <= allowed_flops:
            raise ConfigError(f"unknown flops_override keys: "
                              f"{set(self.flops_override) - allowed_flops}")
        allowed_payload = {"modality", "common"}
        if not set(self.payload_override) <= allowed_payload:
            raise ConfigError(f"unknown payload_override keys: "
                              f"{set(self.payload_override) - allowed_payload}")
        return self

    # -- derived views ------------------------------------------------------

    def model_dims(self) -> ModelDims:
        return ModelDims(tuple(self.input_dims), self.hidden, self.l_hat,
                         self.num_classes, self.z_dim, self.gen_hidden)

    def hardware(self) -> DeviceHardware:
        return DeviceHardware(self.cpu_hz, self.flops_per_cycle, self.capacitance,
                              self.tx_power_w, self.initial_energy_j)

    def synthetic_spec(self) -> SyntheticSpec:
        sn = self.sigma_noise
        if isinstance(sn, (tuple, list)):
            sn = tuple(float(v) for v in sn)
        return SyntheticSpec(self.num_classes, self.latent_dim, tuple(self.input_dims),
                             self.sigma_shared, sn,
                             self.specific_dim, self.sigma_specific,
                             self.train_per_class, self.test_per_class,
                             seed=self.seed)


def load_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Load a YAML config. An empty or absent file yields all defaults;
    unknown keys are rejected."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "input_dims" in data:
        data["input_dims"] = tuple(data["input_dims"])
    cfg = ExperimentConfig(**data)
    cfg.validate()
    return cfg
