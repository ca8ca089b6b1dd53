"""Deterministic simulator of decentralized multi-modal learning over a
wireless device network."""

from .config import ExperimentConfig, load_config
from .orchestrator import Simulation

__all__ = ["ExperimentConfig", "load_config", "Simulation"]
