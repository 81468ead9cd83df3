"""Actor-critic packing network, its autodiff core, optimizer and checkpoints."""

from packbench.policy.checkpoint import load_params, save_params
from packbench.policy.network import ActMode, NeuralPolicy, ObservationBatch, PolicyOutput, PolicyParams, act, forward


__all__ = [
    "ActMode",
    "NeuralPolicy",
    "ObservationBatch",
    "PolicyOutput",
    "PolicyParams",
    "act",
    "forward",
    "load_params",
    "save_params",
]
