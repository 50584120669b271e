"""Generative prior: layers, networks, WGAN training and weight files."""
from .network import NetworkSpec, WeightStore, critic_spec, generator_spec, init_weights
from .train import TrainerConfig, TrainResult, wgan_train
from .weights import load_weights, save_weights

__all__ = [
    "NetworkSpec", "WeightStore", "critic_spec", "generator_spec", "init_weights",
    "TrainerConfig", "TrainResult", "wgan_train", "load_weights", "save_weights",
]
