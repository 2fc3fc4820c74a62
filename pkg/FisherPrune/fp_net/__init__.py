from .io import dump_model, load_model, save_model, loads_model
from .graph import INPUT_ID, NetGraph, LayerNode, ActivationCache
from .train import Trainer, TrainResult, train, evaluate, deterministic, backward_sgd_step
from .archs import vgg16, desk_cnn, googlenet, GraphBuilder, desk_inception, build_arch

__all__ = [
    "INPUT_ID",
    "NetGraph",
    "LayerNode",
    "ActivationCache",
    "dump_model",
    "load_model",
    "save_model",
    "loads_model",
    "Trainer",
    "TrainResult",
    "train",
    "evaluate",
    "deterministic",
    "backward_sgd_step",
    "vgg16",
    "desk_cnn",
    "googlenet",
    "GraphBuilder",
    "desk_inception",
    "build_arch",
]
