from .kernels import BACKEND
from .model import CnnConfig, CnnModel, build_model, load_model, save_model
from .train import TrainConfig, TrainHistory, train

__all__ = ["BACKEND", "CnnConfig", "CnnModel", "TrainConfig", "TrainHistory", "build_model",
           "load_model", "save_model", "train"]
