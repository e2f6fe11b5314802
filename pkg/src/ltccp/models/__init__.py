"""Citation-count predictors sharing one output contract.

Each model's ``predict(examples, horizon)`` returns an ``(n, horizon)``
array of cumulative counts that never decrease across the horizon and never
fall below the last observed count.
"""
from .base import Prediction, enforce_monotone
from .cart import TreeBaseline, predict_cart, train_cart
from .linear import LinearBaseline, predict_lr, train_lr
from .ltccp import LTCCPModel, TrainConfig, TrainLog, predict, train_ltccp

MODEL_NAMES = ("LR", "CART", "LT-CCP")

__all__ = [
    "LTCCPModel", "LinearBaseline", "MODEL_NAMES", "Prediction", "TrainConfig", "TrainLog",
    "TreeBaseline", "enforce_monotone", "predict", "predict_cart", "predict_lr", "train_cart",
    "train_lr", "train_ltccp",
]
