"""TeNet: predict a day's total from the day's head segment.

A temporal embedding layer re-weights each value with its neighbours before a
small convolutional regressor, so shifted or swapped daily patterns still line
up with the filters that detect them.
"""

from tenet.model import TeNetConfig, TeNetModel, grad_check, load_model, param_count, save_model, sgd_train

__all__ = ["TeNetConfig", "TeNetModel", "grad_check", "load_model", "param_count", "save_model", "sgd_train"]
__version__ = "0.1.0"
