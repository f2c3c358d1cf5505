from .io import ModelFormatError, load_model, save_model
from .model import (ArchConfig, ContractError, NetOutputs, NetParams, backward, forward,
                    init_params)

__all__ = [
    "ArchConfig", "ContractError", "ModelFormatError", "NetOutputs", "NetParams",
    "backward", "forward", "init_params", "load_model", "save_model",
]
