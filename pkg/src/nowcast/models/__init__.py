"""Candidate model families behind one fit/predict contract."""
from .base import (
    dump_model,
    dumps_model,
    fit_model,
    fitted_values,
    input_gradient,
    linear_representation,
    load_model,
    loads_model,
    predict,
    predict_batch,
)
from .linear import soft_threshold
from .spec import FAMILIES, FittedModel, ModelData, ModelSpec, prepare_data

__all__ = [
    "FAMILIES", "FittedModel", "ModelData", "ModelSpec", "dump_model", "dumps_model", "fit_model",
    "fitted_values", "input_gradient", "linear_representation", "load_model", "loads_model",
    "predict", "predict_batch", "prepare_data", "soft_threshold",
]
