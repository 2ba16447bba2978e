"""Causal convolutional-recurrent transcription model (inference only)."""

from .config import SHARE_FRACTIONS, ModelConfig, receptive_field
from .flops import FlopReport, count_flops
from .network import (CausalCRNN, HeadOutputs, StreamingState, build, forward_batch,
                      forward_step, validate_weights)
from .weights import LayerSpec, WeightStore, count_parameters, init_random, layer_specs

__all__ = [
    "SHARE_FRACTIONS", "ModelConfig", "receptive_field", "FlopReport", "count_flops",
    "CausalCRNN", "HeadOutputs", "StreamingState", "build", "forward_batch", "forward_step",
    "validate_weights", "LayerSpec", "WeightStore", "count_parameters", "init_random",
    "layer_specs",
]
