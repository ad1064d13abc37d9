"""Train, prune and quantize small recurrent and dense binary classifiers."""

from .condensation import (PruneReport, QuantizedModel, QuantizedTensor, channel_saliency, dequantize,
                           prune_model, pruned_equivalence_mask, quantize, quantize_model)
from .evaluation import EvalReport, auroc, bench_inference, emit_report
from .layers import (LayerSpec, LstmState, Model, ModelSpec, Tape, backward, dnn_spec, forward, hlstm_spec,
                     hlstm_step, init_model, lstm_spec, lstm_step, param_count, predict)
from .model_store import load, save
from .tensor_core import Rng, activation, elementwise, matmul
from .training import EpochLog, TrainConfig, adam_step, bce_loss, train

__all__ = [
    "EpochLog", "EvalReport", "LayerSpec", "LstmState", "Model", "ModelSpec", "PruneReport", "QuantizedModel",
    "QuantizedTensor", "Rng", "Tape", "TrainConfig", "activation", "adam_step", "auroc", "backward",
    "bce_loss", "bench_inference", "channel_saliency", "dequantize", "dnn_spec", "elementwise", "emit_report",
    "forward", "hlstm_spec", "hlstm_step", "init_model", "load", "lstm_spec", "lstm_step", "matmul",
    "param_count", "predict", "prune_model", "pruned_equivalence_mask", "quantize", "quantize_model", "save",
    "train",
]

__version__ = "0.1.0"
