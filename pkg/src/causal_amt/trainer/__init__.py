"""Desk-scale training of a small causal transcriber on synthetic audio."""

from .gradcheck import grad_check, loss_grad_check
from .synth import SynthConfig, midi_to_hz, synth_generate
from .toy import ToyModel, ToyModelConfig, head_losses
from .train import (Adam, Piece, TrainLog, evaluate_pieces, load_dataset, prepare_pieces,
                    read_manifest, train_toy, write_dataset)

__all__ = [
    "grad_check", "loss_grad_check", "SynthConfig", "midi_to_hz", "synth_generate",
    "ToyModel", "ToyModelConfig", "head_losses", "Adam", "Piece", "TrainLog",
    "evaluate_pieces", "load_dataset", "prepare_pieces", "read_manifest", "train_toy",
    "write_dataset",
]
