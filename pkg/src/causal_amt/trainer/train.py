"""Segment-based Adam training of the toy transcriber."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..decoder import DecoderConfig, NoteEvent, decode_all, read_notes, write_notes
from ..errors import ConfigurationError, InvalidInputError, TrainingDivergedError
from ..frontend import AudioChunk, MelFilterbank, StftConfig, compute_features
from ..labels import EncoderConfig, LossConfig, TargetMatrices, encode
from ..metrics import Tolerance, match_notes
from ..model import WeightStore
from ..wavio import read_wav, write_wav
from .toy import ToyModel, ToyModelConfig

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class Piece:
    name: str
    features: np.ndarray
    notes: list[NoteEvent]
    targets: TargetMatrices | None = None


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)

    def append(self, epoch: int, loss: float, val_f1: float) -> None:
        if not (math.isfinite(loss) and math.isfinite(val_f1)):
            raise TrainingDivergedError(epoch, loss)
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.val_f1.append(val_f1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("epoch", "loss", "val_f1"))
        for row in zip(self.epochs, self.loss, self.val_f1):
            writer.writerow((row[0], repr(row[1]), repr(row[2])))
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


class Adam:
    """Adam with optional decoupled weight decay on tensors named ``*.weight``."""

    def __init__(self, params: dict[str, np.ndarray], names: list[str], lr: float,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.names = names
        self.m = {n: np.zeros_like(params[n]) for n in names}
        self.v = {n: np.zeros_like(params[n]) for n in names}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for n in self.names:
            g = grads[n]
            self.m[n] = ADAM_BETA1 * self.m[n] + (1.0 - ADAM_BETA1) * g
            self.v[n] = ADAM_BETA2 * self.v[n] + (1.0 - ADAM_BETA2) * g * g
            update = (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + ADAM_EPS)
            if self.weight_decay and n.endswith(".weight"):
                update = update + self.weight_decay * params[n]
            params[n] = params[n] - lr * update


def learning_rate(config: ToyModelConfig, step: int, total_steps: int) -> float:
    if config.lr_schedule == "constant" or total_steps <= 1:
        return config.learning_rate
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def prepare_pieces(dataset, stft: StftConfig, names=None) -> list[Piece]:
    """Log-mel features for ``(AudioChunk, notes)`` pairs."""
    filterbank = MelFilterbank.create(stft.fft_size, stft.sample_rate)
    pieces = []
    for i, (audio, notes) in enumerate(dataset):
        if isinstance(audio, AudioChunk) and audio.sample_rate != stft.sample_rate:
            raise ConfigurationError(
                f"audio at {audio.sample_rate} Hz but the frontend expects {stft.sample_rate} Hz")
        samples = audio.samples if isinstance(audio, AudioChunk) else audio
        name = names[i] if names is not None else f"piece{i:03d}"
        pieces.append(Piece(name, compute_features(samples, stft, filterbank), list(notes)))
    return pieces


def _attach_targets(pieces: list[Piece], encoder: EncoderConfig) -> None:
    for piece in pieces:
        cfg = replace(encoder, n_frames=piece.features.shape[0])
        piece.targets = encode(piece.notes, cfg)


def _segments(pieces: list[Piece], length: int, phase: int) -> list[tuple[int, int]]:
    out = []
    for i, piece in enumerate(pieces):
        n = piece.features.shape[0]
        if n <= length:
            out.append((i, 0))
            continue
        start = phase % (n - length + 1)
        while start + length <= n:
            out.append((i, start))
            start += length
    return out


def _batch(pieces: list[Piece], items, length: int):
    mel, targets = [], []
    for i, start in items:
        piece = pieces[i]
        stop = min(start + length, piece.features.shape[0])
        seg = piece.features[start:stop]
        tgt = piece.targets
        planes = [getattr(tgt, f)[start:stop] for f in
                  ("onset", "offset", "frame", "velocity", "velocity_mask")]
        if seg.shape[0] < length:
            # Short pieces are padded with the last frame and masked-out targets.
            pad = length - seg.shape[0]
            seg = np.concatenate([seg, np.repeat(seg[-1:], pad, axis=0)])
            planes = [np.concatenate([p, np.zeros((pad, p.shape[1]))]) for p in planes]
        mel.append(seg)
        targets.append(TargetMatrices(*planes))
    return np.stack(mel), targets


def onset_f1(notes_ref, notes_est, tolerance_ms: float) -> float:
    return match_notes(notes_ref, notes_est, Tolerance(tolerance_ms)).f1


def evaluate_pieces(predict, pieces: list[Piece], decoder: DecoderConfig,
                    tolerance_ms: float) -> tuple[float, list[NoteEvent]]:
    """Onset F1 pooled over pieces (matches, references and estimates summed)."""
    matched = n_ref = n_est = 0
    all_est = []
    tol = Tolerance(tolerance_ms)
    for piece in pieces:
        probs = predict(piece.features)
        est = decode_all(probs["onset"], probs["frame"], probs["offset"],
                         probs.get("velocity"), decoder)
        res = match_notes(piece.notes, est, tol)
        matched += res.n_matched
        n_ref += len(piece.notes)
        n_est += len(est)
        all_est.append(est)
    p = matched / n_est if n_est else 0.0
    r = matched / n_ref if n_ref else 0.0
    return (2 * p * r / (p + r) if p + r > 0 else 0.0), all_est


def train_toy(train, val, config: ToyModelConfig | None = None,
              encoder: EncoderConfig | None = None, loss: LossConfig | None = None,
              stft: StftConfig | None = None, decoder: DecoderConfig | None = None,
              eval_tolerance_ms: float = 30.0, progress=None) -> tuple[WeightStore, TrainLog]:
    """Train the toy model and return its weights and the per-epoch log.

    ``train`` and ``val`` are lists of ``(AudioChunk, notes)`` pairs or of
    prepared :class:`Piece` objects. Segments of ``encoder.n_frames`` frames
    are cut at a random phase each epoch, shuffled and grouped into batches of
    ``config.batch_segments``; an epoch is one pass over the training set.
    """
    config = config or ToyModelConfig()
    stft = stft or StftConfig()
    encoder = encoder or EncoderConfig(frame_rate=stft.frame_rate)
    loss = loss or LossConfig()
    decoder = decoder or DecoderConfig(frame_rate=stft.frame_rate)
    if not math.isclose(encoder.frame_rate, stft.frame_rate) or \
            not math.isclose(decoder.frame_rate, stft.frame_rate):
        raise ConfigurationError("encoder, decoder and frontend frame rates differ")
    if loss.kind == "shift_tolerant" and encoder.scheme != "binary":
        raise ConfigurationError("the shift-tolerant loss needs binary targets")

    train_pieces = train if train and isinstance(train[0], Piece) else prepare_pieces(train, stft)
    val_pieces = val if val and isinstance(val[0], Piece) else prepare_pieces(val, stft)
    if not train_pieces:
        raise InvalidInputError("empty training set")
    _attach_targets(train_pieces, encoder)

    rng = np.random.default_rng(config.seed)
    model = ToyModel.init(config, seed=int(rng.integers(2 ** 32)))
    model.set_input_norm(np.concatenate([p.features for p in train_pieces]))
    names = model.trainable
    adam = Adam(model.params, names, config.learning_rate, config.weight_decay)
    length = encoder.n_frames
    per_epoch = math.ceil(len(_segments(train_pieces, length, 0)) / config.batch_segments)
    total_steps = per_epoch * config.epochs

    log = TrainLog()
    for epoch in range(1, config.epochs + 1):
        items = _segments(train_pieces, length, int(rng.integers(length)))
        order = rng.permutation(len(items))
        losses = []
        for b in range(0, len(order), config.batch_segments):
            mel, targets = _batch(train_pieces, [items[k] for k in order[b:b + config.batch_segments]],
                                  length)
            value, grads = model.loss(mel, targets, loss)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            adam.step(model.params, grads, learning_rate(config, adam.t, total_steps))
            losses.append(value)
        f1 = evaluate_pieces(model.predict, val_pieces, decoder, eval_tolerance_ms)[0] \
            if val_pieces else 0.0
        log.append(epoch, float(np.mean(losses)), f1)
        if progress is not None:
            progress(epoch, log.loss[-1], f1)
    return model.to_weights(), log


# -- datasets on disk ------------------------------------------------------

def write_dataset(directory, dataset, prefix: str = "piece") -> Path:
    """Write ``(AudioChunk, notes)`` pairs as WAV + TSV files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (audio, notes) in enumerate(dataset):
        stem = f"{prefix}{i:03d}"
        write_wav(directory / f"{stem}.wav", audio.samples, audio.sample_rate)
        write_notes(directory / f"{stem}.tsv", notes)
        entries.append({"wav": f"{stem}.wav", "notes": f"{stem}.tsv"})
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"pairs": entries}, indent=2) + "\n", encoding="utf-8")
    return manifest


def read_manifest(path) -> list[tuple[Path, Path]]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidInputError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or set(data) != {"pairs"} or not isinstance(data["pairs"], list):
        raise InvalidInputError(f"manifest {path} must be an object with a 'pairs' list")
    out = []
    for i, entry in enumerate(data["pairs"]):
        if not isinstance(entry, dict) or set(entry) != {"wav", "notes"}:
            raise InvalidInputError(f"manifest {path}: entry {i} needs exactly 'wav' and 'notes'")
        out.append((path.parent / entry["wav"], path.parent / entry["notes"]))
    return out


def load_dataset(manifest) -> list[tuple[AudioChunk, list[NoteEvent]]]:
    return [(read_wav(wav), read_notes(tsv)) for wav, tsv in read_manifest(manifest)]
