"""Parameter layout, random initialization and the ``CAMT`` weight file."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ShapeMismatchError
from .config import ModelConfig

MAGIC = b"CAMT"
VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    name: str
    shape: tuple[int, ...]
    fan_in: int
    kind: str = "weight"


def _bn_or_bias(prefix: str, channels: int, fan_in: int, batch_norm: bool) -> list[LayerSpec]:
    if not batch_norm:
        return [LayerSpec(f"{prefix}.bias", (channels,), fan_in, "bias")]
    return [LayerSpec(f"{prefix}.bn.{p}", (channels,), fan_in, f"bn_{p}")
            for p in ("gamma", "beta", "mean", "var")]


def _block_specs(prefix: str, c_in: int, c_out: int, cfg: ModelConfig) -> list[LayerSpec]:
    kt, kf = cfg.kernel_time, cfg.kernel_freq
    specs = [LayerSpec(f"{prefix}.depthwise.weight", (kt, kf, c_in), kt * kf)]
    specs += _bn_or_bias(f"{prefix}.depthwise", c_in, kt * kf, cfg.batch_norm)
    specs.append(LayerSpec(f"{prefix}.pointwise.weight", (c_in, c_out), c_in))
    specs += _bn_or_bias(f"{prefix}.pointwise", c_out, c_in, cfg.batch_norm)
    if cfg.se_enabled:
        reduced = max(1, c_out // cfg.se_reduction)
        specs += [
            LayerSpec(f"{prefix}.se.reduce.weight", (c_out, reduced), c_out),
            LayerSpec(f"{prefix}.se.reduce.bias", (reduced,), c_out, "bias"),
            LayerSpec(f"{prefix}.se.expand.weight", (reduced, c_out), reduced),
            LayerSpec(f"{prefix}.se.expand.bias", (c_out,), reduced, "bias"),
        ]
    return specs


def layer_specs(config: ModelConfig) -> list[LayerSpec]:
    """Ordered parameter layout implied by ``config``."""
    cfg = config
    specs = [
        LayerSpec("input_norm.shift", (cfg.n_mels,), 1, "norm_shift"),
        LayerSpec("input_norm.scale", (cfg.n_mels,), 1, "norm_scale"),
    ]
    channels = cfg.block_channels()
    for i in range(cfg.n_shared):
        specs += _block_specs(f"shared.block{i}", *channels[i], cfg)
    for stack in cfg.stacks:
        for i in range(cfg.n_shared, cfg.n_blocks):
            specs += _block_specs(f"{stack}.block{i}", *channels[i], cfg)
        if cfg.embed_units:
            n_in = cfg.flat_features
            specs += [LayerSpec(f"{stack}.embed.weight", (n_in, cfg.embed_units), n_in),
                      LayerSpec(f"{stack}.embed.bias", (cfg.embed_units,), n_in, "bias")]
    hidden = cfg.recurrent_units
    for head in cfg.heads:
        n_in = cfg.head_inputs(head)
        if hidden:
            specs += [
                LayerSpec(f"{head}.gru.w_input", (n_in, 3 * hidden), n_in),
                LayerSpec(f"{head}.gru.w_hidden", (hidden, 3 * hidden), hidden),
                LayerSpec(f"{head}.gru.b_input", (3 * hidden,), n_in, "bias"),
                LayerSpec(f"{head}.gru.b_hidden", (3 * hidden,), hidden, "bias"),
            ]
            n_in = hidden
        specs += [LayerSpec(f"{head}.out.weight", (n_in, cfg.n_pitches), n_in),
                  LayerSpec(f"{head}.out.bias", (cfg.n_pitches,), n_in, "bias")]
    return specs


def count_parameters(config: ModelConfig) -> int:
    return sum(int(np.prod(s.shape)) for s in layer_specs(config))


@dataclass
class WeightStore:
    """Ordered ``name -> float32 tensor`` mapping, optionally tagged with a config."""

    names: list[str] = field(default_factory=list)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    config: dict | None = None

    def add(self, name: str, values) -> None:
        if name in self.tensors:
            raise ConfigurationError(f"duplicate layer {name!r}")
        self.names.append(name)
        self.tensors[name] = np.ascontiguousarray(values, dtype=np.float32)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.names)

    def items(self):
        return ((n, self.tensors[n]) for n in self.names)

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def equals(self, other: "WeightStore") -> bool:
        return (self.names == other.names
                and all(np.array_equal(self[n], other[n]) and self[n].shape == other[n].shape
                        for n in self.names))

    def to_bytes(self) -> bytes:
        layers, offset = [], 0
        for name, tensor in self.items():
            layers.append({"name": name, "shape": list(tensor.shape), "offset": offset})
            offset += tensor.size * 4
        meta = {"layers": layers}
        if self.config is not None:
            meta["config"] = self.config
        meta_bytes = json.dumps(meta, separators=(",", ":")).encode("utf-8")
        data = b"".join(t.astype("<f4").tobytes() for _, t in self.items())
        return MAGIC + struct.pack("<II", VERSION, len(meta_bytes)) + meta_bytes + data

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WeightStore":
        if blob[:4] != MAGIC:
            raise ConfigurationError("not a CAMT weight file (bad magic bytes)")
        version, meta_len = struct.unpack("<II", blob[4:12])
        if version != VERSION:
            raise ConfigurationError(f"unsupported CAMT version {version}")
        meta = json.loads(blob[12:12 + meta_len].decode("utf-8"))
        data = blob[12 + meta_len:]
        store = cls(config=meta.get("config"))
        for layer in meta["layers"]:
            shape = tuple(layer["shape"])
            count = int(np.prod(shape))
            start = layer["offset"]
            if start + 4 * count > len(data):
                raise ShapeMismatchError(f"layer {layer['name']!r} runs past the end of the file")
            values = np.frombuffer(data, dtype="<f4", count=count, offset=start)
            store.add(layer["name"], values.reshape(shape))
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightStore":
        return cls.from_bytes(Path(path).read_bytes())


def init_random(config: ModelConfig, seed: int = 0) -> WeightStore:
    """Deterministic uniform ``[-a, a]`` weights with ``a = sqrt(1 / fan_in)``.

    Normalization parameters get neutral-ish draws instead: input
    normalization is the identity, batch-norm scales and variances lie in
    ``[0.5, 1.5]`` and shifts/means in ``[-0.1, 0.1]``.
    """
    rng = np.random.default_rng(seed)
    store = WeightStore(config=config.to_dict())
    for spec in layer_specs(config):
        if spec.kind == "norm_shift":
            values = np.zeros(spec.shape)
        elif spec.kind == "norm_scale":
            values = np.ones(spec.shape)
        elif spec.kind in ("bn_gamma", "bn_var"):
            values = rng.uniform(0.5, 1.5, spec.shape)
        elif spec.kind in ("bn_beta", "bn_mean"):
            values = rng.uniform(-0.1, 0.1, spec.shape)
        else:
            bound = np.sqrt(1.0 / spec.fan_in)
            values = rng.uniform(-bound, bound, spec.shape)
        store.add(spec.name, values)
    return store
