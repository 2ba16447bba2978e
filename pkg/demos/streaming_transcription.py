"""
Frame-by-frame transcription and its latency budget
===================================================

Audio arrives in small chunks. The feature stream emits a log-mel frame as
soon as the window around it is complete, the causal model turns each frame
into head probabilities, and the decoder closes notes as their offsets are
seen. Nothing waits for future audio beyond the window's own lookahead.
"""

import numpy as np

from causal_amt.config import preset
from causal_amt.frontend import compute_features
from causal_amt.latency import latency_budget
from causal_amt.model import build, init_random
from causal_amt.pipeline import FrameTiming, transcribe_batch, transcribe_stream
from causal_amt.trainer import SynthConfig, synth_generate

# A few seconds of synthetic piano-like audio with known notes.
audio, notes = synth_generate(SynthConfig(seed=4, duration_s=3.0))
print(f"{len(notes)} reference notes, {audio.samples.size} samples")

# The A5 preset shares the whole conv stack between heads; random weights
# are enough to show the plumbing (train-toy produces real ones).
cfg = preset("A5")
model = build(cfg.model, init_random(cfg.model, seed=0))

timing = FrameTiming()
streamed = transcribe_stream(audio, cfg.stft, model, cfg.decoder, chunk_size=160, timing=timing)
batch = transcribe_batch(audio, cfg.stft, model, cfg.decoder)
print("streaming and batch note lists identical:", streamed == batch)

# Same frames either way: the stream is bit-identical to the batch frontend.
features = compute_features(audio.samples, cfg.stft)
print("frames:", features.shape[0], "of", features.shape[1], "mel bins")

summary = timing.summary()
budget = latency_budget(cfg.stft, model.config, summary["inference_ms"]["mean"],
                        summary["decode_ms"]["mean"])
for part, value in budget.as_dict()["static"].items():
    print(f"  {part:22s} {value:8.2f} ms")
for part, value in budget.as_dict()["measured"].items():
    print(f"  {part:22s} {value:8.2f} ms (measured)")
print(f"  {'total':22s} {budget.total_ms:8.2f} ms")

# Per-frame cost is what decides whether the system keeps up in real time.
print("p95 emission delay per frame: %.2f ms" % np.percentile(timing.emission_ms, 95))
