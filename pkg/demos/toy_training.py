"""
Training the toy transcriber on synthetic audio
===============================================

A short version of the full run: one minute of synthetic audio and 30
epochs, about two and a half minutes on one core. Onset F1 climbs to
roughly 0.4 here; the acceptance suite trains on 120 s for 50 epochs and
reaches about 0.77.
"""

from causal_amt.decoder import DecoderConfig, decode_all
from causal_amt.frontend import StftConfig, WindowSpec
from causal_amt.labels import EncoderConfig, LossConfig
from causal_amt.metrics import Tolerance, match_notes
from causal_amt.model import build
from causal_amt.trainer import (SynthConfig, ToyModelConfig, prepare_pieces, synth_generate,
                                train_toy)

# 30 ms of lookahead: the asymmetric window with n_s = 480 samples.
stft = StftConfig(WindowSpec("asymmetric", 2048, 480))
train = prepare_pieces([synth_generate(SynthConfig(seed=s, duration_s=30.0)) for s in range(2)],
                       stft)
val = prepare_pieces([synth_generate(SynthConfig(seed=99, duration_s=20.0))], stft)

decoder = DecoderConfig(onset_threshold=0.45)
config = ToyModelConfig(epochs=30)


def report(epoch, loss, f1):
    print(f"epoch {epoch:2d}  loss {loss:.4f}  validation onset F1 {f1:.3f}")


weights, log = train_toy(train, val, config, EncoderConfig(n_frames=300),
                         LossConfig("wbce", 10.0), stft, decoder, progress=report)

# The exported weights load into the streaming inference model.
model = build(None, weights)
out = model.forward_batch(val[0].features)
est = decode_all(out.onset, out.frame, out.offset, out.velocity, decoder)
for tol in (10, 20, 30, 50):
    res = match_notes(val[0].notes, est, Tolerance(tol))
    print(f"{tol:3d} ms  P {res.precision:.3f}  R {res.recall:.3f}  F1 {res.f1:.3f}")
