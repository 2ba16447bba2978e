"""End-to-end acceptance suite; one test per criterion, each timed.

A summary line per criterion is printed at the end of the pytest run.
"""

import json
import time

import numpy as np
import pytest

from causal_amt.cli import _synth_pieces, main
from causal_amt.config import preset
from causal_amt.decoder import DecoderConfig, DecoderState, decode_all, finalize, step
from causal_amt.errors import UnsupportedConfigurationError
from causal_amt.frontend import (AudioChunk, FeatureStream, MelFilterbank, StftConfig, WindowSpec,
                                 compute_features, make_window, sidelobe_level_db,
                                 window_delay_ms)
from causal_amt.labels import EncoderConfig, LossConfig, encode_binary
from causal_amt.metrics import Tolerance, brute_force_match, match_notes
from causal_amt.model import ModelConfig, build, count_flops, init_random
from causal_amt.decoder import NoteEvent
from causal_amt.pipeline import check_streamable
from causal_amt.trainer import (SynthConfig, ToyModelConfig, grad_check, loss_grad_check,
                                prepare_pieces, synth_generate, train_toy)
from causal_amt.trainer.gradcheck import small_config
from helpers import random_notes, record

pytestmark = pytest.mark.acceptance


def random_causal_config(rng) -> ModelConfig:
    n_blocks = int(rng.choice([0, 1, 2, 4]))
    shares = [s for s in (0.0, 0.25, 0.5, 1.0) if (s * n_blocks) == int(s * n_blocks)]
    with_velocity = bool(rng.integers(2))
    return ModelConfig(
        n_blocks=n_blocks, channels=tuple(int(c) for c in rng.integers(1, 5, n_blocks)),
        kernel_time=int(rng.integers(1, 4)), kernel_freq=int(rng.choice([1, 3, 5])),
        causal=True, share_fraction=float(rng.choice(shares)),
        separate_offset_stack=bool(rng.integers(2)),
        velocity_conditioning=with_velocity and bool(rng.integers(2)),
        with_velocity=with_velocity, embed_units=int(rng.choice([0, 5])),
        recurrent_units=int(rng.choice([0, 3])), freq_pool=int(rng.choice([1, 2])),
        batch_norm=bool(rng.integers(2)), n_pitches=int(rng.integers(2, 7)),
        n_mels=int(rng.integers(16, 33)))


def test_01_causality_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    violations = 0
    n_configs = 120
    for _ in range(n_configs):
        cfg = random_causal_config(rng)
        model = build(cfg, init_random(cfg, int(rng.integers(2 ** 31))))
        x = rng.normal(-5.0, 2.0, (24, cfg.n_mels))
        base = model.forward_batch(x).arrays()
        u = int(rng.integers(1, 24))
        moved = x.copy()
        moved[u] += rng.normal(0.0, 5.0, cfg.n_mels)
        out = model.forward_batch(moved).arrays()
        violations += sum(not np.array_equal(out[k][:u], base[k][:u]) for k in base)
    elapsed = time.perf_counter() - t0
    record(1, violations == 0 and elapsed < 60,
           f"causality: {n_configs} random causal configs, {violations} past-frame changes, "
           f"{elapsed:.1f} s (limit 60 s)")


def test_02_streaming_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    stft = StftConfig(WindowSpec("asymmetric", 2048, 160))
    audio, _ = synth_generate(SynthConfig(seed=11, duration_s=10.0))
    filterbank = MelFilterbank.create(stft.fft_size, stft.sample_rate)
    batch = compute_features(audio.samples, stft, filterbank)
    mismatches = 0
    streamed = None
    for _ in range(50):
        stream = FeatureStream(stft, filterbank)
        frames, start = [], 0
        while start < audio.samples.size:
            size = int(rng.integers(1, 4000))
            frames += stream.push_samples(AudioChunk(audio.samples[start:start + size], 16000))
            start += size
        streamed = np.stack([f.values for f in frames])
        mismatches += streamed.shape != batch.shape or not np.array_equal(streamed, batch)
    # The model consumes one frame per step, so audio chunking cannot reach it;
    # one streamed pass over the frames covers every chunking above.
    cfg = ModelConfig(n_blocks=2, channels=(3, 3), share_fraction=0.5, embed_units=8,
                      recurrent_units=4)
    model = build(cfg, init_random(cfg, 5))
    state = model.new_state()
    rows = [model.forward_step(state, f) for f in streamed]
    whole = model.forward_batch(batch).arrays()
    model_ok = all(np.array_equal(np.stack([r.arrays()[k] for r in rows]), v)
                   for k, v in whole.items())
    elapsed = time.perf_counter() - t0
    record(2, mismatches == 0 and model_ok and elapsed < 30,
           f"streaming: 50 random chunkings of 10 s, {mismatches} frontend mismatches, "
           f"model bit-identical={model_ok}, {elapsed:.1f} s (limit 30 s)")


def test_03_window_geometry():
    delays = [window_delay_ms(WindowSpec("asymmetric", 2048, n)) for n in (160, 320, 480, 640, 800)]
    centered = window_delay_ms(WindowSpec("centered_hann", 2048, 1024))
    half = make_window(WindowSpec("asymmetric", 2048, 1024))
    hann = make_window(WindowSpec("centered_hann", 2048, 1024))
    ok = delays == [10.0, 20.0, 30.0, 40.0, 50.0] and centered == 64.0 and \
        np.array_equal(half, hann)
    record(3, ok, f"window geometry: asymmetric delays {delays} ms, centered {centered} ms, "
                  f"n_s=1024 equals Hann bit-for-bit={np.array_equal(half, hann)}")


def test_04_leakage():
    t0 = time.perf_counter()
    asym = sidelobe_level_db(make_window(WindowSpec("asymmetric", 2048, 160)))
    hann = sidelobe_level_db(make_window(WindowSpec("centered_hann", 2048, 1024)))
    gap = asym - hann
    elapsed = time.perf_counter() - t0
    record(4, 14 <= gap <= 26 and elapsed < 5,
           f"leakage: asym-160 {asym:.2f} dB vs Hann {hann:.2f} dB, gap {gap:.2f} dB "
           f"(bracket [14, 26]), {elapsed:.2f} s")


def test_05_metrics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    disagreements = 0
    for i in range(1000):
        tol = Tolerance(float(rng.choice([10, 20, 30])), with_offset=bool(i % 2))
        ref = random_notes(rng, int(rng.integers(0, 9)))
        est = random_notes(rng, int(rng.integers(0, 9)))
        disagreements += match_notes(ref, est, tol).n_matched != brute_force_match(ref, est, tol)
    elapsed = time.perf_counter() - t0
    record(5, disagreements == 0 and elapsed < 30,
           f"metrics oracle: 1000 instances, {disagreements} disagreements, {elapsed:.1f} s "
           f"(limit 30 s)")


LOSSES = [LossConfig("wbce", 10.0), LossConfig("wbce", 1.0), LossConfig("shift_tolerant", 10.0, 1),
          LossConfig("mse")]


def test_06_gradient_checks():
    t0 = time.perf_counter()
    worst = {}
    for loss in LOSSES:
        key = f"loss {loss.kind}" + (f"(w={loss.w_pos:g})" if loss.kind != "mse" else "")
        worst[key] = max(loss_grad_check(loss, seed) for seed in range(100))
    layer_errors = {}
    for seed in range(100):
        loss = LOSSES[seed % len(LOSSES)]
        cfg = small_config(seed)
        if seed % 5 == 4:
            cfg = small_config(seed, n_mels=24, freq_pool=1, head_harmonics=2, head_grid=2)
        for name, err in grad_check(cfg, loss, seed, entries_per_tensor=4,
                                    return_all=True).items():
            layer = name.split(".", 1)[1] if name.startswith("shared.") else name
            layer_errors[layer] = max(layer_errors.get(layer, 0.0), err)
    worst["toy layers"] = max(layer_errors.values())
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    summary = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(6, ok, f"gradient checks (100 instances each): {summary}; "
                  f"{len(layer_errors)} toy tensors, {elapsed:.1f} s (limit 60 s)")


def random_decodable_notes(rng):
    notes = []
    for pitch in rng.choice(np.arange(21, 109), int(rng.integers(1, 7)), replace=False):
        frame = int(rng.integers(0, 20))
        for _ in range(int(rng.integers(1, 6))):
            length = int(rng.integers(1, 30))
            jitter = rng.uniform(-0.45, 0.45, 2)
            notes.append(NoteEvent(int(pitch), (frame + jitter[0]) / 100,
                                   (frame + length + jitter[1]) / 100, int(rng.integers(1, 128))))
            # Re-onsets need a rising edge and the 50 ms suppression window.
            frame = max(frame + 5, frame + length) + int(rng.integers(0, 6))
    return notes


def test_07_round_trip():
    rng = np.random.default_rng(77)
    failures = 0
    for _ in range(100):
        notes = random_decodable_notes(rng)
        n_frames = int(np.ceil(max(n.offset for n in notes) * 100)) + 5
        t = encode_binary(notes, EncoderConfig(n_frames=n_frames))
        est = decode_all(t.onset, t.frame, t.offset, t.velocity, DecoderConfig(onset_threshold=0.5))
        res = match_notes(notes, est, Tolerance(10.0))
        failures += not (res.n_matched == len(notes) == len(est))
    record(7, failures == 0, f"round trip: 100 random note lists, {failures} with missed or "
                             f"spurious notes (onset tolerance 1 frame)")


def test_08_toy_learning():
    t0 = time.perf_counter()
    stft = StftConfig(WindowSpec("asymmetric", 2048, 480))
    train = prepare_pieces(_synth_pieces(0, 120.0, 30.0, 0), stft)
    val = prepare_pieces(_synth_pieces(0, 30.0, 30.0, 500), stft)
    decoder = DecoderConfig(onset_threshold=0.45)
    weights, log = train_toy(train, val, ToyModelConfig(), EncoderConfig(n_frames=300),
                             LossConfig("wbce", 10.0), stft, decoder)
    # Score the exported weights through the inference model.
    model = build(None, weights)
    out = model.forward_batch(val[0].features)
    est = decode_all(out.onset, out.frame, out.offset, out.velocity, decoder)
    res = match_notes(val[0].notes, est, Tolerance(30.0))
    elapsed = time.perf_counter() - t0
    record(8, res.f1 >= 0.70 and elapsed < 900,
           f"toy learning: held-out onset F1 {res.f1:.3f} at 30 ms (P {res.precision:.3f}, "
           f"R {res.recall:.3f}; target 0.70) after {log.epochs[-1]} epochs, "
           f"{elapsed:.0f} s (limit 900 s)")


def test_09_flops_mechanism():
    base = ModelConfig()
    split = count_flops(ModelConfig(share_fraction=0.0))
    shared = count_flops(ModelConfig(share_fraction=1.0))
    n_stacks = len(base.stacks)
    totals = [count_flops(preset(name).model).total for name in ("A3", "A4", "A5")]
    ok = split.conv == n_stacks * shared.conv and totals[0] > totals[1] > totals[2]
    record(9, ok, f"FLOPs: conv {split.conv} unshared vs {shared.conv} shared "
                  f"(ratio {split.conv / shared.conv:g}, {n_stacks} stacks); "
                  f"A3>A4>A5 totals {totals}")


def test_10_latency_budget(capsys, tmp_path):
    reports = {}
    for name, extra in (("T1", ["--inference-ms", "3", "--decode-ms", "0.1"]),
                        ("A5", []), ("TP3", ["--inference-ms", "0", "--decode-ms", "0"])):
        assert main(["latency", "--preset", name] + extra) == 0
        reports[name] = json.loads(capsys.readouterr().out)
    exact = all(r["total_ms"] == (r["static"]["buffer_ms"] + r["static"]["window_ms"]
                                  + r["measured"]["inference_ms"] + r["measured"]["decode_ms"]
                                  + r["static"]["blockwise_penalty_ms"])
                for r in reports.values())
    se_penalty = reports["TP3"]["static"]["blockwise_penalty_ms"]
    cfg = preset("TP3").model
    try:
        check_streamable(build(cfg, init_random(cfg, 0)))
        refused = False
    except UnsupportedConfigurationError:
        refused = True
    ok = exact and reports["T1"]["total_ms"] == pytest.approx(23.1, abs=1e-12) and \
        se_penalty == 10000.0 and refused
    record(10, ok, f"latency: totals equal component sums={exact}, T1 total "
                   f"{reports['T1']['total_ms']:g} ms, SE penalty {se_penalty:g} ms, "
                   f"SE streaming refused={refused}")


def test_11_throughput():
    audio, notes = synth_generate(SynthConfig(seed=3, duration_s=60.0))
    stft = StftConfig(WindowSpec("asymmetric", 2048, 160))
    targets = encode_binary(notes, EncoderConfig(n_frames=6000))
    rng = np.random.default_rng(0)
    # Stand-in head outputs: scaled targets plus noise.
    probs = {k: np.clip(getattr(targets, k) * 0.9 + rng.uniform(0, 0.1, (6000, 88)), 0, 1)
             for k in ("onset", "frame", "offset", "velocity")}

    class Row:
        pass

    t0 = time.perf_counter()
    stream = FeatureStream(stft)
    state = DecoderState(DecoderConfig(), 88)
    emitted = 0
    for start in range(0, audio.samples.size, 160):
        for frame in stream.push_samples(AudioChunk(audio.samples[start:start + 160], 16000)):
            row = Row()
            for k, v in probs.items():
                setattr(row, k, v[min(frame.index, 5999)])
            emitted += len(step(state, row, frame.index))
    emitted += len(finalize(state))
    elapsed = time.perf_counter() - t0
    record(11, elapsed < 6.0, f"throughput: 60 s audio through streaming frontend and decoder "
                              f"in {elapsed:.2f} s (RTF {elapsed / 60:.3f}, limit 0.1); "
                              f"{emitted} notes")
