import numpy as np
import pytest

from causal_amt.decoder import DecoderConfig, decode_all
from causal_amt.errors import ConfigurationError, InvalidInputError, TrainingDivergedError
from causal_amt.frontend import StftConfig, WindowSpec
from causal_amt.labels import EncoderConfig, LossConfig
from causal_amt.metrics import Tolerance, match_notes
from causal_amt.model import build
from causal_amt.trainer import (Adam, SynthConfig, ToyModel, ToyModelConfig, TrainLog, grad_check,
                                load_dataset, midi_to_hz, prepare_pieces, read_manifest,
                                synth_generate, train_toy, write_dataset)
from causal_amt.trainer.gradcheck import small_config

STFT = StftConfig(WindowSpec("asymmetric", 2048, 480))


# -- synthesis ------------------------------------------------------------------------

def test_synth_deterministic():
    a, notes_a = synth_generate(SynthConfig(seed=5, duration_s=2.0))
    b, notes_b = synth_generate(SynthConfig(seed=5, duration_s=2.0))
    assert np.array_equal(a.samples, b.samples) and notes_a == notes_b
    c, _ = synth_generate(SynthConfig(seed=6, duration_s=2.0))
    assert not np.array_equal(a.samples, c.samples)


def test_synth_peak_and_range():
    audio, notes = synth_generate(SynthConfig(seed=1, duration_s=3.0))
    assert np.max(np.abs(audio.samples)) == pytest.approx(0.9)
    assert notes and all(40 <= n.pitch <= 80 and 0 <= n.onset < n.offset <= 3.0 for n in notes)


@pytest.mark.parametrize("seed", range(5))
def test_monophonic_notes_never_overlap(seed):
    _, notes = synth_generate(SynthConfig(seed=seed, duration_s=10.0, max_polyphony=1))
    for a, b in zip(notes, notes[1:]):
        assert a.offset <= b.onset


@pytest.mark.parametrize("seed", range(3))
def test_polyphony_bound(seed):
    _, notes = synth_generate(SynthConfig(seed=seed, duration_s=10.0, max_polyphony=2))
    for n in notes:
        assert sum(m.onset <= n.onset < m.offset for m in notes) <= 2


def test_a4_energy_near_440():
    cfg = SynthConfig(seed=0, duration_s=3.0, pitch_range=(69, 69), note_rate=5.0, noise_level=0.0,
                      min_note_s=1.0, max_note_s=1.0)
    audio, notes = synth_generate(cfg)
    n = notes[0]
    start = int((n.onset + 0.1) * 16000)
    seg = audio.samples[start:start + 8192] * np.hanning(8192)
    spectrum = np.abs(np.fft.rfft(seg))
    peak_hz = np.argmax(spectrum) * 16000 / 8192
    assert abs(peak_hz - 440.0) < 4.0
    assert midi_to_hz(69) == 440.0


def test_synth_config_validation():
    for kw in (dict(pitch_range=(10, 50)), dict(duration_s=0), dict(max_polyphony=0)):
        with pytest.raises(ConfigurationError):
            SynthConfig(**kw)


# -- gradients ------------------------------------------------------------------------

@pytest.mark.parametrize("loss", [LossConfig("wbce", 10.0), LossConfig("shift_tolerant", 10.0, 1),
                                  LossConfig("mse")])
def test_toy_gradients(loss):
    for seed in range(3):
        assert grad_check(small_config(seed), loss, seed) < 1e-4


def test_template_head_gradients():
    cfg = small_config(0, n_mels=24, freq_pool=1, head_harmonics=2, head_taps=1, head_grid=2)
    assert grad_check(cfg, LossConfig("wbce", 10.0), 0) < 1e-4


def test_zero_weights_give_zero_conv_gradients():
    model = ToyModel.init(small_config(0))
    for name in model.trainable:
        if name.endswith(".weight"):
            model.params[name][:] = 0.0
    rng = np.random.default_rng(0)
    from causal_amt.labels import encode_binary
    targets = [encode_binary([], EncoderConfig(n_frames=6, n_pitches=6))]
    _, grads = model.loss(rng.normal(size=(1, 6, 8)), targets, LossConfig())
    assert not grads["shared.block0.depthwise.weight"].any()


# -- training -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_data():
    train = prepare_pieces([synth_generate(SynthConfig(seed=s, duration_s=6.0)) for s in (1, 2)],
                           STFT)
    val = prepare_pieces([synth_generate(SynthConfig(seed=9, duration_s=4.0))], STFT)
    return train, val


def small_run(data, **kw):
    train, val = data
    loss = kw.pop("loss", LossConfig("wbce", 10.0))
    cfg = ToyModelConfig(**{"epochs": 3, "batch_segments": 2, **kw})
    return train_toy(train, val, cfg, EncoderConfig(n_frames=200), loss, STFT,
                     DecoderConfig(onset_threshold=0.45))


def test_loss_falls_by_epoch_20(tiny_data):
    _, log = small_run(tiny_data, epochs=20)
    assert log.epochs == list(range(1, 21))
    assert log.loss[19] < log.loss[0]


def test_training_is_deterministic(tiny_data):
    w1, log1 = small_run(tiny_data)
    w2, log2 = small_run(tiny_data)
    assert log1.to_csv() == log2.to_csv()
    assert all(np.array_equal(w1[n], w2[n]) for n, _ in w1.items())


def test_positive_weight_raises_onset_recall(tiny_data):
    train, val = tiny_data
    recall = {}
    for w in (1.0, 10.0):
        weights, _ = small_run(tiny_data, epochs=8, loss=LossConfig("wbce", w))
        model = build(None, weights)
        out = model.forward_batch(val[0].features)
        est = decode_all(out.onset, out.frame, out.offset, out.velocity,
                         DecoderConfig(onset_threshold=0.45))
        recall[w] = match_notes(val[0].notes, est, Tolerance(50)).recall
        recall[w] = (recall[w], float(out.onset.mean()))
    # The heavier positive weight pushes onset probabilities up overall.
    assert recall[10.0][1] > recall[1.0][1]
    assert recall[10.0][0] >= recall[1.0][0]


def test_trained_weights_load_and_stay_causal(tiny_data):
    weights, _ = small_run(tiny_data, epochs=2)
    model = build(None, weights)
    x = tiny_data[1][0].features[:60]
    base = model.forward_batch(x)
    future = x.copy()
    future[40:] += np.random.default_rng(0).normal(0, 3, future[40:].shape)
    moved = model.forward_batch(future)
    for k, v in base.arrays().items():
        assert np.array_equal(moved.arrays()[k][:40], v[:40])
    state = model.new_state()
    rows = [model.forward_step(state, f) for f in x]
    assert np.array_equal(np.stack([r.onset for r in rows]), base.onset)
    toy = ToyModel.from_weights(ToyModelConfig(), weights)
    np.testing.assert_allclose(toy.predict(x)["onset"], base.onset, atol=1e-9)


def test_template_weights_export_dense(tiny_data):
    weights, _ = small_run(tiny_data, epochs=1, head_harmonics=3, head_taps=1)
    model = build(None, weights)
    assert "onset.out.weight" in dict(weights.items())
    assert model.forward_batch(tiny_data[1][0].features[:10]).onset.shape == (10, 88)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(tiny_data):
    with pytest.raises(TrainingDivergedError, match="epoch 1"):
        small_run(tiny_data, epochs=2, learning_rate=1e300)


def test_train_requires_matching_frame_rates(tiny_data):
    with pytest.raises(ConfigurationError):
        train_toy(tiny_data[0], [], ToyModelConfig(epochs=1), EncoderConfig(frame_rate=50.0),
                  LossConfig(), STFT)


def test_trainlog_csv_and_finiteness(tmp_path):
    log = TrainLog()
    log.append(1, 0.5, 0.25)
    log.write_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text() == "epoch,loss,val_f1\n1,0.5,0.25\n"
    with pytest.raises(TrainingDivergedError):
        log.append(2, float("nan"), 0.0)


def test_adam_first_step_moves_by_lr():
    params = {"a.weight": np.array([1.0, -2.0])}
    opt = Adam(params, ["a.weight"], lr=0.1)
    opt.step(params, {"a.weight": np.array([3.0, -0.5])})
    np.testing.assert_allclose(params["a.weight"], [0.9, -1.9], atol=1e-6)


def test_toy_config_validation():
    for kw in (dict(learning_rate=0), dict(channels=()), dict(lr_schedule="step"),
               dict(epochs=0), dict(head_harmonics=-1)):
        with pytest.raises(ConfigurationError):
            ToyModelConfig(**kw)


# -- datasets on disk -----------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    data = [synth_generate(SynthConfig(seed=s, duration_s=1.0)) for s in (0, 1)]
    manifest = write_dataset(tmp_path, data)
    assert [p.name for p, _ in read_manifest(manifest)] == ["piece000.wav", "piece001.wav"]
    loaded = load_dataset(manifest)
    for (a, notes_a), (b, notes_b) in zip(data, loaded):
        np.testing.assert_allclose(a.samples, b.samples, atol=1 / 32768)
        assert [(n.pitch, n.velocity) for n in notes_a] == [(n.pitch, n.velocity) for n in notes_b]


def test_bad_manifest(tmp_path):
    path = tmp_path / "m.json"
    path.write_text('{"pairs": [{"wav": "x.wav"}]}')
    with pytest.raises(InvalidInputError, match="entry 0"):
        read_manifest(path)
    with pytest.raises(InvalidInputError):
        read_manifest(tmp_path / "missing.json")
