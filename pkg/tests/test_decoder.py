import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_amt.decoder import (DecoderConfig, DecoderState, NoteEvent, decode_all,
                                decode_noncausal_baseline, finalize, format_notes, parse_notes,
                                read_notes, sort_notes, step, write_notes)
from causal_amt.errors import (ConfigurationError, ContractViolationError, InvalidInputError,
                               ShapeMismatchError)
from causal_amt.model.network import HeadOutputs


def reference_decode(onset, frame, offset, velocity, cfg):
    """Frame-by-frame, pitch-by-pitch restatement of the causal rules."""
    n_frames, n_pitches = onset.shape
    gap = cfg.min_reonset_frames
    notes = []
    for p in range(n_pitches):
        active, start, vel, last = False, 0, 64, None
        for t in range(n_frames):
            prev_on = onset[t - 1, p] if t else 0.0
            prev_off = offset[t - 1, p] if (t and offset is not None) else 0.0
            edge = onset[t, p] >= cfg.onset_threshold > prev_on
            accept = edge and (last is None or t - last >= gap)
            off_edge = offset is not None and offset[t, p] >= cfg.offset_threshold > prev_off
            if active and (frame[t, p] < cfg.frame_threshold or off_edge or accept):
                notes.append((21 + p, start, t, vel))
                active = False
            if accept:
                active, start, last = True, t, t
                if velocity is not None:
                    vel = int(min(127, max(1, np.floor(127 * velocity[t, p] + 0.5))))
        if active:
            notes.append((21 + p, start, max(n_frames, start + 1), vel))
    return sorted((n[1] / cfg.frame_rate, n[0], n[2] / cfg.frame_rate, n[3]) for n in notes)


def as_tuples(notes):
    return sorted((n.onset, n.pitch, n.offset, n.velocity) for n in notes)


def one_pitch(onset, frame, offset=None, velocity=None, pitch=60, n_pitches=88):
    def widen(col):
        if col is None:
            return None
        m = np.zeros((len(col), n_pitches))
        m[:, pitch - 21] = col
        return m
    return widen(onset), widen(frame), widen(offset), widen(velocity)


def test_worked_example():
    onset, frame, _, vel = one_pitch([0.1, 0.5, 0.7, 0.3], [0.2, 0.9, 0.9, 0.2],
                                     velocity=[0.0, 0.5, 0.0, 0.0])
    cfg = DecoderConfig(onset_threshold=0.45, frame_threshold=0.5, frame_rate=100)
    notes = decode_all(onset, frame, None, vel, cfg)
    assert notes == [NoteEvent(60, 0.01, 0.03, 64)]


def test_silence_emits_nothing_and_keeps_state():
    state = DecoderState()
    before = state.snapshot()
    zero = np.zeros(88)
    assert step(state, HeadOutputs(zero, zero, zero, zero), 0) == []
    after = state.snapshot()
    for a, b in zip(before[:-1], after[:-1]):
        assert np.array_equal(a, b)
    assert finalize(state) == []


def test_reonset_suppressed_within_window():
    onset, frame, _, _ = one_pitch([0.9, 0.1, 0.9, 0.1, 0.1, 0.1], [1.0] * 6)
    notes = decode_all(onset, frame, config=DecoderConfig(min_reonset_ms=50))
    assert len(notes) == 1
    assert notes[0].onset == 0.0 and notes[0].offset == 0.06


def test_zero_reonset_disables_suppression():
    onset, frame, _, _ = one_pitch([0.9, 0.1, 0.9, 0.1], [1.0] * 4)
    notes = decode_all(onset, frame, config=DecoderConfig(min_reonset_ms=0))
    assert [(n.onset, n.offset) for n in sort_notes(notes)] == [(0.0, 0.02), (0.02, 0.04)]


def test_offset_edge_ends_note():
    onset, frame, offset, _ = one_pitch([0.9, 0, 0, 0, 0], [1.0] * 5, [0, 0, 0.8, 0.9, 0])
    notes = decode_all(onset, frame, offset)
    assert [(n.onset, n.offset) for n in notes] == [(0.0, 0.02)]


def test_note_open_at_last_frame_gets_one_frame():
    onset, frame, _, _ = one_pitch([0, 0, 0.9], [0, 0, 1.0])
    state = DecoderState()
    for t in range(3):
        step(state, HeadOutputs(onset[t], frame[t], np.zeros(88)), t)
    notes = finalize(state, 2)
    assert [(n.onset, n.offset) for n in notes] == [(0.02, 0.03)]


def test_all_ones_frames_single_spike_spans_to_end():
    onset, frame, _, _ = one_pitch([0, 0.9] + [0.0] * 8, [1.0] * 10)
    notes = decode_all(onset, frame)
    assert [(n.onset, n.offset) for n in notes] == [(0.01, 0.1)]


def test_out_of_order_frame_rejected():
    state = DecoderState()
    zero = np.zeros(88)
    step(state, HeadOutputs(zero, zero, zero), 0)
    with pytest.raises(ContractViolationError):
        step(state, HeadOutputs(zero, zero, zero), 2)


def test_shape_checks():
    with pytest.raises(ShapeMismatchError):
        decode_all(np.zeros((5, 88)), np.zeros((5, 87)))
    with pytest.raises(ShapeMismatchError):
        step(DecoderState(), HeadOutputs(np.zeros(80), np.zeros(88), np.zeros(88)), 0)


@pytest.mark.parametrize("kwargs", [dict(onset_threshold=0.0), dict(frame_threshold=1.0),
                                    dict(min_reonset_ms=-1), dict(frame_rate=0)])
def test_invalid_decoder_config(kwargs):
    with pytest.raises(ConfigurationError):
        DecoderConfig(**kwargs)


def random_probs(seed, n_frames=60, n_pitches=6):
    rng = np.random.default_rng(seed)
    # Sparse spikes on a low floor look more like real head outputs than iid noise.
    onset = np.where(rng.uniform(size=(n_frames, n_pitches)) < 0.15,
                     rng.uniform(0.3, 1, (n_frames, n_pitches)), rng.uniform(0, 0.3, (n_frames, n_pitches)))
    frame = rng.uniform(size=(n_frames, n_pitches)) ** 0.5
    offset = rng.uniform(size=(n_frames, n_pitches)) ** 3
    velocity = rng.uniform(size=(n_frames, n_pitches))
    return onset, frame, offset, velocity


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.0, 20.0, 50.0]), st.booleans())
@settings(max_examples=60, deadline=None)
def test_matches_reference_rules(seed, reonset, use_offset):
    onset, frame, offset, velocity = random_probs(seed)
    offset = offset if use_offset else None
    cfg = DecoderConfig(min_reonset_ms=reonset)
    assert as_tuples(decode_all(onset, frame, offset, velocity, cfg)) == \
        reference_decode(onset, frame, offset, velocity, cfg)


def test_decode_all_equals_step_fold_on_200_frames():
    onset, frame, offset, velocity = random_probs(11, n_frames=200, n_pitches=88)
    state = DecoderState()
    folded = []
    for t in range(200):
        folded += step(state, HeadOutputs(onset[t], frame[t], offset[t], velocity[t]), t)
    folded += finalize(state, 200)
    assert folded == decode_all(onset, frame, offset, velocity)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 59))
@settings(max_examples=40, deadline=None)
def test_online_purity(seed, cut):
    onset, frame, offset, velocity = random_probs(seed)
    cfg = DecoderConfig()

    def emitted_until(n_frames, probs):
        state = DecoderState(cfg, 6)
        out = []
        for t in range(n_frames):
            out += step(state, HeadOutputs(*(p[t] for p in probs)), t)
        return out

    full = emitted_until(60, (onset, frame, offset, velocity))
    rng = np.random.default_rng(seed + 1)
    altered = [p.copy() for p in (onset, frame, offset, velocity)]
    for p in altered:
        p[cut:] = rng.uniform(size=p[cut:].shape)
    prefix = emitted_until(cut, (onset, frame, offset, velocity))
    assert full[:len(prefix)] == prefix
    assert emitted_until(60, altered)[:len(prefix)] == prefix


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_per_pitch_notes_do_not_overlap(seed):
    onset, frame, offset, velocity = random_probs(seed)
    notes = decode_all(onset, frame, offset, velocity)
    for p in {n.pitch for n in notes}:
        mine = sorted((n for n in notes if n.pitch == p), key=lambda n: n.onset)
        for a, b in zip(mine, mine[1:]):
            assert a.offset <= b.onset
        assert all(n.offset > n.onset for n in mine)


def test_edge_count_is_not_monotone_in_general():
    # A dip between the two thresholds splits one run into two.
    onset, frame, _, _ = one_pitch([0.5, 0.3, 0.5], [1.0] * 3)
    lo = decode_all(onset, frame, config=DecoderConfig(onset_threshold=0.2, min_reonset_ms=0))
    hi = decode_all(onset, frame, config=DecoderConfig(onset_threshold=0.4, min_reonset_ms=0))
    assert (len(lo), len(hi)) == (1, 2)


def bump_train(seed, n_frames=80, n_pitches=6):
    # Isolated unimodal bumps separated by zeros.
    rng = np.random.default_rng(seed)
    onset = np.zeros((n_frames, n_pitches))
    for p in range(n_pitches):
        t = int(rng.integers(0, 4))
        while t + 5 < n_frames:
            width = int(rng.integers(1, 5))
            peak = rng.uniform(0.05, 1.0)
            rise = np.sort(rng.uniform(0, peak, width))
            fall = np.sort(rng.uniform(0, peak, width))[::-1]
            shape = np.concatenate([rise, [peak], fall])[:n_frames - t]
            onset[t:t + shape.size, p] = shape
            t += shape.size + int(rng.integers(1, 6))
    return onset


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.9), st.floats(0.0, 0.09))
@settings(max_examples=40, deadline=None)
def test_raising_threshold_never_adds_onsets_on_unimodal_bumps(seed, low, delta):
    onset = bump_train(seed)
    frame = np.ones_like(onset)
    hi = DecoderConfig(onset_threshold=low + delta, min_reonset_ms=0)
    lo = DecoderConfig(onset_threshold=low, min_reonset_ms=0)
    assert len(decode_all(onset, frame, config=hi)) <= len(decode_all(onset, frame, config=lo))


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.9), st.floats(0.0, 0.09))
@settings(max_examples=40, deadline=None)
def test_every_high_threshold_onset_lies_in_a_low_threshold_run(seed, low, delta):
    onset, frame, _, _ = random_probs(seed)
    frame = np.ones_like(frame)
    hi = decode_all(onset, frame, config=DecoderConfig(onset_threshold=low + delta, min_reonset_ms=0))
    lo = decode_all(onset, frame, config=DecoderConfig(onset_threshold=low, min_reonset_ms=0))
    lo_starts = {(n.pitch, round(n.onset * 100)) for n in lo}
    for n in hi:
        p, t = n.pitch - 21, round(n.onset * 100)
        s = t
        while s > 0 and onset[s - 1, p] >= low:
            s -= 1
        assert (n.pitch, s) in lo_starts


# -- non-causal baseline ---------------------------------------------------------

def test_symmetric_triangle_peak():
    onset, frame, _, _ = one_pitch([0.2, 0.6, 1.0, 0.6, 0.2], [1.0] * 5)
    notes = decode_noncausal_baseline(onset, frame)
    assert len(notes) == 1 and notes[0].onset == pytest.approx(0.02, abs=1e-12)


def test_asymmetric_triangle_refined_between_frames():
    onset, frame, _, _ = one_pitch([0.2, 0.5, 0.9, 1.0, 0.4], [1.0] * 5)
    notes = decode_noncausal_baseline(onset, frame)
    # vertex of the parabola through (2, 0.9), (3, 1.0), (4, 0.4)
    vertex = 3 + 0.5 * (0.9 - 0.4) / (0.9 - 2 * 1.0 + 0.4)
    assert len(notes) == 1
    assert notes[0].onset == pytest.approx(vertex / 100)
    assert 0.02 < notes[0].onset < 0.03


def test_plateau_has_no_peak():
    onset, frame, _, _ = one_pitch([0.9] * 6, [1.0] * 6)
    assert decode_noncausal_baseline(onset, frame) == []


def test_baseline_needs_three_frames():
    with pytest.raises(ShapeMismatchError):
        decode_noncausal_baseline(np.zeros((2, 88)), np.zeros((2, 88)))


# -- note list files ----------------------------------------------------------------

def test_tsv_format_and_round_trip(tmp_path):
    notes = [NoteEvent(64, 0.5, 1.0, 90), NoteEvent(60, 0.5, 0.75, 10), NoteEvent(62, 0.1, 0.2)]
    text = format_notes(notes)
    assert text.splitlines()[0] == "0.100000\t0.200000\t62\t64"
    assert text.splitlines()[1] == "0.500000\t0.750000\t60\t10"
    write_notes(tmp_path / "n.tsv", notes)
    assert read_notes(tmp_path / "n.tsv") == sort_notes(notes)
    assert parse_notes("") == []


def test_malformed_tsv(tmp_path):
    with pytest.raises(InvalidInputError, match=":1:"):
        parse_notes("0.1\t0.2\t60\n")
    with pytest.raises(InvalidInputError):
        parse_notes("0.3\t0.2\t60\t64\n")
    with pytest.raises(InvalidInputError, match="missing.tsv"):
        read_notes(tmp_path / "missing.tsv")


@pytest.mark.parametrize("args", [(20, 0.0, 1.0), (60, 1.0, 1.0), (60, 0.0, 1.0, 0),
                                  (60, float("nan"), 1.0)])
def test_note_event_invariants(args):
    with pytest.raises(InvalidInputError):
        NoteEvent(*args)
