"""Shared generators and independent oracles for the test suite."""

import itertools

from causal_amt.decoder import NoteEvent

# criterion number -> (passed, one-line summary); printed at the end of the run
ACCEPTANCE_RESULTS = {}


def record(number, ok, summary):
    ACCEPTANCE_RESULTS[number] = (bool(ok), summary)
    assert ok, summary


def random_notes(rng, n, pitches=(60, 61, 62), grid_ms=5, span_ms=120):
    # Onsets on a coarse grid put many pairs exactly at the tolerance boundary.
    notes = []
    for _ in range(n):
        onset = int(rng.integers(0, span_ms // grid_ms + 1)) * grid_ms / 1000
        dur = int(rng.integers(1, 40)) * grid_ms / 1000
        notes.append(NoteEvent(int(rng.choice(pitches)), onset, onset + dur, 64))
    return notes


def admissible(r, e, onset_ms, with_offset, ratio=0.2, floor_ms=None):
    floor_ms = onset_ms if floor_ms is None else floor_ms
    if r.pitch != e.pitch:
        return False
    if round(abs(r.onset - e.onset) * 1000, 4) > onset_ms:
        return False
    if with_offset:
        limit = max(floor_ms, ratio * (r.offset - r.onset) * 1000)
        if round(abs(r.offset - e.offset) * 1000, 4) > round(limit, 4):
            return False
    return True


def oracle_matching(ref, est, onset_ms, with_offset, **kw):
    """Largest injective ref -> est assignment, by enumerating permutations."""
    small, large, swap = (ref, est, False) if len(ref) <= len(est) else (est, ref, True)
    best = 0
    for perm in itertools.permutations(range(len(large)), len(small)):
        count = 0
        for i, j in enumerate(perm):
            r, e = (large[j], small[i]) if swap else (small[i], large[j])
            count += admissible(r, e, onset_ms, with_offset, **kw)
        best = max(best, count)
    return best
