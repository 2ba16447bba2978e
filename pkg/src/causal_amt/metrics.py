"""Note-level precision, recall and F1 under one-to-one matching.

A reference note and an estimated note may be paired when their pitches are
equal and their onsets lie within the onset tolerance; with the offset
criterion their offsets must also agree to within
``max(offset_min_ms, offset_ratio * reference duration)``. Distances are
rounded to 7 decimals before comparison so that tolerances behave the same
for float noise as the standard evaluation toolkit.
"""

from __future__ import annotations

import csv
import functools
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .decoder import NoteEvent, read_notes
from .errors import ConfigurationError, InvalidInputError

DISTANCE_DECIMALS = 7
BRUTE_FORCE_LIMIT = 16
CRITERIA = ("onset", "onset_offset")
CSV_COLUMNS = ("piece", "tolerance_ms", "criterion", "precision", "recall", "f1")


@dataclass(frozen=True)
class Tolerance:
    onset_ms: float = 50.0
    with_offset: bool = False
    offset_ratio: float = 0.2
    offset_min_ms: float | None = None

    def __post_init__(self):
        if not self.onset_ms > 0:
            raise ConfigurationError(f"onset tolerance must be positive, got {self.onset_ms} ms")
        if not 0.0 <= self.offset_ratio <= 1.0:
            raise ConfigurationError(f"offset_ratio must lie in [0, 1], got {self.offset_ratio}")
        if self.offset_min_ms is not None and self.offset_min_ms < 0:
            raise ConfigurationError(f"offset_min_ms must be >= 0, got {self.offset_min_ms}")

    @property
    def offset_floor_ms(self) -> float:
        return self.onset_ms if self.offset_min_ms is None else self.offset_min_ms

    @property
    def criterion(self) -> str:
        return "onset_offset" if self.with_offset else "onset"


@dataclass(frozen=True)
class MatchResult:
    precision: float
    recall: float
    f1: float
    pairs: tuple[tuple[int, int], ...]

    @property
    def n_matched(self) -> int:
        return len(self.pairs)


def _check_notes(notes, role: str) -> list[NoteEvent]:
    out = []
    for i, note in enumerate(notes):
        if not isinstance(note, NoteEvent):
            raise InvalidInputError(f"{role} note {i} is not a NoteEvent: {note!r}")
        out.append(note)
    return out


def candidate_matrix(ref, est, tol: Tolerance) -> np.ndarray:
    """Boolean ``(len(ref), len(est))`` matrix of admissible pairs."""
    ref = _check_notes(ref, "reference")
    est = _check_notes(est, "estimated")
    if not ref or not est:
        return np.zeros((len(ref), len(est)), dtype=bool)
    r_on = np.array([n.onset for n in ref])
    r_off = np.array([n.offset for n in ref])
    r_pitch = np.array([n.pitch for n in ref])
    e_on = np.array([n.onset for n in est])
    e_off = np.array([n.offset for n in est])
    e_pitch = np.array([n.pitch for n in est])

    onset_dist = np.round(np.abs(r_on[:, None] - e_on[None, :]), DISTANCE_DECIMALS)
    ok = (r_pitch[:, None] == e_pitch[None, :]) & (onset_dist <= tol.onset_ms / 1000.0)
    if tol.with_offset:
        offset_dist = np.round(np.abs(r_off[:, None] - e_off[None, :]), DISTANCE_DECIMALS)
        limit = np.maximum(tol.offset_floor_ms / 1000.0, tol.offset_ratio * (r_off - r_on))
        ok &= offset_dist <= limit[:, None]
    return ok


def _prf(n_matched: int, n_ref: int, n_est: int) -> tuple[float, float, float]:
    precision = n_matched / n_est if n_est else 0.0
    recall = n_matched / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def match_notes(ref, est, tol: Tolerance | None = None) -> MatchResult:
    """Maximum-cardinality matching of estimated to reference notes."""
    tol = tol or Tolerance()
    edges = candidate_matrix(ref, est, tol)
    pairs: list[tuple[int, int]] = []
    if edges.any():
        assignment = maximum_bipartite_matching(csr_matrix(edges.astype(np.int8)),
                                                perm_type="column")
        pairs = [(int(r), int(e)) for r, e in enumerate(assignment) if e >= 0]
    return MatchResult(*_prf(len(pairs), *edges.shape), tuple(pairs))


def brute_force_match(ref, est, tol: Tolerance | None = None) -> int:
    """Exact maximum matching size by exhaustive search (small inputs only)."""
    tol = tol or Tolerance()
    if len(ref) + len(est) > BRUTE_FORCE_LIMIT:
        raise InvalidInputError(
            f"brute force is limited to {BRUTE_FORCE_LIMIT} notes in total, "
            f"got {len(ref)} + {len(est)}")
    edges = candidate_matrix(ref, est, tol)
    options = [tuple(np.flatnonzero(row)) for row in edges]

    @functools.lru_cache(maxsize=None)
    def best(i: int, used: int) -> int:
        if i == len(options):
            return 0
        result = best(i + 1, used)
        for j in options[i]:
            if not used >> j & 1:
                result = max(result, 1 + best(i + 1, used | 1 << j))
        return result

    return best(0, 0)


@dataclass(frozen=True)
class CorpusRow:
    piece: str
    tolerance_ms: float
    criterion: str
    precision: float
    recall: float
    f1: float


def _tolerance_pairs(tolerances_ms, offset_min_ms, offset_ratio):
    for tol_ms in tolerances_ms:
        for with_offset in (False, True):
            yield Tolerance(float(tol_ms), with_offset, offset_ratio, offset_min_ms)


def evaluate_corpus(pairs, tolerances_ms=(10, 20, 30), offset_min_ms: float | None = None,
                    offset_ratio: float = 0.2) -> list[CorpusRow]:
    """Per-piece scores followed by ``mean`` and ``std`` rows.

    ``pairs`` holds ``(piece, ref_path, est_path)`` triples. The spread is the
    population standard deviation over pieces.
    """
    pieces = []
    for piece, ref_path, est_path in pairs:
        pieces.append((piece, read_notes(ref_path), read_notes(est_path)))
    if not pieces:
        raise InvalidInputError("no pieces to evaluate")

    rows: list[CorpusRow] = []
    aggregate: list[CorpusRow] = []
    for tol in _tolerance_pairs(tolerances_ms, offset_min_ms, offset_ratio):
        scores = []
        for piece, ref, est in pieces:
            res = match_notes(ref, est, tol)
            rows.append(CorpusRow(piece, tol.onset_ms, tol.criterion,
                                  res.precision, res.recall, res.f1))
            scores.append((res.precision, res.recall, res.f1))
        values = np.array(scores)
        aggregate.append(CorpusRow("mean", tol.onset_ms, tol.criterion, *values.mean(axis=0)))
        aggregate.append(CorpusRow("std", tol.onset_ms, tol.criterion, *values.std(axis=0)))
    rows.sort(key=lambda r: (r.piece, r.tolerance_ms, CRITERIA.index(r.criterion)))
    return rows + aggregate


def pair_directories(ref_dir, est_dir, suffix: str = ".tsv") -> list[tuple[str, Path, Path]]:
    """Pair note lists by file name; every reference needs an estimate."""
    ref_dir, est_dir = Path(ref_dir), Path(est_dir)
    for d in (ref_dir, est_dir):
        if not d.is_dir():
            raise InvalidInputError(f"not a directory: {d}")
    refs = sorted(ref_dir.glob(f"*{suffix}"))
    if not refs:
        raise InvalidInputError(f"no {suffix} note lists in {ref_dir}")
    out = []
    for ref in refs:
        est = est_dir / ref.name
        if not est.is_file():
            raise InvalidInputError(f"missing estimate for {ref.name}: {est}")
        out.append((ref.stem, ref, est))
    return out


def format_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([r.piece, f"{r.tolerance_ms:g}", r.criterion,
                         f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.f1:.6f}"])
    return buf.getvalue()


def write_csv(path, rows) -> None:
    Path(path).write_text(format_csv(rows), encoding="utf-8")
