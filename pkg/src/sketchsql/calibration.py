"""Value matching that grounds SQL predicates in live database content.

A generated query often compares a column against a literal that is close
to, but not exactly, what the database stores ("timmothy" vs "timmy").
This module scores candidate database values against the query's literal
with a pluggable similarity backend and searches at widening scopes —
first the predicate's own column, then its table, then the whole
database — stopping at the first scope whose best score clears the
threshold.  The winners are packaged as replacement suggestions.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import EmptyValueError, EncoderUnavailableError
from .sql_analysis import (
    OP_LIKE,
    ParsedQuery,
    Predicate,
    alias_map,
    extract_predicates,
    from_tables,
    merge_like_pattern,
    split_like_pattern,
)

log = logging.getLogger(__name__)

DEFAULT_SIMILARITY_THRESHOLD = 0.65
DEFAULT_SCAN_CAP = 10_000

_WORD = re.compile(r"[0-9a-z]+")


# --------------------------------------------------------------------------
# Character-level similarity

def _lcs_length(a: str, b: str) -> int:
    """Length of the longest common subsequence, bit-parallel over ``a``."""
    masks: dict[str, int] = {}
    for i, ch in enumerate(a):
        masks[ch] = masks.get(ch, 0) | (1 << i)
    row = 0
    full = (1 << len(a)) - 1
    for ch in b:
        x = row | masks.get(ch, 0)
        row = x & ~(x - ((row << 1) | 1)) & full
    return row.bit_count()


def fuzzy_similarity(a: str, b: str) -> float:
    """Character-level similarity in [0,1], case-insensitive and trimmed.

    Uses the insertion/deletion edit distance normalized by the shorter
    length: 1 - (len(a) + len(b) - 2*LCS(a,b)) / min(len(a), len(b)),
    clamped to [0,1] since the raw ratio can go negative for very
    dissimilar strings of different lengths.
    """
    a = a.strip().lower()
    b = b.strip().lower()
    if not a or not b:
        raise EmptyValueError("fuzzy similarity requires non-empty strings")
    if a == b:
        return 1.0
    indel = len(a) + len(b) - 2 * _lcs_length(a, b)
    return max(0.0, min(1.0, 1.0 - indel / min(len(a), len(b))))


# --------------------------------------------------------------------------
# Word-embedding similarity

@dataclass
class EmbeddingTable:
    """Word vectors loaded from a text file (token then D numbers per line)."""

    dimension: int
    entries: dict

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        dimension = None
        entries: dict[str, np.ndarray] = {}
        skipped = 0
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                parts = line.split()
                if not parts:
                    continue
                token, numbers = parts[0], parts[1:]
                if dimension is None:
                    if not numbers:
                        skipped += 1
                        continue
                    dimension = len(numbers)
                if len(numbers) != dimension:
                    skipped += 1
                    continue
                try:
                    vector = np.array([float(x) for x in numbers], dtype=np.float64)
                except ValueError:
                    skipped += 1
                    continue
                entries[token.lower()] = vector
        if skipped:
            log.warning("skipped %d malformed line(s) in word-vector file %s",
                        skipped, path)
        if not entries:
            raise ValueError(f"word-vector file {path} contains no usable entries")
        return cls(dimension, entries)

    def __contains__(self, token: str) -> bool:
        return token in self.entries


def _tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def _mean_vector(text: str, table: EmbeddingTable) -> np.ndarray | None:
    vectors = [table.entries[tok] for tok in _tokens(text) if tok in table.entries]
    if not vectors:
        return None
    mean = np.mean(vectors, axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        return None
    return mean / norm


def embedding_similarity(a: str, b: str, table: EmbeddingTable) -> float:
    """Cosine similarity of averaged word vectors, clamped to [0,1].

    When either side has no in-vocabulary tokens (or the average vector is
    zero), falls back to :func:`fuzzy_similarity`.
    """
    va = _mean_vector(a, table)
    vb = _mean_vector(b, table)
    if va is None or vb is None:
        return fuzzy_similarity(a, b)
    return float(max(0.0, min(1.0, np.dot(va, vb))))


# --------------------------------------------------------------------------
# Sentence-encoder similarity

def sentence_similarity(a: str, b: str, encoder) -> float:
    """Clamped cosine similarity of sentence encodings.

    ``encoder`` is any object with ``encode(texts) -> list of vectors``;
    encoding failures surface as :class:`EncoderUnavailableError`.
    """
    va, vb = (np.asarray(v, dtype=np.float64) for v in encoder.encode([a, b]))
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        log.warning("sentence encoder returned a zero vector; scoring 0.0")
        return 0.0
    return float(max(0.0, min(1.0, np.dot(va / na, vb / nb))))


# --------------------------------------------------------------------------
# Similarity backends

class CharacterFuzzy:
    kind = "CharacterFuzzy"

    def score(self, a: str, b: str) -> float:
        return fuzzy_similarity(a, b)


class WordEmbedding:
    kind = "WordEmbedding"

    def __init__(self, table: EmbeddingTable):
        self.table = table

    def score(self, a: str, b: str) -> float:
        return embedding_similarity(a, b, self.table)


class SentenceEncoder:
    """Sentence-encoder backend, optionally degrading to character fuzz.

    With ``fallback_to_fuzzy`` (the default), an unreachable encoder logs
    one warning and scores with :func:`fuzzy_similarity` instead of
    failing the whole calibration pass.
    """

    kind = "SentenceEncoder"

    def __init__(self, encoder, fallback_to_fuzzy: bool = True):
        self.encoder = encoder
        self.fallback_to_fuzzy = fallback_to_fuzzy
        self._warned = False

    def score(self, a: str, b: str) -> float:
        try:
            return sentence_similarity(a, b, self.encoder)
        except EncoderUnavailableError:
            if not self.fallback_to_fuzzy:
                raise
            if not self._warned:
                log.warning("sentence encoder unavailable; falling back to "
                            "character fuzzy matching")
                self._warned = True
            return fuzzy_similarity(a, b)


# --------------------------------------------------------------------------
# Multi-level matching

class MatchLevel(IntEnum):
    COLUMN = 1
    TABLE = 2
    DATABASE = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class MatchResult:
    """The best database value found for one predicate.

    ``value`` occurs verbatim in ``column`` of the live database.
    ``below_threshold`` marks matches reported only because nothing
    cleared the similarity threshold at any level.
    """

    column: str
    value: str
    score: float
    level: MatchLevel
    below_threshold: bool = False


@dataclass(frozen=True)
class CalibrationFeedback:
    """Replacement suggestions: one (predicate, match) pair per predicate
    that produced any candidate values."""

    replacements: tuple = ()

    def __bool__(self) -> bool:
        return bool(self.replacements)

    def proposes_change(self) -> bool:
        """True when at least one suggestion differs from its predicate."""
        return any(not is_identity_replacement(pred, match)
                   for pred, match in self.replacements)


def bare_column_name(text: str) -> str:
    """Strip any table/alias qualifier from a column reference."""
    return text.split(".")[-1]


def is_identity_replacement(pred: Predicate, match: MatchResult) -> bool:
    """True when ``match`` proposes exactly what the predicate already says
    (same column ignoring qualifier and case, same matched value)."""
    return (bare_column_name(pred.column).lower() == match.column.lower()
            and _match_value(pred) == match.value)


def _match_value(pred: Predicate) -> str:
    """The text actually scored: LIKE patterns lose boundary wildcards."""
    if pred.operator == OP_LIKE:
        return split_like_pattern(pred.value)[1]
    return pred.value


def replacement_value(pred: Predicate, match: MatchResult) -> str:
    """The literal a rewrite should install for this match.

    For LIKE predicates the original boundary wildcards are re-applied
    around the matched database value.
    """
    if pred.operator == OP_LIKE:
        lead, _, trail = split_like_pattern(pred.value)
        return merge_like_pattern(lead, match.value, trail)
    return match.value


def _resolve_column(db_schema, query: ParsedQuery, column_text: str):
    """Resolve a predicate's column reference to (table name, column name).

    Returns None when the reference does not resolve against the schema.
    Qualified references go through the query's alias map; bare names are
    searched across the query's FROM tables in appearance order.
    """
    aliases = alias_map(query)
    if "." in column_text:
        qualifier, column = column_text.split(".", 1)
        table = aliases.get(qualifier.lower(), qualifier)
        ti = db_schema.table_index(table)
        if ti is None:
            return None
        if db_schema.tables[ti].column_index(column) is None:
            return None
        return db_schema.tables[ti].name, column
    for table in from_tables(query):
        ti = db_schema.table_index(table)
        if ti is None:
            continue
        if db_schema.tables[ti].column_index(column_text) is not None:
            return db_schema.tables[ti].name, column_text
    return None


def candidate_values(level: MatchLevel, db, predicate: Predicate,
                     query: ParsedQuery, scan_cap: int = DEFAULT_SCAN_CAP) -> list:
    """Gather (column, value) candidates for one predicate at one level.

    Column level scans only the predicate's own column; Table level scans
    every column of the owning table (every FROM table when the column
    does not resolve); Database level scans every column of every table.
    Only values stored as text are returned, so the Database candidate set
    always contains the Table set, which contains the Column set.
    """
    schema = db.schema
    resolved = _resolve_column(schema, query, predicate.column)

    if level == MatchLevel.COLUMN:
        if resolved is None:
            return []
        table, column = resolved
        return [(column, v) for v in db.distinct_text_values(table, column, scan_cap)]

    if level == MatchLevel.TABLE:
        if resolved is not None:
            tables = [resolved[0]]
        else:
            known = {t.name.lower() for t in schema.tables}
            tables = [t for t in from_tables(query) if t.lower() in known]
    else:
        tables = [t.name for t in schema.tables]

    out = []
    for table in tables:
        ti = schema.table_index(table)
        for col in schema.tables[ti].columns:
            out.extend((col.name, v)
                       for v in db.distinct_text_values(table, col.name, scan_cap))
    return out


def best_match(candidates: list, value0: str, backend,
               level: MatchLevel = MatchLevel.COLUMN) -> MatchResult | None:
    """Best-scoring candidate against ``value0``, or None when empty.

    Ties break toward the column appearing earliest in ``candidates``,
    then the lexicographically smaller value.
    """
    best_key = None
    best: MatchResult | None = None
    column_order: dict[str, int] = {}
    for column, value in candidates:
        column_order.setdefault(column, len(column_order))
        try:
            score = backend.score(value0, value)
        except EmptyValueError:
            continue
        key = (-score, column_order[column], value)
        if best_key is None or key < best_key:
            best_key = key
            best = MatchResult(column, value, score, level)
    return best


def _match_predicate(db, query: ParsedQuery, predicate: Predicate, r: float,
                     backend, levels, scan_cap: int) -> MatchResult | None:
    value0 = _match_value(predicate)
    if not value0.strip():
        return None
    overall: MatchResult | None = None
    for level in levels:
        candidates = candidate_values(level, db, predicate, query, scan_cap)
        result = best_match(candidates, value0, backend, level)
        if result is None:
            continue
        if result.score >= r:
            return result
        # Strict > keeps the earliest level on score ties across levels.
        if overall is None or result.score > overall.score:
            overall = result
    if overall is None:
        return None
    return MatchResult(overall.column, overall.value, overall.score,
                       overall.level, below_threshold=True)


def _run_match(db, query: ParsedQuery, r: float, backend, levels,
               scan_cap: int) -> CalibrationFeedback:
    if not 0 < r <= 1:
        raise ValueError(f"similarity threshold must be in (0, 1], got {r}")
    replacements = []
    for predicate in extract_predicates(query):
        result = _match_predicate(db, query, predicate, r, backend, levels, scan_cap)
        if result is not None:
            replacements.append((predicate, result))
    return CalibrationFeedback(tuple(replacements))


def multi_level_match(db, query: ParsedQuery, r: float, backend,
                      scan_cap: int = DEFAULT_SCAN_CAP) -> CalibrationFeedback:
    """Match every text predicate of ``query`` against database content.

    Levels widen Column -> Table -> Database, stopping at the first whose
    best score reaches ``r``; when none does, the overall best match is
    reported with ``below_threshold`` set.
    """
    return _run_match(db, query, r, backend,
                      (MatchLevel.COLUMN, MatchLevel.TABLE, MatchLevel.DATABASE),
                      scan_cap)


def single_level_match(db, query: ParsedQuery, r: float, backend,
                       level: MatchLevel,
                       scan_cap: int = DEFAULT_SCAN_CAP) -> CalibrationFeedback:
    """Ablation variant of :func:`multi_level_match` fixed to one level."""
    return _run_match(db, query, r, backend, (level,), scan_cap)
