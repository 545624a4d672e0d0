"""Dialogue corpus model: records, file format, splits, annotation merging.

A corpus is a list of dialogue instances, each pairing a multi-speaker
dialogue with aligned audio/video feature matrices and a gold sarcasm
explanation plus its structured attributes (source speaker, target,
action word, optional description).

File format: one JSON record per line with fields exactly
``id, utterances, audio_features, video_features, explanation,
sarcasm_source, sarcasm_target, action_word, description`` (description is
nullable). A feature field holds either the matrix inline (list of rows)
or a relative path to a binary sidecar file: uint64 row count, uint64
column count, then row-major float64 values, all little-endian.
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ParseError, ValidationError
from .text import tokenize

__all__ = [
    "Utterance",
    "DialogueInstance",
    "DatasetSplit",
    "MergeOutcome",
    "load_and_validate",
    "save_corpus",
    "read_matrix_file",
    "write_matrix_file",
    "validate_instance",
    "split",
    "instances_for",
    "merge_annotations",
    "cosine_token_similarity",
    "corpus_stats",
    "CorpusStats",
]

# raw feature widths of the real-scale corpora this schema mirrors
# (audio prosody functionals, video CNN window descriptors); the loader
# itself accepts any consistent widths
REAL_AUDIO_DIM = 154
REAL_VIDEO_DIM = 2048

_FIELDS = (
    "id",
    "utterances",
    "audio_features",
    "video_features",
    "explanation",
    "sarcasm_source",
    "sarcasm_target",
    "action_word",
    "description",
)


@dataclass
class Utterance:
    speaker: str
    text: str


@dataclass
class DialogueInstance:
    """One dialogue with aligned modality features and explanation labels."""

    id: str
    utterances: list[Utterance]
    audio_features: np.ndarray
    video_features: np.ndarray
    explanation: str
    sarcasm_source: str
    sarcasm_target: str
    action_word: str
    description: str | None = None

    def speakers(self) -> list[str]:
        return [u.speaker for u in self.utterances]


# ---- validation ------------------------------------------------------------


def _require(cond: bool, field_name: str, rule: str, detail: str, line: int | None) -> None:
    if not cond:
        raise ValidationError(detail, field=field_name, rule=rule, line=line)


def validate_instance(inst: DialogueInstance, line: int | None = None) -> None:
    """Raise ValidationError naming the field and rule on the first breach."""
    _require(bool(inst.id), "id", "non-empty", "instance id is empty", line)
    _require(len(inst.utterances) >= 2, "utterances", "at-least-two",
             f"got {len(inst.utterances)} utterance(s)", line)
    for i, u in enumerate(inst.utterances):
        _require(bool(u.speaker), "utterances", "speaker-non-empty",
                 f"utterance {i} has an empty speaker", line)
        _require(bool(u.text.strip()), "utterances", "text-non-empty",
                 f"utterance {i} has empty text", line)
    _require(inst.sarcasm_source in inst.speakers(), "sarcasm_source", "source-is-a-speaker",
             f"'{inst.sarcasm_source}' does not appear among utterance speakers", line)
    _require(bool(inst.explanation.strip()), "explanation", "non-empty", "explanation is empty", line)
    _require(bool(inst.sarcasm_target), "sarcasm_target", "non-empty", "target is empty", line)
    _require(bool(inst.action_word), "action_word", "non-empty", "action word is empty", line)
    for name, mat in (("audio_features", inst.audio_features), ("video_features", inst.video_features)):
        _require(mat.ndim == 2, name, "matrix", f"expected a 2-D matrix, got ndim={mat.ndim}", line)
        _require(mat.shape[0] >= 1 and mat.shape[1] >= 1, name, "non-empty",
                 f"got shape {mat.shape}; a silent modality must be one all-zero frame", line)
        _require(bool(np.isfinite(mat).all()), name, "finite",
                 "matrix contains NaN or infinite values", line)


# ---- binary sidecar matrices ------------------------------------------------

_HEADER = struct.Struct("<QQ")


def write_matrix_file(path: str | Path, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(matrix, dtype="<f8")
    if arr.ndim != 2:
        raise ContractError(f"sidecar matrices are 2-D, got ndim={arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_matrix_file(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(f"sidecar file '{path}' is too short for a header")
    rows, cols = _HEADER.unpack_from(raw)
    expected = _HEADER.size + rows * cols * 8
    if len(raw) != expected:
        raise ParseError(
            f"sidecar file '{path}' declares {rows}x{cols} but holds {len(raw) - _HEADER.size} bytes"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return flat.reshape(rows, cols).astype(np.float64)


# ---- corpus file i/o ---------------------------------------------------------


def _matrix_from_field(value, field_name: str, base: Path, line: int) -> np.ndarray:
    if isinstance(value, str):
        target = base / value
        if not target.exists():
            raise ParseError(f"{field_name} sidecar '{value}' not found next to the corpus", line)
        return read_matrix_file(target)
    if isinstance(value, list):
        try:
            arr = np.asarray(value, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{field_name} is not a numeric matrix: {exc}", line) from None
        if arr.ndim != 2:
            raise ParseError(f"{field_name} must be a list of equal-length rows", line)
        return arr
    raise ParseError(f"{field_name} must be a matrix or a sidecar path, got {type(value).__name__}", line)


def _instance_from_record(rec: dict, base: Path, line: int) -> DialogueInstance:
    if not isinstance(rec, dict):
        raise ParseError(f"record is not an object, got {type(rec).__name__}", line)
    missing = [f for f in _FIELDS if f not in rec]
    if missing:
        raise ParseError(f"missing field(s) {missing}", line)
    unknown = [k for k in rec if k not in _FIELDS]
    if unknown:
        raise ParseError(f"unknown field(s) {unknown}", line)
    utts_raw = rec["utterances"]
    if not isinstance(utts_raw, list):
        raise ParseError("utterances must be a list of {speaker, text} objects", line)
    utterances = []
    for i, u in enumerate(utts_raw):
        if not isinstance(u, dict) or set(u) != {"speaker", "text"}:
            raise ParseError(f"utterance {i} must be an object with exactly speaker and text", line)
        utterances.append(Utterance(speaker=str(u["speaker"]), text=str(u["text"])))
    desc = rec["description"]
    if desc is not None and not isinstance(desc, str):
        raise ParseError("description must be a string or null", line)
    return DialogueInstance(
        id=str(rec["id"]),
        utterances=utterances,
        audio_features=_matrix_from_field(rec["audio_features"], "audio_features", base, line),
        video_features=_matrix_from_field(rec["video_features"], "video_features", base, line),
        explanation=str(rec["explanation"]),
        sarcasm_source=str(rec["sarcasm_source"]),
        sarcasm_target=str(rec["sarcasm_target"]),
        action_word=str(rec["action_word"]),
        description=desc,
    )


def load_and_validate(path: str | Path) -> list[DialogueInstance]:
    """Parse a corpus file and validate every record.

    Parse failures raise ParseError and invariant breaches ValidationError,
    both carrying the 1-based line number. Duplicate ids are rejected.
    """
    path = Path(path)
    base = path.parent
    instances: list[DialogueInstance] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
            inst = _instance_from_record(rec, base, line_no)
            validate_instance(inst, line=line_no)
            if inst.id in seen_ids:
                raise ValidationError(f"id '{inst.id}' appears more than once",
                                      field="id", rule="unique", line=line_no)
            seen_ids.add(inst.id)
            instances.append(inst)
    return instances


def save_corpus(instances: Iterable[DialogueInstance], path: str | Path) -> None:
    """Write instances one JSON record per line, feature matrices inline."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {
                "id": inst.id,
                "utterances": [{"speaker": u.speaker, "text": u.text} for u in inst.utterances],
                "audio_features": inst.audio_features.tolist(),
                "video_features": inst.video_features.tolist(),
                "explanation": inst.explanation,
                "sarcasm_source": inst.sarcasm_source,
                "sarcasm_target": inst.sarcasm_target,
                "action_word": inst.action_word,
                "description": inst.description,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---- splitting ----------------------------------------------------------------


@dataclass
class DatasetSplit:
    """Disjoint id lists covering the corpus, in 80:10:10 proportion."""

    train: list[str]
    validation: list[str]
    test: list[str]


def split(corpus: Sequence[DialogueInstance], seed: int) -> DatasetSplit:
    """Seeded shuffle, then floor(0.8 N) / floor(0.1 N) / remainder by id."""
    n = len(corpus)
    if n < 10:
        raise ContractError(f"need at least 10 instances to split, got {n}")
    ids = [inst.id for inst in corpus]
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_train = (8 * n) // 10
    n_val = n // 10
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
    )


def instances_for(corpus: Sequence[DialogueInstance], ids: Sequence[str]) -> list[DialogueInstance]:
    by_id = {inst.id: inst for inst in corpus}
    return [by_id[i] for i in ids]


# ---- annotation merging ---------------------------------------------------------


@dataclass
class MergeOutcome:
    """Result of reconciling two candidate explanations.

    Exactly one of ``chosen`` / ``conflict`` is set: above the similarity
    threshold the shorter annotation wins; otherwise both are surfaced for
    external resolution.
    """

    similarity: float
    chosen: str | None = None
    conflict: tuple[str, str] | None = None


def cosine_token_similarity(a: str, b: str) -> float:
    """Cosine between token-count vectors under the shared tokenizer."""
    ca, cb = Counter(tokenize(a)), Counter(tokenize(b))
    if not ca or not cb:
        return 0.0
    dot = sum(ca[t] * cb[t] for t in ca.keys() & cb.keys())
    na = math.sqrt(sum(v * v for v in ca.values()))
    nb = math.sqrt(sum(v * v for v in cb.values()))
    return dot / (na * nb)


def merge_annotations(a: str, b: str, threshold: float = 0.9) -> MergeOutcome:
    """Merge two explanation annotations of the same instance.

    Similarity strictly above ``threshold`` selects the annotation with
    fewer tokens (ties: fewer characters, then the first argument);
    anything at or below the threshold is reported as a conflict.
    """
    if not a.strip() or not b.strip():
        raise ContractError("merge_annotations requires two non-empty annotations")
    sim = cosine_token_similarity(a, b)
    if sim > threshold:
        ta, tb = len(tokenize(a)), len(tokenize(b))
        if ta != tb:
            chosen = a if ta < tb else b
        elif len(a) != len(b):
            chosen = a if len(a) < len(b) else b
        else:
            chosen = a
        return MergeOutcome(similarity=sim, chosen=chosen)
    return MergeOutcome(similarity=sim, conflict=(a, b))


# ---- corpus statistics ------------------------------------------------------------


@dataclass
class CorpusStats:
    num_dialogues: int
    num_utterances: int
    avg_utterances_per_dialogue: float
    avg_words_per_utterance: float
    avg_words_per_dialogue: float
    avg_speakers_per_dialogue: float
    vocabulary_size: int
    utterance_count_histogram: dict[int, int] = field(default_factory=dict)
    explanation_length_histogram: dict[int, int] = field(default_factory=dict)
    source_speaker_counts: dict[str, int] = field(default_factory=dict)
    target_counts: dict[str, int] = field(default_factory=dict)

    def render(self) -> str:
        lines = [
            f"dialogues                 {self.num_dialogues}",
            f"utterances                {self.num_utterances}",
            f"utterances per dialogue   {self.avg_utterances_per_dialogue:.2f}",
            f"words per utterance       {self.avg_words_per_utterance:.2f}",
            f"words per dialogue        {self.avg_words_per_dialogue:.2f}",
            f"speakers per dialogue     {self.avg_speakers_per_dialogue:.2f}",
            f"vocabulary size           {self.vocabulary_size}",
        ]
        return "\n".join(lines)


def corpus_stats(corpus: Sequence[DialogueInstance]) -> CorpusStats:
    if not corpus:
        raise ContractError("corpus_stats needs at least one instance")
    num_utts = 0
    total_words = 0
    speakers_total = 0
    vocab: set[str] = set()
    utt_hist: Counter = Counter()
    expl_hist: Counter = Counter()
    sources: Counter = Counter()
    targets: Counter = Counter()
    for inst in corpus:
        num_utts += len(inst.utterances)
        utt_hist[len(inst.utterances)] += 1
        speakers_total += len(set(inst.speakers()))
        for u in inst.utterances:
            toks = tokenize(u.text)
            total_words += len(toks)
            vocab.update(toks)
            vocab.add(u.speaker.lower())
        expl_toks = tokenize(inst.explanation)
        expl_hist[len(expl_toks)] += 1
        vocab.update(expl_toks)
        sources[inst.sarcasm_source] += 1
        targets[inst.sarcasm_target] += 1
    n = len(corpus)
    return CorpusStats(
        num_dialogues=n,
        num_utterances=num_utts,
        avg_utterances_per_dialogue=num_utts / n,
        avg_words_per_utterance=total_words / num_utts,
        avg_words_per_dialogue=total_words / n,
        avg_speakers_per_dialogue=speakers_total / n,
        vocabulary_size=len(vocab),
        utterance_count_histogram=dict(sorted(utt_hist.items())),
        explanation_length_histogram=dict(sorted(expl_hist.items())),
        source_speaker_counts=dict(sorted(sources.items())),
        target_counts=dict(sorted(targets.items())),
    )
