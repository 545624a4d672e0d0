"""Generation metrics: n-gram overlap F1, LCS F1, clipped-precision BLEU,
and token-membership accuracy for structured explanation attributes.

All scorers share the package tokenizer, score a single reference per
hypothesis, and return fractions in [0, 1]; report tables convert to
percentages. Corpus scores are arithmetic means of per-instance scores.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ContractError
from .text import tokenize

__all__ = [
    "rouge_n",
    "rouge_l",
    "bleu_k",
    "source_target_accuracy",
    "score_corpus",
    "MetricReport",
    "METRIC_COLUMNS",
]

_SMOOTH_EPS = 1e-9


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def rouge_n(hyp: str, ref: str, n: int) -> float:
    """Clipped n-gram overlap F1 between one hypothesis and one reference."""
    if n < 1:
        raise ContractError(f"n-gram order must be >= 1, got {n}")
    h = _ngrams(tokenize(hyp), n)
    r = _ngrams(tokenize(ref), n)
    if not h or not r:
        return 0.0
    overlap = sum(min(c, r[g]) for g, c in h.items())
    return _f1(overlap / sum(h.values()), overlap / sum(r.values()))


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    # one-row dynamic program; O(len(a) * len(b))
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: str, ref: str) -> float:
    """Longest-common-subsequence F1."""
    h, r = tokenize(hyp), tokenize(ref)
    if not h or not r:
        return 0.0
    lcs = _lcs_len(h, r)
    return _f1(lcs / len(h), lcs / len(r))


def bleu_k(hyp: str, ref: str, k: int, smooth: bool = False) -> float:
    """BLEU with orders 1..k: geometric mean of clipped modified precisions
    times the brevity penalty exp(1 - |ref| / |hyp|) when the hypothesis is
    shorter. A zero precision zeroes the score unless ``smooth`` replaces it
    with a small epsilon.
    """
    if k < 1:
        raise ContractError(f"BLEU order must be >= 1, got {k}")
    h, r = tokenize(hyp), tokenize(ref)
    if not h:
        return 0.0
    precisions = []
    for n in range(1, k + 1):
        hg = _ngrams(h, n)
        total = sum(hg.values())
        if total == 0:
            p = 0.0
        else:
            rg = _ngrams(r, n)
            p = sum(min(c, rg[g]) for g, c in hg.items()) / total
        if p == 0.0:
            if not smooth:
                return 0.0
            p = _SMOOTH_EPS
        precisions.append(p)
    log_mean = sum(math.log(p) for p in precisions) / k
    bp = 1.0 if len(h) >= len(r) else math.exp(1.0 - len(r) / len(h))
    return bp * math.exp(log_mean)


def source_target_accuracy(hyps: Sequence[str], golds: Sequence) -> tuple[float, float]:
    """Fraction of hypotheses containing the gold source / target token(s).

    ``golds`` supplies ``sarcasm_source`` and ``sarcasm_target`` per item,
    either as attributes or as mapping keys. Matching is exact token
    membership after shared tokenization; multi-word golds must appear in
    full.
    """
    if len(hyps) != len(golds):
        raise ContractError(f"got {len(hyps)} hypotheses for {len(golds)} golds")
    if not hyps:
        raise ContractError("nothing to score")

    def pick(g, name: str) -> str:
        if isinstance(g, dict):
            return g[name]
        return getattr(g, name)

    def contains(hyp_tokens: list[str], gold: str) -> bool:
        want = tokenize(gold)
        return bool(want) and all(w in hyp_tokens for w in want)

    src_hits = tgt_hits = 0
    for hyp, gold in zip(hyps, golds):
        toks = tokenize(hyp)
        src_hits += contains(toks, pick(gold, "sarcasm_source"))
        tgt_hits += contains(toks, pick(gold, "sarcasm_target"))
    return src_hits / len(hyps), tgt_hits / len(hyps)


def score_corpus(hyps: Sequence[str], refs: Sequence[str], smooth: bool = False) -> dict[str, float]:
    """Mean per-instance scores for the standard columns, as fractions."""
    if len(hyps) != len(refs):
        raise ContractError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if not hyps:
        raise ContractError("nothing to score")
    n = len(hyps)
    out = {
        "R1": sum(rouge_n(h, r, 1) for h, r in zip(hyps, refs)) / n,
        "R2": sum(rouge_n(h, r, 2) for h, r in zip(hyps, refs)) / n,
        "RL": sum(rouge_l(h, r) for h, r in zip(hyps, refs)) / n,
    }
    for k in (1, 2, 3, 4):
        out[f"B{k}"] = sum(bleu_k(h, r, k, smooth=smooth) for h, r in zip(hyps, refs)) / n
    return out


# ---- report rendering ----------------------------------------------------

# column layout mirrors the standard generation-quality table; the two
# model-based columns are not computed here and render as dashes
METRIC_COLUMNS = ("R1", "R2", "RL", "B1", "B2", "B3", "B4", "M", "BS", "source_acc", "target_acc")
_UNCOMPUTED = ("M", "BS")


@dataclass
class MetricReport:
    """Rows of per-variant scores, renderable as aligned text or CSV.

    Row values are fractions; rendering multiplies by 100. Missing keys
    and the model-based columns render as a dash.
    """

    rows: list[dict] = field(default_factory=list)

    def add_row(self, label: str, values: dict) -> None:
        row = {"label": label}
        row.update(values)
        self.rows.append(row)

    def _cell(self, row: dict, col: str) -> str:
        if col in _UNCOMPUTED or col not in row or row[col] is None:
            return "-"
        v = row[col]
        if isinstance(v, str):
            return v
        return f"{100.0 * v:.2f}"

    def to_csv(self) -> str:
        header = "label," + ",".join(METRIC_COLUMNS)
        lines = [header]
        for row in self.rows:
            lines.append(",".join([str(row["label"])] + [self._cell(row, c) for c in METRIC_COLUMNS]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cols = ("label",) + METRIC_COLUMNS
        table = [list(cols)]
        for row in self.rows:
            table.append([str(row["label"])] + [self._cell(row, c) for c in METRIC_COLUMNS])
        widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
        out = []
        for r in table:
            out.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        return "\n".join(out) + "\n"
