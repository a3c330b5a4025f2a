"""Corpus BLEU-4, ROUGE-1/2/L and word error rate.

All scorers case-fold tokens before comparison and report percentages.
Exact formulas (reference implementations differ in the details):

* BLEU: corpus-level modified n-gram precision up to order 4 with add-one
  smoothing whenever an order has zero matches, times the brevity penalty
  over corpus totals.
* ROUGE: mean per-sample F1 of clipped n-gram overlap (variants 1 and 2)
  or of the longest common subsequence (variant L).
* WER: token-level Levenshtein distance over the reference length.  The
  corpus aggregate divides total edits by total reference tokens.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .errors import ContractError

MAX_BLEU_ORDER = 4


def _fold(tokens) -> list[str]:
    return [t.casefold() for t in tokens]


def _ngrams(tokens: list[str], order: int) -> Counter:
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def _check_corpus(predictions, references):
    if len(predictions) != len(references):
        raise ContractError(
            f"{len(predictions)} predictions against {len(references)} references"
        )
    if not predictions:
        raise ContractError("metric inputs must contain at least one pair")


def bleu(predictions, references) -> float:
    """Corpus BLEU-4 in [0, 100], one reference per prediction."""
    _check_corpus(predictions, references)
    matches = [0] * MAX_BLEU_ORDER
    totals = [0] * MAX_BLEU_ORDER
    pred_len = 0
    ref_len = 0
    for pred, ref in zip(predictions, references):
        pred = _fold(pred)
        ref = _fold(ref)
        pred_len += len(pred)
        ref_len += len(ref)
        for order in range(1, MAX_BLEU_ORDER + 1):
            pred_counts = _ngrams(pred, order)
            ref_counts = _ngrams(ref, order)
            totals[order - 1] += max(0, len(pred) - order + 1)
            matches[order - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in pred_counts.items()
            )
    log_precision = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = m + 1, t + 1  # add-one smoothing for an empty count
        log_precision += math.log(m / t)
    log_precision /= MAX_BLEU_ORDER
    if pred_len == 0:
        return 0.0
    brevity = 1.0 if pred_len > ref_len else math.exp(1.0 - ref_len / pred_len)
    return 100.0 * brevity * math.exp(log_precision)


def _f1(matched: float, pred_total: int, ref_total: int, identical: bool) -> float:
    if pred_total == 0 and ref_total == 0:
        # No n-grams on either side (sequences shorter than the order):
        # perfect for identical sequences, nothing in common otherwise.
        return 1.0 if identical else 0.0
    if matched == 0 or pred_total == 0 or ref_total == 0:
        return 0.0
    precision = matched / pred_total
    recall = matched / ref_total
    return 2.0 * precision * recall / (precision + recall)


def rouge_n_f1(prediction, reference, order: int) -> float:
    pred = _fold(prediction)
    ref = _fold(reference)
    pred_counts = _ngrams(pred, order)
    ref_counts = _ngrams(ref, order)
    matched = sum(min(count, ref_counts[gram]) for gram, count in pred_counts.items())
    return _f1(matched, sum(pred_counts.values()), sum(ref_counts.values()), pred == ref)


def lcs_length(a: list, b: list) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_f1(prediction, reference) -> float:
    pred = _fold(prediction)
    ref = _fold(reference)
    return _f1(lcs_length(pred, ref), len(pred), len(ref), pred == ref)


def rouge(predictions, references, variant: str) -> float:
    """Mean per-sample F1 overlap, in [0, 100]; variant is '1', '2' or 'L'."""
    _check_corpus(predictions, references)
    if variant == "L":
        scores = [rouge_l_f1(p, r) for p, r in zip(predictions, references)]
    elif variant in ("1", "2"):
        order = int(variant)
        scores = [rouge_n_f1(p, r, order) for p, r in zip(predictions, references)]
    else:
        raise ContractError(f"unknown ROUGE variant {variant!r}; expected '1', '2' or 'L'")
    return 100.0 * sum(scores) / len(scores)


def edit_distance(hypothesis, reference) -> int:
    """Token-level Levenshtein distance (unit substitution/insert/delete)."""
    hyp = list(hypothesis)
    ref = list(reference)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i]
        for j, r in enumerate(ref, start=1):
            cur.append(min(
                prev[j] + 1,          # delete h
                cur[j - 1] + 1,       # insert r
                prev[j - 1] + (h != r),
            ))
        prev = cur
    return prev[-1]


def wer(hypothesis, reference) -> float:
    """Word error rate percentage: edits / reference length * 100."""
    hyp = _fold(hypothesis)
    ref = _fold(reference)
    if not ref:
        raise ContractError("WER reference must be non-empty")
    return 100.0 * edit_distance(hyp, ref) / len(ref)


def corpus_wer(predictions, references) -> float:
    """Total edits over total reference tokens, as a percentage."""
    _check_corpus(predictions, references)
    edits = 0
    ref_total = 0
    for pred, ref in zip(predictions, references):
        ref = _fold(ref)
        if not ref:
            raise ContractError("WER reference must be non-empty")
        edits += edit_distance(_fold(pred), ref)
        ref_total += len(ref)
    return 100.0 * edits / ref_total


@dataclass
class MetricReport:
    bleu: float
    rouge1: float
    rouge2: float
    rougeL: float
    wer: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "wer": self.wer,
            "sample_count": self.sample_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_table(self) -> str:
        rows = [
            ("BLEU", self.bleu),
            ("ROUGE-1", self.rouge1),
            ("ROUGE-2", self.rouge2),
            ("ROUGE-L", self.rougeL),
            ("WER", self.wer),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {value:7.2f}" for name, value in rows]
        lines.append(f"{'samples':<{width}}  {self.sample_count:7d}")
        return "\n".join(lines)


def evaluate(predictions, references) -> MetricReport:
    """Score a prediction set against a reference set (token sequences)."""
    _check_corpus(predictions, references)
    return MetricReport(
        bleu=bleu(predictions, references),
        rouge1=rouge(predictions, references, "1"),
        rouge2=rouge(predictions, references, "2"),
        rougeL=rouge(predictions, references, "L"),
        wer=corpus_wer(predictions, references),
        sample_count=len(predictions),
    )
