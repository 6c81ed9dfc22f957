"""Explanation quality metrics: deletion and size curves, WER and BLEU.

Deletion removes the most salient sentence-level cells in 5% steps,
re-decodes the corpus at every step and tracks the task metric; size
measures the fraction of cells whose saliency clears thresholds swept over
[0, 1]. Both curves are summarized by a trapezoidal AUC normalized to the
x-range.
"""

import json
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

CURVE_STEPS = 21  # 0.0 .. 1.0 in steps of 0.05, both endpoints included


def curve_xs():
    return [round(i * 0.05, 2) for i in range(CURVE_STEPS)]


@dataclass
class EvalCurve:
    points: list  # (x, y) pairs, x strictly increasing over [0, 1]
    auc: float


def auc(points):
    """Trapezoidal area under (x, y) points, normalized by the x-range."""
    if len(points) < 2:
        raise DomainError("need at least 2 points for an AUC")
    xs = np.asarray([p[0] for p in points], dtype=np.float64)
    ys = np.asarray([p[1] for p in points], dtype=np.float64)
    if (np.diff(xs) <= 0).any():
        raise DomainError("curve x values must be strictly increasing")
    return float(np.trapezoid(ys, xs) / (xs[-1] - xs[0]))


def levenshtein(a, b):
    """Edit distance between two token sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = np.arange(len(b) + 1)
    for i, tok_a in enumerate(a, 1):
        cur = np.empty(len(b) + 1, dtype=np.int64)
        cur[0] = i
        for j, tok_b in enumerate(b, 1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (tok_a != tok_b),
            )
        prev = cur
    return int(prev[-1])


def wer(hyp, ref):
    """Word error rate in [0, 100]; capped at 100 to absorb hallucinations."""
    if len(ref) == 0:
        raise DomainError("empty reference")
    return min(100.0, 100.0 * levenshtein(hyp, ref) / len(ref))


def corpus_wer(hyps, refs):
    """Corpus WER with the per-utterance cap: sum(min(edits, |ref|)) / sum |ref|."""
    if len(hyps) != len(refs):
        raise DomainError("hypothesis/reference count mismatch")
    if not refs:
        raise DomainError("empty corpus")
    edits = 0
    total = 0
    for hyp, ref in zip(hyps, refs):
        if len(ref) == 0:
            raise DomainError("empty reference")
        edits += min(levenshtein(hyp, ref), len(ref))
        total += len(ref)
    return 100.0 * edits / total


_13A_RULES = (
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 -"),
)


def tokenize_13a(text):
    """Punctuation-splitting tokenization used before BLEU scoring."""
    out = text
    for pattern, repl in _13A_RULES:
        out = pattern.sub(repl, out)
    return out.split()


def _ngram_counts(tokens, order):
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def bleu(hyps, refs, max_order=4):
    """Corpus-level BLEU in [0, 100].

    Geometric mean of clipped 1..4-gram precisions times the brevity
    penalty. No smoothing: an order with hypothesis n-grams but zero matches
    sends the score to 0; an order with no hypothesis n-grams at all (corpus
    shorter than the order) is vacuous and contributes log 1.
    """
    if len(hyps) != len(refs):
        raise DomainError("hypothesis/reference count mismatch")
    if not hyps:
        raise DomainError("empty corpus")
    matches = np.zeros(max_order, dtype=np.int64)
    totals = np.zeros(max_order, dtype=np.int64)
    hyp_len = 0
    ref_len = 0
    for hyp_text, ref_text in zip(hyps, refs):
        hyp = tokenize_13a(hyp_text)
        ref = tokenize_13a(ref_text)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for order in range(1, max_order + 1):
            hyp_counts = _ngram_counts(hyp, order)
            ref_counts = _ngram_counts(ref, order)
            totals[order - 1] += sum(hyp_counts.values())
            matches[order - 1] += sum(
                min(cnt, ref_counts[ng]) for ng, cnt in hyp_counts.items()
            )
    log_sum = 0.0
    for order in range(max_order):
        if totals[order] == 0:
            continue  # vacuous order
        if matches[order] == 0:
            return 0.0
        log_sum += np.log(matches[order] / totals[order])
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    return float(100.0 * bp * np.exp(log_sum / max_order))


def saliency_order(sentence_map):
    """Flat cell indices sorted by saliency descending, ties by cell index."""
    flat = np.asarray(sentence_map, dtype=np.float64).ravel()
    return np.argsort(-flat, kind="stable")


def delete_top_cells(x, order, fraction):
    """Zero the top ``fraction`` of cells of a spectrogram in ranked order."""
    frames = np.array(x.frames, dtype=np.float64)
    n_cells = frames.size
    n_zero = int(np.floor(fraction * n_cells + 0.5))
    if n_zero:
        frames.ravel()[order[:n_zero]] = 0.0
    out = type(x)(
        frames=frames,
        frame_stride_s=x.frame_stride_s,
        window_s=x.window_s,
        cmvn_applied=x.cmvn_applied,
    )
    return out


def _score_corpus(hyps, refs, task_metric):
    if task_metric == "wer":
        return corpus_wer(hyps, [r.split() for r in refs])
    if task_metric == "bleu":
        return bleu([" ".join(h) for h in hyps], refs)
    raise DomainError(f"unknown task metric '{task_metric}'")


def deletion_curve(oracle, corpus, bundles, task_metric="wer"):
    """Deletion faithfulness curve over the whole corpus.

    ``corpus`` holds (utt_id, spectrogram, reference string) triples;
    ``bundles`` maps utt_id to its SaliencyBundle. At each x the top-x
    fraction of cells (ranked by the sentence map) is zeroed, every
    utterance is re-decoded, and the corpus is scored against the gold
    references.
    """
    if not corpus:
        raise DomainError("empty corpus")
    orders = {}
    refs = []
    for utt_id, x, ref in corpus:
        if utt_id not in bundles:
            raise DomainError(f"no bundle for utterance '{utt_id}'")
        orders[utt_id] = saliency_order(bundles[utt_id].sentence)
        refs.append(ref)
    points = []
    for frac in curve_xs():
        hyps = []
        for utt_id, x, _ in corpus:
            degraded = delete_top_cells(x, orders[utt_id], frac)
            hyps.append(oracle.decode(degraded).words())
        points.append((frac, _score_corpus(hyps, refs, task_metric)))
    return EvalCurve(points=points, auc=auc(points))


def size_curve(bundles):
    """Explanation compactness curve.

    For each threshold t the y value is the mean, over utterances, of the
    fraction of sentence-map cells with saliency strictly above t. Sentence
    maps are expected min-max normalized to [0, 1].
    """
    maps = [np.asarray(b.sentence, dtype=np.float64).ravel() for b in bundles]
    if not maps:
        raise DomainError("no bundles")
    points = []
    for t in curve_xs():
        fracs = [float((m > t).mean()) for m in maps]
        points.append((t, float(np.mean(fracs))))
    return EvalCurve(points=points, auc=auc(points))


def curve_to_csv(curve):
    lines = ["x,y"]
    lines += [f"{x},{y}" for x, y in curve.points]
    return "\n".join(lines) + "\n"


def curve_to_json(curve, metric):
    return json.dumps(
        {
            "metric": metric,
            "auc": curve.auc,
            "points": [[x, y] for x, y in curve.points],
        },
        sort_keys=True,
    )
