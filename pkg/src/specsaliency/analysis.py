"""Plausibility analytics over saliency bundles.

Covers temporal alignment tests against word-level alignments, per-word
frequency profiles, kurtosis-based scattering measurement, positional
statistics over the token-prefix maps, and the intermediate-token report.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .errors import DomainError

START_GROUP = "<s>"
INTERMEDIATE_GROUP = "IT"
LATEST_GROUP = "LT"


@dataclass
class WordAlignment:
    word: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise DomainError(
                f"bad alignment span [{self.start_s}, {self.end_s}] "
                f"for word '{self.word}'"
            )


@dataclass
class PositionalStats:
    groups: dict
    lt_vs_it: tuple  # (t, p) one-sided LT > IT, or None
    start_vs_it: tuple  # (t, p) one-sided <s> > IT, or None


@dataclass
class TimeAlignmentResult:
    mean_in: float
    mean_out: float
    t_stat: float
    p_value: float
    n_words: int
    n_skipped: int


def kurtosis(values):
    """Excess (Fisher) kurtosis with population moments: m4 / m2^2 - 3."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 4:
        raise DomainError(f"kurtosis needs at least 4 values, got {v.size}")
    centered = v - v.mean()
    m2 = np.mean(centered ** 2)
    if m2 == 0:
        raise DomainError("kurtosis undefined for zero-variance samples")
    m4 = np.mean(centered ** 4)
    return float(m4 / (m2 * m2) - 3.0)


def t_test_greater(a, b):
    """One-sided two-sample Student's t-test (pooled variance) for mean(a) > mean(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise DomainError("each sample needs at least 2 values")
    dof = n1 + n2 - 2
    pooled = ((n1 - 1) * a.var(ddof=1) + (n2 - 1) * b.var(ddof=1)) / dof
    se = np.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
    if se == 0:
        t = 0.0 if a.mean() == b.mean() else np.inf * np.sign(a.mean() - b.mean())
    else:
        t = (a.mean() - b.mean()) / se
    p = float(sstats.t.sf(t, dof))
    return float(t), p


def _token_words(surfaces):
    """Surface strings normalized for alignment matching."""
    return [s.replace("▁", " ").strip() for s in surfaces]


def match_words_to_tokens(tokens, alignment_words):
    """Greedy in-order match of alignment words to runs of token surfaces.

    Returns (matches, n_skipped) where matches pairs each matched alignment
    index with the token indices whose concatenated surfaces equal the word
    (case-insensitive). Specials and unmatched words are skipped.
    """
    surfaces = _token_words(tokens.surface)
    candidates = [
        i for i in range(1, len(tokens.ids))
        if surfaces[i] and tokens.surface[i] not in ("<s>", "</s>")
    ]
    matches = []
    skipped = 0
    pos = 0
    for w_idx, word in enumerate(alignment_words):
        target = word.strip().lower()
        found = None
        for start in range(pos, len(candidates)):
            acc = ""
            for end in range(start, min(start + 8, len(candidates))):
                acc += surfaces[candidates[end]].lower()
                if acc.replace(" ", "") == target.replace(" ", ""):
                    found = (start, end)
                    break
            if found:
                break
        if found is None:
            skipped += 1
            continue
        start, end = found
        matches.append((w_idx, [candidates[i] for i in range(start, end + 1)]))
        pos = end + 1
    return matches, skipped


def _word_map(bundle, token_indices):
    """Word-level saliency: mean of the constituent tokens' spectrogram maps."""
    maps = [bundle.spec_maps[i - 1] for i in token_indices]
    return np.mean(np.stack(maps), axis=0)


def _span_frames(alignment, stride_s, n_frames):
    lo = int(np.floor(alignment.start_s / stride_s))
    hi = int(np.ceil(alignment.end_s / stride_s))
    return max(0, lo), min(n_frames, hi)


def time_alignment_test(bundles, alignments):
    """Test that word saliency is higher inside the aligned time span.

    For each aligned word the constituent token maps are averaged, reduced
    to a per-frame profile by taking the maximum over the frequency axis,
    and the mean profile value inside the span is paired against the mean
    outside. A one-sided pooled t-test compares the two samples.
    """
    inside = []
    outside = []
    skipped = 0
    for bundle in bundles:
        aligns = alignments.get(bundle.utt_id, [])
        if not aligns:
            continue
        matches, n_miss = match_words_to_tokens(
            bundle.tokens, [a.word for a in aligns]
        )
        skipped += n_miss
        n_frames = bundle.sentence.shape[0]
        for w_idx, token_indices in matches:
            profile = _word_map(bundle, token_indices).max(axis=1)
            lo, hi = _span_frames(aligns[w_idx], bundle.frame_stride_s, n_frames)
            if lo >= hi or hi - lo >= n_frames:
                skipped += 1
                continue
            mask = np.zeros(n_frames, dtype=bool)
            mask[lo:hi] = True
            inside.append(float(profile[mask].mean()))
            outside.append(float(profile[~mask].mean()))
    if not inside:
        raise DomainError("no aligned words found in any bundle")
    t, p = t_test_greater(inside, outside)
    return TimeAlignmentResult(
        mean_in=float(np.mean(inside)),
        mean_out=float(np.mean(outside)),
        t_stat=t,
        p_value=p,
        n_words=len(inside),
        n_skipped=skipped,
    )


def frequency_profile(bundles, word, occurrences):
    """Per-channel mean of the time-max saliency over a word's occurrences.

    ``occurrences`` lists (utt_id, start_s, end_s) spans where the word is
    uttered; within one utterance, spans ordered by time are paired with the
    word's token occurrences in decoding order. Returns a length-C vector,
    or None when nothing matched.
    """
    target = word.strip().lower()
    by_id = {}
    for utt_id, start_s, end_s in occurrences:
        by_id.setdefault(utt_id, []).append((start_s, end_s))
    profiles = []
    for bundle in bundles:
        spans = sorted(by_id.get(bundle.utt_id, []))
        if not spans:
            continue
        surfaces = _token_words(bundle.tokens.surface)
        hits = [
            i for i in range(1, len(bundle.tokens.ids))
            if surfaces[i].lower() == target
        ]
        for (start_s, end_s), token_idx in zip(spans, hits):
            wmap = _word_map(bundle, [token_idx])
            lo, hi = _span_frames(
                WordAlignment(word, start_s, end_s),
                bundle.frame_stride_s,
                wmap.shape[0],
            )
            if lo >= hi:
                continue
            profiles.append(wmap[lo:hi].max(axis=0))
    if not profiles:
        return None
    return np.mean(np.stack(profiles), axis=0)


def _normalized_token_map(sy):
    sy = np.asarray(sy, dtype=np.float64)
    top = sy.max() if sy.size else 0.0
    return sy / top if top > 0 else sy


def positional_stats(bundles):
    """Group max-normalized prefix saliency by position.

    Index 0 of a prefix map is the start token; the last index is the
    latest token (the one immediately preceding the explained token); the
    rest are intermediate. Every entry lands in exactly one group.
    """
    groups = {START_GROUP: [], INTERMEDIATE_GROUP: [], LATEST_GROUP: []}
    for bundle in bundles:
        for k in range(1, bundle.n_positions + 1):
            sy = _normalized_token_map(bundle.token_maps[k - 1])
            if sy.size == 0:
                continue
            for idx, val in enumerate(sy):
                if idx == 0:
                    groups[START_GROUP].append(float(val))
                elif idx == k - 1:
                    groups[LATEST_GROUP].append(float(val))
                else:
                    groups[INTERMEDIATE_GROUP].append(float(val))
    lt_vs_it = None
    start_vs_it = None
    if len(groups[LATEST_GROUP]) >= 2 and len(groups[INTERMEDIATE_GROUP]) >= 2:
        lt_vs_it = t_test_greater(groups[LATEST_GROUP], groups[INTERMEDIATE_GROUP])
    if len(groups[START_GROUP]) >= 2 and len(groups[INTERMEDIATE_GROUP]) >= 2:
        start_vs_it = t_test_greater(groups[START_GROUP], groups[INTERMEDIATE_GROUP])
    return PositionalStats(groups=groups, lt_vs_it=lt_vs_it, start_vs_it=start_vs_it)


def intermediate_token_report(bundles, min_count=100):
    """Tokens most often explained by an intermediate prefix token.

    For every explained token type with at least ``min_count`` occurrences,
    report the share of occurrences where an intermediate position (neither
    the start token nor the latest token) holds the maximum prefix saliency,
    along with the most frequent such tokens. Sorted by share, descending.
    """
    occurrences = {}
    it_hits = {}
    for bundle in bundles:
        for k in range(1, bundle.n_positions + 1):
            token = bundle.tokens.surface[k]
            occurrences[token] = occurrences.get(token, 0) + 1
            sy = _normalized_token_map(bundle.token_maps[k - 1])
            if sy.size < 3:
                continue  # no intermediate position exists
            arg = int(np.argmax(sy))
            if 0 < arg < k - 1:
                holder = bundle.tokens.surface[arg]
                it_hits.setdefault(token, {})
                it_hits[token][holder] = it_hits[token].get(holder, 0) + 1
    rows = []
    for token, count in occurrences.items():
        if count < min_count:
            continue
        hits = it_hits.get(token, {})
        n_hits = sum(hits.values())
        if n_hits == 0:
            continue
        top = sorted(hits.items(), key=lambda kv: (-kv[1], kv[0]))
        rows.append(
            {
                "token": token,
                "occurrences": count,
                "it_max_pct": 100.0 * n_hits / count,
                "top_its": top[:3],
            }
        )
    rows.sort(key=lambda r: -r["it_max_pct"])
    return rows


def kurtosis_by_token(bundles, min_count=100):
    """Mean spectrogram-map kurtosis per token type.

    Degenerate (constant) maps are skipped; the returned rows carry how many
    occurrences contributed. Sorted by mean kurtosis, descending.
    """
    values = {}
    skipped = {}
    for bundle in bundles:
        for k in range(1, bundle.n_positions + 1):
            token = bundle.tokens.surface[k]
            sx = bundle.spec_maps[k - 1]
            try:
                kurt = kurtosis(sx)
            except DomainError:
                skipped[token] = skipped.get(token, 0) + 1
                continue
            values.setdefault(token, []).append(kurt)
    rows = []
    for token, vals in values.items():
        if len(vals) + skipped.get(token, 0) < min_count:
            continue
        rows.append(
            {
                "token": token,
                "occurrences": len(vals),
                "mean_kurtosis": float(np.mean(vals)),
                "skipped": skipped.get(token, 0),
            }
        )
    rows.sort(key=lambda r: -r["mean_kurtosis"])
    return rows
