"""Black-box autoregressive speech-to-text model contract.

Two implementations are provided: a deterministic toy model with known
ground-truth dependencies (used for desk-scale validation) and an HTTP
client for a remote model bridge.

Wire protocol (HTTP, JSON bodies):
  POST /v1/decode  {"spectrogram": {"T", "C", "data": base64 LE f32}}
      -> {"tokens": [ids], "surface": [strings]}
  POST /v1/forward {"spectrogram": ..., "tokens": [ids],
                    "token_mask": [0/1] or null}
      -> {"logprobs": [[...], ...], "vocab_size": V}
  where logprobs[i] is the log-distribution for the token at index i + 1
  given tokens[0..i]; this client converts it to probabilities.
"""

import abc
import base64
import threading
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import DomainError, OracleProtocolError, RetryableOracleError

TOY_VOCAB = ("<s>", "</s>", "A", "B", "C", "D", "MARK")
BOS_ID, EOS_ID, TOK_A, TOK_B, TOK_C, TOK_D, TOK_MARK = range(len(TOY_VOCAB))
BAND_TOKENS = (TOK_A, TOK_B, TOK_C, TOK_D)
# each tone occupies a disjoint 10-channel mel band
TONE_BANDS = {TOK_A: (5, 15), TOK_B: (25, 35), TOK_C: (45, 55), TOK_D: (65, 75)}
SEGMENT_FRAMES = 50  # 0.5 s at a 10 ms stride
SHARPNESS = 8.0
MARK_PROB = 0.95
EOS_PROB = 0.98


@dataclass
class TokenSequence:
    """Decoded token ids plus their surface strings."""

    ids: list
    surface: list

    def __len__(self):
        return len(self.ids)

    def words(self):
        """Surface strings without the start/end specials."""
        return [s for i, s in zip(self.ids, self.surface) if i not in (BOS_ID, EOS_ID)]


class ProbDist:
    """Vocabulary-length vector of non-negative probabilities summing to 1."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1:
            raise DomainError("probabilities must be a vector")
        if (probs < 0).any():
            raise DomainError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise DomainError(f"probabilities sum to {probs.sum()}, not 1")
        self.probs = probs

    def __len__(self):
        return len(self.probs)


class ModelOracle(abc.ABC):
    """Teacher-forced next-token distributions from a black-box S2T model."""

    @abc.abstractmethod
    def forward(self, x, y, tok_mask=None):
        """Per-position distributions for y given x.

        Entry k (0-based) is the distribution for token y.ids[k + 1]
        conditioned on x and the mask-filtered prefix y.ids[0..k]. A token
        mask, when given, covers prefix positions 0..len(y)-2 and zeroes the
        embedding of each position whose bit is 0 before any later position
        consumes it.
        """

    @abc.abstractmethod
    def decode(self, x):
        """Full generated TokenSequence for spectrogram x."""

    @abc.abstractmethod
    def vocab(self):
        """Token surface table indexed by id."""


class _ToyStats:
    """Per-spectrogram band energies the toy model conditions on."""

    def __init__(self, frames):
        t_dim = frames.shape[0]
        self.n_segments = max(1, int(round(t_dim / SEGMENT_FRAMES)))
        band_sums = np.stack(
            [frames[:, lo:hi].sum(axis=1) for lo, hi in TONE_BANDS.values()], axis=1
        )
        starts = np.minimum(
            np.arange(self.n_segments) * SEGMENT_FRAMES, t_dim - 1
        )
        ends = np.minimum(starts + SEGMENT_FRAMES, t_dim)
        ends[-1] = t_dim
        totals = np.add.reduceat(band_sums, starts, axis=0)
        counts = (ends - starts)[:, None] * 10.0
        self.segment_means = totals / counts
        self.global_means = band_sums.sum(axis=0) / (t_dim * 10.0)


def _band_softmax(energies):
    logits = SHARPNESS * np.asarray(energies, dtype=np.float64)
    logits = logits - logits.max()
    expd = np.exp(logits)
    probs = np.zeros(len(TOY_VOCAB))
    probs[list(BAND_TOKENS)] = expd / expd.sum()
    return probs


class ToyOracle(ModelOracle):
    """Deterministic stand-in model over tone-band audio.

    The vocabulary is {<s>, </s>, A, B, C, D, MARK}. Audio is read as a
    concatenation of 0.5 s segments; position k emits
    softmax(sharpness * mean band energies of segment k) over {A, B, C, D}.
    Whenever the previous visible token is C, the next distribution instead
    puts 0.95 on MARK (a pattern-based prediction that ignores the local
    audio; the leftover 0.05 follows the utterance-global band profile).
    Past the last segment the model emits </s> with 0.98, the remainder
    again following the global profile. Zeroing the preceding C through a
    token mask disables the MARK rule for that position.
    """

    def vocab(self):
        return list(TOY_VOCAB)

    def _next_dist(self, stats, prev_id, position):
        if prev_id == TOK_C:
            dist = MARK_PROB * _one_hot(TOK_MARK)
            dist += (1.0 - MARK_PROB) * _band_softmax(stats.global_means)
            return dist
        if position <= stats.n_segments:
            return _band_softmax(stats.segment_means[position - 1])
        dist = EOS_PROB * _one_hot(EOS_ID)
        dist += (1.0 - EOS_PROB) * _band_softmax(stats.global_means)
        return dist

    def forward(self, x, y, tok_mask=None):
        if len(y.ids) < 2:
            raise DomainError("token sequence must contain a prefix to explain")
        if tok_mask is not None and len(tok_mask.bits) != len(y.ids) - 1:
            raise DomainError(
                f"token mask of length {len(tok_mask.bits)} does not cover "
                f"the {len(y.ids) - 1} prefix positions"
            )
        stats = _ToyStats(np.asarray(x.frames, dtype=np.float64))
        out = []
        for k in range(1, len(y.ids)):
            prev = y.ids[k - 1]
            if tok_mask is not None and tok_mask.bits[k - 1] == 0:
                prev = None  # zeroed embedding carries no identity
            out.append(ProbDist(self._next_dist(stats, prev, k)))
        return out

    def decode(self, x):
        stats = _ToyStats(np.asarray(x.frames, dtype=np.float64))
        ids = [BOS_ID]
        limit = 2 * stats.n_segments + 4
        for position in range(1, limit + 1):
            dist = self._next_dist(stats, ids[-1], position)
            ids.append(int(np.argmax(dist)))
            if ids[-1] == EOS_ID:
                break
        if ids[-1] != EOS_ID:
            ids.append(EOS_ID)
        return TokenSequence(ids=ids, surface=[TOY_VOCAB[i] for i in ids])


def _one_hot(idx):
    v = np.zeros(len(TOY_VOCAB))
    v[idx] = 1.0
    return v


def spectrogram_payload(x):
    """Encode a spectrogram for the wire: shape plus base64 LE f32 data."""
    frames = np.ascontiguousarray(x.frames).astype("<f4", copy=False)
    return {
        "T": int(frames.shape[0]),
        "C": int(frames.shape[1]),
        "data": base64.b64encode(frames.tobytes()).decode("ascii"),
    }


def payload_to_frames(payload):
    """Decode a wire spectrogram payload back to a (T, C) float array."""
    t_dim, c_dim = int(payload["T"]), int(payload["C"])
    raw = base64.b64decode(payload["data"])
    if len(raw) != t_dim * c_dim * 4:
        raise OracleProtocolError(
            f"spectrogram payload carries {len(raw)} bytes, "
            f"expected {t_dim * c_dim * 4}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(t_dim, c_dim).astype(np.float64)


class RemoteOracle(ModelOracle):
    """HTTP client for a model bridge speaking the wire protocol."""

    def __init__(self, base_url, timeout=60.0, max_retries=3, max_inflight=8,
                 session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self._inflight = threading.BoundedSemaphore(max_inflight)
        self._session = session or requests.Session()
        self._vocab_size = None

    def _post(self, path, payload):
        last_exc = None
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(0.2 * 2 ** (attempt - 1))
            try:
                with self._inflight:
                    resp = self._session.post(
                        self.base_url + path, json=payload, timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = RuntimeError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise OracleProtocolError(
                    f"{path} returned HTTP {resp.status_code}: {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise OracleProtocolError(f"{path} returned non-JSON body") from exc
        raise RetryableOracleError(
            f"{path} unreachable after {self.max_retries} attempts: {last_exc}"
        ) from last_exc

    def forward(self, x, y, tok_mask=None):
        body = {
            "spectrogram": spectrogram_payload(x),
            "tokens": [int(i) for i in y.ids],
            "token_mask": None
            if tok_mask is None
            else [int(b) for b in tok_mask.bits],
        }
        reply = self._post("/v1/forward", body)
        try:
            logprobs = np.asarray(reply["logprobs"], dtype=np.float64)
            vocab_size = int(reply["vocab_size"])
        except (KeyError, TypeError, ValueError) as exc:
            raise OracleProtocolError(f"malformed forward reply: {exc}") from exc
        if logprobs.ndim != 2 or logprobs.shape[1] != vocab_size:
            raise OracleProtocolError(
                f"forward reply shape {logprobs.shape} does not match "
                f"vocab_size {vocab_size}"
            )
        self._vocab_size = vocab_size
        out = []
        for row in np.exp(logprobs):
            total = row.sum()
            if abs(total - 1.0) > 1e-4:
                raise OracleProtocolError(
                    f"distribution sums to {total:.6f}, outside the 1e-4 bound"
                )
            out.append(ProbDist(row / total))
        return out

    def decode(self, x):
        reply = self._post("/v1/decode", {"spectrogram": spectrogram_payload(x)})
        try:
            ids = [int(i) for i in reply["tokens"]]
            surface = [str(s) for s in reply["surface"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise OracleProtocolError(f"malformed decode reply: {exc}") from exc
        if len(ids) != len(surface):
            raise OracleProtocolError("decode reply ids/surface length mismatch")
        return TokenSequence(ids=ids, surface=surface)

    def vocab(self):
        # the wire protocol does not transport a vocabulary; synthesize ids
        # from the size learned on the first forward call
        if self._vocab_size is None:
            raise OracleProtocolError(
                "vocabulary size unknown before the first forward call"
            )
        return [f"<tok-{i}>" for i in range(self._vocab_size)]
