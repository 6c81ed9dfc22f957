"""Perturb, score, and aggregate: the saliency pipeline.

Per explained token k the pipeline produces a spectrogram map and a map over
the token prefix (start token included), built from Monte-Carlo perturbation
sweeps scored against the unperturbed teacher-forced distributions. Sweeps
may run on several worker threads; iteration i always draws its masks from
the stream derived from (seed, domain, i) and results are folded in
iteration-index order, so the output is bit-identical for any worker count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import DomainError, FormatError, PipelineError
from .masks import (
    DOMAIN_SPECTRO,
    DOMAIN_TOKEN,
    TokenMask,
    apply_bubble_field,
    apply_spectro_mask,
    iteration_rng,
    sample_bubble_field,
    sample_feature_mask,
    sample_patch_mask,
    sample_token_mask,
)
from .oracle import TokenSequence

KL_FLOOR = 1e-12

METHOD_SPES = "spes"
METHOD_FEATURE_WISE = "feature-wise"
METHOD_BUBBLE = "bubble"

IMPACT_KL = "kl"
IMPACT_PROB_DIFF = "prob-diff"


@dataclass
class PerturbationRecord:
    """One sampled mask plus its per-position impact scores."""

    mask: object
    impacts: np.ndarray


@dataclass
class SaliencyBundle:
    """All saliency maps for one utterance."""

    utt_id: str
    tokens: TokenSequence
    spec_maps: list  # per explained token, (T, C)
    token_maps: list  # per explained token k, length k
    sentence: np.ndarray
    stage: str = "raw"
    frame_stride_s: float = 0.010
    meta: dict = field(default_factory=dict)

    @property
    def n_positions(self):
        return len(self.spec_maps)


def _probs(dist):
    return np.asarray(getattr(dist, "probs", dist), dtype=np.float64)


def kl_divergence(p, q):
    """KL(p || q) in nats; q is floored at 1e-12 before the ratio."""
    p = _probs(p)
    q = _probs(q)
    if p.shape != q.shape:
        raise DomainError(f"size mismatch: {p.shape} vs {q.shape}")
    q = np.maximum(q, KL_FLOOR)
    live = p > 0
    return float(np.sum(p[live] * np.log(p[live] / q[live])))


def _impacts(baseline, perturbed, y, impact):
    if impact == IMPACT_KL:
        return np.array(
            [kl_divergence(b, d) for b, d in zip(baseline, perturbed)]
        )
    if impact == IMPACT_PROB_DIFF:
        # probability drop of the actually generated token; may be negative
        out = np.empty(len(baseline))
        for k, (b, d) in enumerate(zip(baseline, perturbed)):
            tok = y.ids[k + 1]
            out[k] = _probs(b)[tok] - _probs(d)[tok]
        return out
    raise DomainError(f"unknown impact estimator '{impact}'")


def _ordered_map(fn, count, workers):
    if workers <= 1:
        return map(fn, range(count))
    executor = ThreadPoolExecutor(max_workers=workers)

    def run():
        try:
            yield from executor.map(fn, range(count))
        finally:
            executor.shutdown(wait=True)

    return run()


def _sweep(make_record, count, workers):
    def guarded(i):
        try:
            return make_record(i)
        except Exception as exc:
            raise PipelineError(
                f"oracle failed at iteration {i}: {exc}", iteration=i
            ) from exc

    return list(_ordered_map(guarded, count, workers))


def explain_spectrogram(oracle, x, y, seg_maps, cfg, impact=IMPACT_KL, workers=1):
    """Patch-mask perturbation sweep; the token prefix stays unperturbed.

    Iterations are split across the segmentation scales in contiguous
    blocks of ceil(N/len(seg_maps)).
    """
    baseline = oracle.forward(x, y, None)
    n_scales = len(seg_maps)
    block = math.ceil(cfg.n_spec_iters / n_scales)

    def one(i):
        rng = iteration_rng(cfg.rng_seed, DOMAIN_SPECTRO, i)
        scale = min(i // block, n_scales - 1)
        mask = sample_patch_mask(seg_maps[scale], cfg.p_spec, rng)
        mask.scale_index = scale
        perturbed = oracle.forward(apply_spectro_mask(x, mask), y, None)
        return PerturbationRecord(
            mask=mask, impacts=_impacts(baseline, perturbed, y, impact)
        )

    return _sweep(one, cfg.n_spec_iters, workers)


def explain_feature_wise(oracle, x, y, cfg, impact=IMPACT_KL, workers=1):
    """Cell-mask perturbation sweep (no morphological clustering)."""
    baseline = oracle.forward(x, y, None)
    t_dim, c_dim = x.frames.shape

    def one(i):
        rng = iteration_rng(cfg.rng_seed, DOMAIN_SPECTRO, i)
        mask = sample_feature_mask(t_dim, c_dim, cfg.p_spec, rng)
        perturbed = oracle.forward(apply_spectro_mask(x, mask), y, None)
        return PerturbationRecord(
            mask=mask, impacts=_impacts(baseline, perturbed, y, impact)
        )

    return _sweep(one, cfg.n_spec_iters, workers)


def explain_bubble(oracle, x, y, cfg, bubble_cfg, impact=IMPACT_KL, workers=1):
    """Bubble-noise perturbation sweep.

    The record mask is the in-bubble indicator, so aggregation credits the
    outside-bubble (noised) region as perturbed.
    """
    baseline = oracle.forward(x, y, None)
    t_dim, c_dim = x.frames.shape
    value_range = (float(x.frames.min()), float(x.frames.max()))

    def one(i):
        rng = iteration_rng(cfg.rng_seed, DOMAIN_SPECTRO, i)
        bubbles = sample_bubble_field(t_dim, c_dim, bubble_cfg, value_range, rng)
        perturbed = oracle.forward(apply_bubble_field(x, bubbles), y, None)
        return PerturbationRecord(
            mask=bubbles.mask_equivalent,
            impacts=_impacts(baseline, perturbed, y, impact),
        )

    return _sweep(one, cfg.n_spec_iters, workers)


def explain_tokens(oracle, x, y, cfg, impact=IMPACT_KL, workers=1):
    """Token-zeroing perturbation sweep; the spectrogram stays unperturbed.

    One full-length mask over all prefix positions is drawn per iteration;
    position k sees its restriction to indices below k.
    """
    baseline = oracle.forward(x, y, None)
    prefix_len = len(y.ids) - 1

    def one(i):
        rng = iteration_rng(cfg.rng_seed, DOMAIN_TOKEN, i)
        mask = sample_token_mask(prefix_len, cfg.p_tok, rng)
        perturbed = oracle.forward(x, y, mask)
        return PerturbationRecord(
            mask=mask, impacts=_impacts(baseline, perturbed, y, impact)
        )

    return _sweep(one, cfg.n_tok_iters, workers)


def aggregate(records, target_shape, position=0):
    """Perturbation-weighted mean of impact scores.

    S = sum_i r_i * (1 - M_i) / sum_i (1 - M_i), elementwise over
    ``target_shape``; cells never perturbed score 0. Token masks longer than
    the target are restricted to its leading entries.
    """
    num = np.zeros(target_shape, dtype=np.float64)
    den = np.zeros(target_shape, dtype=np.float64)
    for rec in records:
        bits = rec.mask.bits
        if bits.shape != tuple(np.atleast_1d(target_shape)):
            if bits.ndim == 1 and len(bits) >= target_shape[0]:
                bits = bits[: target_shape[0]]
            else:
                raise DomainError(
                    f"mask shape {bits.shape} incompatible with {target_shape}"
                )
        w = 1.0 - bits
        num += float(np.asarray(rec.impacts).ravel()[position]) * w
        den += w
    out = np.zeros(target_shape, dtype=np.float64)
    hit = den > 0
    out[hit] = num[hit] / den[hit]
    return out


def zscore(m):
    """Standardize a map over all its cells; constant maps become zeros."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return m.copy()
    std = m.std()
    if std == 0:
        return np.zeros_like(m)
    return (m - m.mean()) / std


def joint_minmax(sx, sy):
    """Scale a pair of maps into [0, 1] by their shared min and max.

    ``sy`` may be None or empty (first explained token has no prior tokens in
    a spectrogram-only run); the map is then scaled by its own range.
    """
    sx = np.asarray(sx, dtype=np.float64)
    have_sy = sy is not None and np.asarray(sy).size > 0
    sy = np.asarray(sy, dtype=np.float64) if have_sy else np.empty(0)
    lo = min(sx.min(), sy.min()) if have_sy else sx.min()
    hi = max(sx.max(), sy.max()) if have_sy else sx.max()
    if hi == lo:
        return np.zeros_like(sx), np.zeros_like(sy)
    return (sx - lo) / (hi - lo), (sy - lo) / (hi - lo)


def minmax01(m):
    """Min-max a single map into [0, 1]; constant maps become zeros."""
    out, _ = joint_minmax(m, None)
    return out


def sentence_map(spec_maps):
    """Cellwise mean over the token-level spectrogram maps."""
    if not spec_maps:
        raise DomainError("no token maps to aggregate")
    return np.mean(np.stack(spec_maps), axis=0)


def build_bundle(utt_id, y, spec_records, token_records, frame_shape,
                 frame_stride_s=0.010, meta=None):
    """Aggregate records into a normalized SaliencyBundle.

    Token-level maps are z-scored independently, the sentence map is the
    mean of the z-scored spectrogram maps (then min-maxed into [0, 1] on its
    own), and each (spectrogram, token) map pair is jointly min-maxed.
    """
    n_positions = len(y.ids) - 1
    spec_maps = []
    token_maps = []
    for k in range(1, n_positions + 1):
        sx = aggregate(spec_records, frame_shape, position=k - 1)
        spec_maps.append(zscore(sx))
        if token_records:
            sy = aggregate(token_records, (k,), position=k - 1)
            token_maps.append(zscore(sy))
        else:
            token_maps.append(np.empty(0))
    sentence = minmax01(sentence_map(spec_maps))
    for k in range(n_positions):
        spec_maps[k], token_maps[k] = joint_minmax(spec_maps[k], token_maps[k])
    return SaliencyBundle(
        utt_id=utt_id,
        tokens=y,
        spec_maps=spec_maps,
        token_maps=token_maps,
        sentence=sentence,
        stage="minmaxed",
        frame_stride_s=frame_stride_s,
        meta=dict(meta or {}),
    )


def explain_utterance(oracle, x, y, pert_cfg, seg_cfg=None, seg_maps=None,
                      method=METHOD_SPES, impact=IMPACT_KL, bubble_cfg=None,
                      workers=1, utt_id="", meta=None):
    """Run one full explanation: perturb the spectrogram and the token
    prefix separately, then aggregate and normalize."""
    from .masks import BubbleConfig
    from .segmentation import multiscale_segment

    if method == METHOD_SPES:
        if seg_maps is None:
            if seg_cfg is None:
                raise DomainError("SPES explanation needs a segmentation config")
            seg_maps = multiscale_segment(x, seg_cfg)
        spec_records = explain_spectrogram(
            oracle, x, y, seg_maps, pert_cfg, impact=impact, workers=workers
        )
    elif method == METHOD_FEATURE_WISE:
        spec_records = explain_feature_wise(
            oracle, x, y, pert_cfg, impact=impact, workers=workers
        )
    elif method == METHOD_BUBBLE:
        spec_records = explain_bubble(
            oracle, x, y, pert_cfg, bubble_cfg or BubbleConfig(
                frame_stride_s=x.frame_stride_s
            ),
            impact=impact, workers=workers,
        )
    else:
        raise DomainError(f"unknown method '{method}'")
    token_records = explain_tokens(
        oracle, x, y, pert_cfg, impact=impact, workers=workers
    )
    info = {"method": method, "impact": impact, "seed": pert_cfg.rng_seed}
    info.update(meta or {})
    return build_bundle(
        utt_id, y, spec_records, token_records, x.frames.shape,
        frame_stride_s=x.frame_stride_s, meta=info,
    )


def write_bundle(path, bundle):
    """Serialize a bundle: JSON manifest line plus one f32 block per map."""
    maps = [("sentence", list(bundle.sentence.shape))]
    blocks = [(bundle.sentence, "<f4")]
    for k, (sx, sy) in enumerate(zip(bundle.spec_maps, bundle.token_maps), 1):
        maps.append((f"sx_{k}", list(sx.shape)))
        blocks.append((sx, "<f4"))
        maps.append((f"sy_{k}", list(np.asarray(sy).shape)))
        blocks.append((np.asarray(sy), "<f4"))
    header = {
        "format": "saliency-bundle/1",
        "utt_id": bundle.utt_id,
        "token_ids": [int(i) for i in bundle.tokens.ids],
        "token_surfaces": list(bundle.tokens.surface),
        "stride_s": float(bundle.frame_stride_s),
        "normalization": bundle.stage,
        "meta": bundle.meta,
        "maps": [{"name": n, "shape": s} for n, s in maps],
    }
    binio.write_record(path, header, blocks)


def read_bundle(path):
    header, payload = binio.read_record(path)
    if header.get("format") != "saliency-bundle/1":
        raise FormatError(f"{path}: not a saliency bundle")
    specs = [(tuple(m["shape"]), "<f4") for m in header["maps"]]
    arrays = binio.split_payload(payload, specs)
    by_name = {
        m["name"]: arr.astype(np.float64)
        for m, arr in zip(header["maps"], arrays)
    }
    tokens = TokenSequence(
        ids=list(header["token_ids"]), surface=list(header["token_surfaces"])
    )
    n_positions = len(tokens.ids) - 1
    return SaliencyBundle(
        utt_id=header["utt_id"],
        tokens=tokens,
        spec_maps=[by_name[f"sx_{k}"] for k in range(1, n_positions + 1)],
        token_maps=[by_name[f"sy_{k}"] for k in range(1, n_positions + 1)],
        sentence=by_name["sentence"],
        stage=header["normalization"],
        frame_stride_s=float(header["stride_s"]),
        meta=dict(header.get("meta", {})),
    )
