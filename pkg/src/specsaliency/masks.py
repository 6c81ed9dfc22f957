"""Binary perturbation masks for spectrograms and token prefixes.

All sampling is reproducible independent of execution order: iteration i of a
sweep draws from a dedicated stream derived from (seed, domain, i), so masks
are bit-identical whether iterations run sequentially or across threads.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import binio
from .audio import Spectrogram
from .errors import DomainError, FormatError

DOMAIN_SPECTRO = 0
DOMAIN_TOKEN = 1

FEATURE_P_SPEC = 0.7  # feature-wise baseline default
FEATURE_P_TOK = 0.1


@dataclass
class SpectroMask:
    """T x C binary grid; 1 = keep, 0 = perturb."""

    bits: np.ndarray
    scale_index: int | None = None


@dataclass
class TokenMask:
    """Binary vector over the token prefix; 1 = keep, 0 = zero the embedding.

    Position 0 (the start token) is maskable like any other position.
    """

    bits: np.ndarray


@dataclass
class BubbleField:
    """Noise field with elliptical keep-regions.

    Outside every bubble the perturbed input is pure noise; inside, the noise
    is attenuated (scaled by 0 at the bubble center, growing linearly to 1 at
    the ellipse boundary) and added to the input. Overlapping bubbles keep
    the strongest attenuation. ``mask_equivalent`` marks in-bubble cells with
    1, so its complement is the "perturbed" indicator for aggregation.
    """

    noise: np.ndarray
    bubble_centers: list
    mask_equivalent: SpectroMask
    attenuation: np.ndarray


@dataclass
class BubbleConfig:
    bubbles_per_second: float = 10.0
    width_s: float = 0.43
    height_mels: float = 31.0
    frame_stride_s: float = 0.010


@dataclass
class PerturbationConfig:
    n_spec_iters: int = 20000
    n_tok_iters: int = 2000
    p_spec: float = 0.5
    p_tok: float = 0.4
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.p_spec < 1.0 and 0.0 < self.p_tok < 1.0):
            raise DomainError("perturbation probabilities must lie in (0, 1)")
        if self.n_spec_iters < 1 or self.n_tok_iters < 1:
            raise DomainError("iteration counts must be at least 1")


def iteration_rng(seed, domain, iteration):
    """Independent generator for one perturbation iteration."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(domain, iteration))
    return np.random.default_rng(ss)


def sample_patch_mask(seg, p_spec, rng):
    """Perturb each patch of a segmentation independently with p_spec.

    Zeros in the returned mask are always unions of whole patches.
    """
    perturbed = rng.random(seg.n_patches) < p_spec
    bits = (~perturbed)[seg.labels].astype(np.uint8)
    return SpectroMask(bits=bits)


def sample_feature_mask(t_dim, c_dim, p_spec, rng):
    """Perturb single cells independently, without morphological clustering."""
    bits = (rng.random((t_dim, c_dim)) >= p_spec).astype(np.uint8)
    return SpectroMask(bits=bits)


def sample_token_mask(prefix_len, p_tok, rng):
    """Independently zero each prefix position with probability p_tok."""
    if prefix_len < 1:
        raise DomainError("prefix_len must be at least 1")
    bits = (rng.random(prefix_len) >= p_tok).astype(np.uint8)
    return TokenMask(bits=bits)


def sample_bubble_field(t_dim, c_dim, cfg, value_range, rng):
    """Draw a noise field and round(duration * bubbles_per_second) bubbles.

    The noise is uniform over ``value_range`` (the min..max of the target
    spectrogram); bubble centers are uniform over the grid.
    """
    if t_dim < 1 or c_dim < 1:
        raise DomainError("degenerate grid dimensions")
    duration_s = t_dim * cfg.frame_stride_s
    if duration_s < cfg.width_s:
        raise DomainError(
            f"{duration_s:.3f} s input is shorter than one "
            f"{cfg.width_s:.3f} s bubble"
        )
    lo, hi = float(value_range[0]), float(value_range[1])
    noise = rng.uniform(lo, hi, size=(t_dim, c_dim))
    n_bubbles = int(math.floor(duration_s * cfg.bubbles_per_second + 0.5))
    centers_t = rng.uniform(0.0, t_dim, size=n_bubbles)
    centers_c = rng.uniform(0.0, c_dim, size=n_bubbles)

    a = cfg.width_s / cfg.frame_stride_s / 2.0
    b = cfg.height_mels / 2.0
    attenuation = np.full((t_dim, c_dim), np.inf)
    t_coord = np.arange(t_dim, dtype=np.float64)[:, None]
    c_coord = np.arange(c_dim, dtype=np.float64)[None, :]
    for tc, cc in zip(centers_t, centers_c):
        t0, t1 = max(int(tc - a), 0), min(int(tc + a) + 2, t_dim)
        c0, c1 = max(int(cc - b), 0), min(int(cc + b) + 2, c_dim)
        rho = np.sqrt(
            ((t_coord[t0:t1] - tc) / a) ** 2 + ((c_coord[:, c0:c1] - cc) / b) ** 2
        )
        sub = attenuation[t0:t1, c0:c1]
        np.minimum(sub, rho, out=sub)
    inside = attenuation <= 1.0
    attenuation = np.where(inside, attenuation, 1.0)
    bits = inside.astype(np.uint8)
    return BubbleField(
        noise=noise,
        bubble_centers=list(zip(centers_t.tolist(), centers_c.tolist())),
        mask_equivalent=SpectroMask(bits=bits),
        attenuation=attenuation,
    )


def dump_mask(path, mask):
    """Debug dump mirroring the spectrogram binary format with 0/1 values."""
    bits = np.atleast_2d(np.asarray(mask.bits))
    header = {
        "T": int(bits.shape[0]),
        "C": int(bits.shape[1]),
        "stride_s": 0.010,
        "cmvn": False,
    }
    binio.write_record(path, header, [(bits, "<f4")])


def read_mask_dump(path):
    header, payload = binio.read_record(path)
    try:
        shape = (int(header["T"]), int(header["C"]))
    except KeyError as exc:
        raise FormatError(f"{path}: mask dump header missing {exc}") from exc
    (bits,) = binio.split_payload(payload, [(shape, "<f4")])
    return bits.astype(np.uint8)


def apply_spectro_mask(x, mask):
    """Element-wise product of a spectrogram and a binary mask."""
    if x.frames.shape != mask.bits.shape:
        raise DomainError(
            f"mask shape {mask.bits.shape} does not match "
            f"spectrogram shape {x.frames.shape}"
        )
    return Spectrogram(
        frames=x.frames * mask.bits,
        frame_stride_s=x.frame_stride_s,
        window_s=x.window_s,
        cmvn_applied=x.cmvn_applied,
    )


def apply_bubble_field(x, bubbles):
    """Replace the spectrogram with noise outside bubbles, add attenuated
    noise inside them."""
    if x.frames.shape != bubbles.noise.shape:
        raise DomainError("bubble field shape does not match spectrogram")
    inside = bubbles.mask_equivalent.bits.astype(bool)
    perturbed = np.where(
        inside, x.frames + bubbles.attenuation * bubbles.noise, bubbles.noise
    )
    return Spectrogram(
        frames=perturbed,
        frame_stride_s=x.frame_stride_s,
        window_s=x.window_s,
        cmvn_applied=x.cmvn_applied,
    )
