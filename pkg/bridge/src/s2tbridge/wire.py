"""Spectrogram payload codec for the wire protocol.

Spectrograms travel as {"T", "C", "data"} where data is the base64 encoding
of T*C little-endian float32 values, row-major by frame.
"""

import base64

import numpy as np


class WireError(ValueError):
    """Payload violates the wire contract."""


def encode_spectrogram(frames):
    frames = np.ascontiguousarray(frames).astype("<f4", copy=False)
    if frames.ndim != 2:
        raise WireError("spectrogram must be a 2-D array")
    return {
        "T": int(frames.shape[0]),
        "C": int(frames.shape[1]),
        "data": base64.b64encode(frames.tobytes()).decode("ascii"),
    }


def decode_spectrogram(payload):
    try:
        t_dim = int(payload["T"])
        c_dim = int(payload["C"])
        raw = base64.b64decode(payload["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"malformed spectrogram payload: {exc}") from exc
    if t_dim < 1 or c_dim < 1:
        raise WireError(f"degenerate spectrogram shape {t_dim}x{c_dim}")
    if len(raw) != t_dim * c_dim * 4:
        raise WireError(
            f"payload carries {len(raw)} bytes, expected {t_dim * c_dim * 4}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(t_dim, c_dim)
