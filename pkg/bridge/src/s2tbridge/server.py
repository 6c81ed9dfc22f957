"""HTTP server exposing the model behind the wire protocol.

Endpoints:
  GET  /v1/health   -> {"status", "model", "vocab_size", "beam_size"}
  POST /v1/decode   -> beam-search transcription of a spectrogram payload
  POST /v1/forward  -> teacher-forced per-position log-probabilities

The served model runs single-instance; requests are admitted up to
``max_batch`` at a time (503 beyond that) and serialized around the model.
Malformed payloads, shape mismatches, and mask-length mismatches are 400s.
"""

import threading
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .model import load_model
from .wire import WireError, decode_spectrogram


@dataclass
class BridgeConfig:
    model: str = "tiny:0"
    beam_size: int = 4
    device: str = "cpu"
    max_batch: int = 8
    port: int = 8080

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam size must be at least 1")
        if self.max_batch < 1:
            raise ValueError("max_batch must be at least 1")


def _frames_or_400(body, n_mels):
    payload = body.get("spectrogram")
    if payload is None:
        raise HTTPException(400, "missing spectrogram")
    try:
        frames = decode_spectrogram(payload)
    except WireError as exc:
        raise HTTPException(400, str(exc)) from exc
    if frames.shape[1] != n_mels:
        raise HTTPException(
            400,
            f"expected {n_mels} mel channels, got {frames.shape[1]}",
        )
    return frames


def create_app(config=None):
    config = config or BridgeConfig()
    model = load_model(config.model, device=config.device)
    app = FastAPI(title="s2tbridge")
    model_lock = threading.Lock()
    admission = threading.BoundedSemaphore(config.max_batch)

    def admitted(fn):
        if not admission.acquire(blocking=False):
            raise HTTPException(503, "server busy")
        try:
            with model_lock:
                return fn()
        finally:
            admission.release()

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok",
            "model": config.model,
            "vocab_size": model.cfg.vocab_size,
            "beam_size": config.beam_size,
        }

    @app.post("/v1/decode")
    def decode(body: dict):
        frames = _frames_or_400(body, model.cfg.n_mels)
        ids = admitted(lambda: model.beam_decode(frames, config.beam_size))
        return {"tokens": ids, "surface": model.surfaces(ids)}

    @app.post("/v1/forward")
    def forward(body: dict):
        frames = _frames_or_400(body, model.cfg.n_mels)
        tokens = body.get("tokens")
        if not isinstance(tokens, list) or len(tokens) < 2:
            raise HTTPException(400, "tokens must list at least 2 ids")
        if any(
            not isinstance(t, int) or not 0 <= t < model.cfg.vocab_size
            for t in tokens
        ):
            raise HTTPException(400, "token id outside the vocabulary")
        mask = body.get("token_mask")
        if mask is not None:
            # the final token's embedding is never consumed, so masks may
            # cover all tokens or just the len(tokens)-1 consumed positions
            if len(mask) not in (len(tokens), len(tokens) - 1):
                raise HTTPException(
                    400,
                    f"token_mask length {len(mask)} does not cover the "
                    f"{len(tokens) - 1} consumed positions",
                )
            if any(b not in (0, 1) for b in mask):
                raise HTTPException(400, "token_mask entries must be 0 or 1")
        logprobs = admitted(
            lambda: model.forward_teacher(frames, tokens, mask)
        )
        return JSONResponse(
            {
                "logprobs": np.asarray(logprobs, dtype=np.float64).tolist(),
                "vocab_size": model.cfg.vocab_size,
            }
        )

    return app
