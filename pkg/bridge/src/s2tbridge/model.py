"""Encoder-decoder speech-to-text model served by the bridge.

A compact Transformer over 80-channel mel features: convolutional
subsampling is skipped in favor of a linear input projection, the decoder
is causal, and teacher-forced log-probabilities follow the wire convention
(output i is the distribution for the token at index i + 1 given tokens
0..i). Token masking zeroes only the token embedding; positional encodings
stay in place so masked slots keep their position.

Checkpoints are loaded from a path, or built fresh and deterministically
with the "tiny:<seed>" specifier (weights are seeded but untrained, which
is enough for protocol work and desk-scale testing).
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

BOS_ID = 0
EOS_ID = 1


@dataclass
class ModelConfig:
    vocab_size: int = 16
    n_mels: int = 80
    d_model: int = 32
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 64
    max_len: int = 256


def _sinusoidal_positions(max_len, d_model):
    pos = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, d_model, 2, dtype=torch.float32)
        * (-math.log(10000.0) / d_model)
    )
    enc = torch.zeros(max_len, d_model)
    enc[:, 0::2] = torch.sin(pos * div)
    enc[:, 1::2] = torch.cos(pos * div)
    return enc


class SpeechTransformer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.n_mels, cfg.d_model)
        self.token_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.register_buffer(
            "positions", _sinusoidal_positions(cfg.max_len, cfg.d_model)
        )
        layer = nn.TransformerEncoderLayer(
            cfg.d_model, cfg.n_heads, cfg.ffn_dim, dropout=0.0,
            batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, cfg.n_encoder_layers, enable_nested_tensor=False
        )
        dec_layer = nn.TransformerDecoderLayer(
            cfg.d_model, cfg.n_heads, cfg.ffn_dim, dropout=0.0,
            batch_first=True, norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.n_decoder_layers)
        self.out_proj = nn.Linear(cfg.d_model, cfg.vocab_size)

    def encode(self, feats):
        # feats: (T, n_mels) -> memory (1, T, d)
        x = self.input_proj(feats.unsqueeze(0))
        x = x + self.positions[: x.shape[1]].unsqueeze(0)
        return self.encoder(x)

    def decode_prefix(self, memory, tokens, token_mask=None):
        """Log-probs for each next token given the prefix so far.

        tokens: (L,) ids consumed by the decoder; returns (L, vocab) rows
        where row i conditions on tokens[0..i]. A token_mask of length L
        zeroes the token embeddings of masked slots before the positional
        encoding is added.
        """
        emb = self.token_emb(tokens.unsqueeze(0))
        if token_mask is not None:
            emb = emb * token_mask.view(1, -1, 1).to(emb.dtype)
        emb = emb + self.positions[: emb.shape[1]].unsqueeze(0)
        causal = nn.Transformer.generate_square_subsequent_mask(emb.shape[1])
        out = self.decoder(emb, memory, tgt_mask=causal)
        return torch.log_softmax(self.out_proj(out[0]), dim=-1)


class BridgeModel:
    """Inference wrapper with the wire-level conventions baked in."""

    def __init__(self, net, device="cpu"):
        self.net = net.to(device).eval()
        self.device = device
        vocab = ["<s>", "</s>"] + [f"w{i}" for i in range(2, net.cfg.vocab_size)]
        self.vocab = vocab

    @property
    def cfg(self):
        return self.net.cfg

    def _feats(self, frames):
        # copy: wire decoding hands out read-only buffers
        return torch.as_tensor(
            np.array(frames, dtype=np.float32), device=self.device
        )

    @torch.inference_mode()
    def forward_teacher(self, frames, tokens, token_mask=None):
        """Per-position log-probabilities, len(tokens) - 1 rows.

        Row i is the log-distribution for the token at index i + 1 given
        tokens[0..i], so zeroing the embedding at index j can only change
        rows for token indices strictly greater than j.
        """
        feats = self._feats(frames)
        ids = torch.as_tensor(tokens, dtype=torch.long, device=self.device)
        consumed = ids[:-1]
        mask = None
        if token_mask is not None:
            mask = torch.as_tensor(
                token_mask, dtype=torch.float32, device=self.device
            )[: len(consumed)]
        memory = self.net.encode(feats)
        return self.net.decode_prefix(memory, consumed, mask).cpu().numpy()

    @torch.inference_mode()
    def greedy_decode(self, frames, max_len=24):
        memory = self.net.encode(self._feats(frames))
        ids = [BOS_ID]
        for _ in range(max_len):
            tokens = torch.as_tensor(ids, dtype=torch.long, device=self.device)
            logp = self.net.decode_prefix(memory, tokens)
            ids.append(int(torch.argmax(logp[-1])))
            if ids[-1] == EOS_ID:
                break
        if ids[-1] != EOS_ID:
            ids.append(EOS_ID)
        return ids

    @torch.inference_mode()
    def beam_decode(self, frames, beam_size=4, max_len=24):
        """Beam search over summed log-probabilities.

        With beam_size 1 this reduces exactly to greedy decoding.
        """
        if beam_size < 1:
            raise ValueError("beam size must be at least 1")
        memory = self.net.encode(self._feats(frames))
        beams = [([BOS_ID], 0.0)]
        finished = []
        for _ in range(max_len):
            expanded = []
            for ids, score in beams:
                tokens = torch.as_tensor(ids, dtype=torch.long, device=self.device)
                logp = self.net.decode_prefix(memory, tokens)[-1]
                top = torch.topk(logp, beam_size)
                for val, idx in zip(top.values.tolist(), top.indices.tolist()):
                    expanded.append((ids + [idx], score + val))
            expanded.sort(key=lambda b: -b[1])
            beams = []
            for ids, score in expanded[: beam_size * 2]:
                if ids[-1] == EOS_ID:
                    finished.append((ids, score))
                else:
                    beams.append((ids, score))
                if len(beams) == beam_size:
                    break
            if not beams:
                break
        if not finished:
            finished = [(ids + [EOS_ID], score) for ids, score in beams]
        finished.sort(key=lambda b: -b[1])
        return finished[0][0]

    def surfaces(self, ids):
        return [self.vocab[i] for i in ids]


def build_tiny(seed=0, cfg=None):
    cfg = cfg or ModelConfig()
    torch.manual_seed(seed)
    return SpeechTransformer(cfg)


def save_checkpoint(path, net):
    torch.save({"config": asdict(net.cfg), "state_dict": net.state_dict()}, path)


def load_model(spec, device="cpu"):
    """Load from a checkpoint path, or build "tiny[:seed]" deterministically."""
    if spec.startswith("tiny"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        return BridgeModel(build_tiny(seed), device=device)
    payload = torch.load(spec, map_location="cpu", weights_only=True)
    cfg = ModelConfig(**payload["config"])
    net = SpeechTransformer(cfg)
    net.load_state_dict(payload["state_dict"])
    return BridgeModel(net, device=device)
