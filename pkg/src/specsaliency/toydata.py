"""Synthetic tone corpus with known ground-truth saliency.

Each utterance is a concatenation of 0.5 s sine tones, one per letter in
{A, B, C, D}, pitched at the center of that letter's mel band so the toy
model's band energies light up in a known band x segment rectangle. The
generator writes 16 kHz WAV files, a corpus manifest, per-utterance
alignment files, and references matching the toy model's expected decode
(a C tone makes the following position come out as MARK).

Run as a module to materialize a corpus:

    python -m specsaliency.toydata out/corpus --n 8 --seed 0
"""

import argparse
import json
import wave
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, mel_center_frequencies
from .oracle import TONE_BANDS, TOK_A, TOK_B, TOK_C, TOK_D

SEGMENT_S = 0.5
TONE_AMP = 0.3
NOISE_AMP = 1e-3
LETTERS = "ABCD"
LETTER_TOKEN = {"A": TOK_A, "B": TOK_B, "C": TOK_C, "D": TOK_D}


def tone_frequencies():
    """Center frequency (Hz) of each letter's mel band."""
    centers = mel_center_frequencies()
    freqs = {}
    for letter, token in LETTER_TOKEN.items():
        lo, hi = TONE_BANDS[token]
        freqs[letter] = float(centers[lo:hi].mean())
    return freqs


def synth_tones(letters, seed=0):
    """Waveform samples for a tone sequence, with a tiny noise floor."""
    rng = np.random.default_rng(seed)
    freqs = tone_frequencies()
    seg_len = int(SEGMENT_S * SAMPLE_RATE)
    t = np.arange(seg_len) / SAMPLE_RATE
    parts = []
    for letter in letters:
        phase = rng.uniform(0, 2 * np.pi)
        parts.append(TONE_AMP * np.sin(2 * np.pi * freqs[letter] * t + phase))
    samples = np.concatenate(parts)
    samples = samples + NOISE_AMP * rng.standard_normal(len(samples))
    return np.clip(samples, -1.0, 1.0)


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    data = np.clip(np.asarray(samples) * 32767.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(data.tobytes())


def expected_decode(letters):
    """Surface words the toy model produces for a tone sequence."""
    out = []
    prev = None
    for letter in letters:
        word = "MARK" if prev == "C" else letter
        out.append(word)
        prev = word
    if prev == "C":
        out.append("MARK")
    return out


def random_tone_sequence(rng, min_segments=2, max_segments=4):
    """Random letters with two constraints that keep the decode well posed.

    C is never final, so every MARK has a following segment, and at least
    two distinct letters appear: a channel active for the whole utterance is
    flattened to zero by per-channel normalization, which would erase the
    band contrast the toy model reads.
    """
    n = int(rng.integers(min_segments, max_segments + 1))
    while True:
        letters = [LETTERS[rng.integers(0, 4)] for _ in range(n)]
        if letters[-1] == "C":
            letters[-1] = "ABD"[rng.integers(0, 3)]
        if len(set(letters)) >= 2:
            return letters


def make_corpus(out_dir, n_utts=8, seed=0, min_segments=2, max_segments=4,
                target_task="asr"):
    """Write WAVs, alignments and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for u in range(n_utts):
        letters = random_tone_sequence(rng, min_segments, max_segments)
        utt_id = f"utt{u:04d}"
        wav_path = out_dir / f"{utt_id}.wav"
        write_wav(wav_path, synth_tones(letters, seed=int(rng.integers(2**31))))
        words = expected_decode(letters)
        # tone words align to their segment; MARK has no audio span
        aligns = [
            {
                "word": word,
                "start_s": k * SEGMENT_S,
                "end_s": (k + 1) * SEGMENT_S,
            }
            for k, word in enumerate(words)
            if word != "MARK"
        ]
        align_path = out_dir / f"{utt_id}.align.json"
        align_path.write_text(json.dumps(aligns, indent=1))
        entries.append(
            {
                "id": utt_id,
                "wav_path": wav_path.name,
                "reference": " ".join(words),
                "alignment_path": align_path.name,
                "target_task": target_task,
                "letters": "".join(letters),
            }
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(entries, indent=1))
    return manifest_path


def main(argv=None):
    parser = argparse.ArgumentParser(description="Generate a toy tone corpus")
    parser.add_argument("out_dir")
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--min-segments", type=int, default=2)
    parser.add_argument("--max-segments", type=int, default=4)
    args = parser.parse_args(argv)
    path = make_corpus(
        args.out_dir, n_utts=args.n, seed=args.seed,
        min_segments=args.min_segments, max_segments=args.max_segments,
    )
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
