"""Deterministic synthetic stand-in for clinical recordings.

A seeded forward model turns character strings into articulatory (33-d)
and acoustic-surrogate (26-d) trajectories and mixes them onto a W x H x 2
electrode grid with per-electrode latencies, session gain/offset/drift
distortions, dead channels, and noise. Everything derives from explicit
seeds, so regeneration is bit-identical.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .blobio import read_blob, write_blob
from .errors import FormatError, UsageError
from .textdecoder import CharVocab

FRAMES_PER_CHAR = (10, 30)  # 50-150 ms at 200 Hz


@dataclass
class ForwardModelSpec:
    grid: tuple = (8, 8)
    channels: int = 2
    sample_rate: float = 200.0
    akt_dim: int = 33
    mfcc_dim: int = 26
    max_latency_frames: int = 20  # 100 ms lead
    noise_level: float = 0.05
    smoothing_window: int = 9
    lowpass_window: int = 15
    silence_frames: tuple = (30, 60)
    gain_range: tuple = (0.7, 1.3)
    offset_scale: float = 0.2
    drift_amplitude: float = 0.1
    drift_period_s: float = 8.0
    dead_channel_fraction: float = 0.03


@dataclass
class SessionProfile:
    session_id: str
    gain: np.ndarray  # (E, channels); 0 on dead channels
    offset: np.ndarray
    drift_amp: np.ndarray
    drift_phase: np.ndarray
    dead: np.ndarray  # (E,) bool
    noise_seed: int


@dataclass
class Utterance:
    text: str
    akt: np.ndarray  # (T, 33)
    mfcc: np.ndarray  # (T, 26)
    neural: np.ndarray  # (T, W, H, channels)
    session_id: str
    boundaries: tuple[int, int]  # speech onset/offset frame indices


@dataclass
class ForwardModel:
    """Seed-derived fixed pieces: prototypes, mixing matrices, latencies."""

    spec: ForwardModelSpec
    prototypes: np.ndarray  # (n_chars, akt_dim); space row is zero (rest)
    mix: np.ndarray  # (channels, akt_dim, E)
    mfcc_map: np.ndarray  # (akt_dim, mfcc_dim)
    latencies: np.ndarray  # (E,) int frames


def build_forward_model(spec: ForwardModelSpec, seed: int) -> ForwardModel:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 11])))
    vocab = CharVocab()
    n_chars = len(vocab.symbols)
    prototypes = rng.uniform(-1.0, 1.0, size=(n_chars, spec.akt_dim))
    prototypes[vocab.symbols.index(" ")] = 0.0
    n_elec = spec.grid[0] * spec.grid[1]
    mix = rng.normal(0.0, 1.0, size=(spec.channels, spec.akt_dim, n_elec)) / np.sqrt(spec.akt_dim)
    mfcc_map = rng.normal(0.0, 1.0, size=(spec.akt_dim, spec.mfcc_dim)) / np.sqrt(spec.akt_dim)
    latencies = rng.integers(0, spec.max_latency_frames + 1, size=n_elec)
    return ForwardModel(spec, prototypes, mix, mfcc_map, latencies)


def make_session_profiles(spec: ForwardModelSpec, n_sessions: int, seed: int) -> list[SessionProfile]:
    profiles = []
    n_elec = spec.grid[0] * spec.grid[1]
    for si in range(n_sessions):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 23, si])))
        gain = rng.uniform(*spec.gain_range, size=(n_elec, spec.channels))
        offset = rng.uniform(-spec.offset_scale, spec.offset_scale, size=(n_elec, spec.channels))
        drift_amp = rng.uniform(0.0, spec.drift_amplitude, size=(n_elec, spec.channels))
        drift_phase = rng.uniform(0.0, 2 * np.pi, size=(n_elec, spec.channels))
        dead = rng.random(n_elec) < spec.dead_channel_fraction
        gain[dead] = 0.0
        offset[dead] = 0.0
        drift_amp[dead] = 0.0
        profiles.append(SessionProfile(
            session_id=f"s{si:02d}", gain=gain, offset=offset, drift_amp=drift_amp,
            drift_phase=drift_phase, dead=dead, noise_seed=int(rng.integers(0, 2 ** 31))))
    return profiles


# ---------------------------------------------------------------------------
# corpus generation


def _make_words(vocab_size: int, word_len_range: tuple, rng) -> list[str]:
    letters = "abcdefghijklmnopqrstuvwxyz"
    words: list[str] = []
    seen = set()
    while len(words) < vocab_size:
        length = int(rng.integers(word_len_range[0], word_len_range[1] + 1))
        w = "".join(letters[int(i)] for i in rng.integers(0, 26, size=length))
        if length >= 4 and rng.random() < 0.1:
            w = w[:-1] + "'" + w[-1]  # occasional contraction-style apostrophe
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def gen_corpus(vocab_size: int, n_sentences: int, sentence_len_range: tuple = (3, 6),
               seed: int = 0, word_len_range: tuple = (2, 6)) -> list[str]:
    """Deterministic pseudo-random sentences over a generated word list.

    Word usage is Zipf-weighted and chained through a sparse first-order
    transition preference, so an n-gram model has real structure to learn.
    """
    if vocab_size < 2:
        raise UsageError(f"vocab_size must be >= 2, got {vocab_size}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 37])))
    words = _make_words(vocab_size, word_len_range, rng)
    zipf = 1.0 / np.arange(1, vocab_size + 1) ** 1.1
    zipf /= zipf.sum()
    # each word prefers a few successors
    trans = np.tile(zipf, (vocab_size, 1))
    for i in range(vocab_size):
        favored = rng.choice(vocab_size, size=min(3, vocab_size), replace=False)
        trans[i, favored] *= 8.0
    trans /= trans.sum(axis=1, keepdims=True)

    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(sentence_len_range[0], sentence_len_range[1] + 1))
        idx = int(rng.choice(vocab_size, p=zipf))
        picks = [idx]
        for _ in range(length - 1):
            idx = int(rng.choice(vocab_size, p=trans[idx]))
            picks.append(idx)
        sentences.append(" ".join(words[i] for i in picks))
    return sentences


# ---------------------------------------------------------------------------
# utterance synthesis


def _box_smooth(series: np.ndarray, window: int) -> np.ndarray:
    """Moving average along axis 0 with edge replication; length-preserving."""
    if window <= 1:
        return series
    half = window // 2
    padded = np.concatenate([
        np.repeat(series[:1], half, axis=0), series,
        np.repeat(series[-1:], window - 1 - half, axis=0)])
    csum = np.cumsum(padded, axis=0)
    out = (csum[window - 1:] - np.concatenate([np.zeros((1,) + series.shape[1:]), csum[:-window]])) / window
    return out.astype(series.dtype)


def synth_utterance(text: str, session: SessionProfile, model: ForwardModel, seed: int) -> Utterance:
    """Generate one utterance from its text under a session's distortions."""
    spec = model.spec
    vocab = CharVocab()
    labels = vocab.encode(text)  # raises on unknown characters
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, session.noise_seed, 51])))

    durations = rng.integers(FRAMES_PER_CHAR[0], FRAMES_PER_CHAR[1] + 1, size=len(labels))
    lead = int(rng.integers(spec.silence_frames[0], spec.silence_frames[1] + 1))
    trail = int(rng.integers(spec.silence_frames[0], spec.silence_frames[1] + 1))

    core = np.repeat(model.prototypes[labels], durations, axis=0)
    akt = np.concatenate([
        np.zeros((lead, spec.akt_dim)), core, np.zeros((trail, spec.akt_dim))])
    akt = _box_smooth(akt, spec.smoothing_window)
    t_total = akt.shape[0]

    mfcc = akt @ model.mfcc_map
    mfcc = mfcc + 0.2 * np.tanh(mfcc)
    mfcc = mfcc + rng.normal(0.0, spec.noise_level, size=mfcc.shape)

    # per-electrode latency: electrode e at time t sees akt[t + latency_e]
    max_lat = int(model.latencies.max()) if model.latencies.size else 0
    akt_pad = np.concatenate([akt, np.repeat(akt[-1:], max_lat, axis=0)]) if max_lat else akt
    n_elec = spec.grid[0] * spec.grid[1]
    clean = np.empty((spec.channels, t_total, n_elec))
    for lat in np.unique(model.latencies):
        cols = np.nonzero(model.latencies == lat)[0]
        seg = akt_pad[lat:lat + t_total]
        for ch in range(spec.channels):
            clean[ch][:, cols] = seg @ model.mix[ch][:, cols]
    if spec.channels > 1:
        clean[1] = _box_smooth(clean[1], spec.lowpass_window)  # low-frequency surrogate

    tt = np.arange(t_total)[:, None]
    period = spec.drift_period_s * spec.sample_rate
    neural = np.empty((t_total, n_elec, spec.channels))
    for ch in range(spec.channels):
        drift = session.drift_amp[:, ch] * np.sin(2 * np.pi * tt / period + session.drift_phase[:, ch])
        sig = clean[ch] * session.gain[:, ch] + session.offset[:, ch] + drift
        noise = rng.normal(0.0, spec.noise_level, size=sig.shape)
        noise[:, session.dead] = 0.0
        neural[:, :, ch] = sig + noise
    neural = neural.reshape(t_total, spec.grid[0], spec.grid[1], spec.channels)

    return Utterance(text=text, akt=akt.astype(np.float32), mfcc=mfcc.astype(np.float32),
                     neural=neural.astype(np.float32), session_id=session.session_id,
                     boundaries=(lead, lead + int(durations.sum())))


def jitter(utt: Utterance, max_jitter_s: float = 0.25, seed: int = 0,
           sample_rate: float = 200.0) -> Utterance:
    """Shift window onset and offset independently by uniform +-max_jitter.

    The text target never changes. Shifts that would run past the recorded
    window (or eat all speech) are clamped with a warning.
    """
    if max_jitter_s == 0.0:
        return utt
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 67])))
    max_f = max_jitter_s * sample_rate
    d_on = int(round(rng.uniform(-max_f, max_f)))
    d_off = int(round(rng.uniform(-max_f, max_f)))
    t_total = utt.neural.shape[0]
    on, off = utt.boundaries

    start = d_on
    end = t_total + d_off
    clamped = False
    if start < 0:
        start, clamped = 0, True
    if end > t_total:
        end, clamped = t_total, True
    if start > on:  # keep at least one frame of speech on each side
        start = min(start, off - 1)
    if end < off:
        end = max(end, on + 1)
    if end - start < 2:
        start, end, clamped = 0, t_total, True
    if clamped:
        warnings.warn("jitter clamped to the recorded window")

    return replace(
        utt,
        akt=utt.akt[start:end], mfcc=utt.mfcc[start:end], neural=utt.neural[start:end],
        boundaries=(max(on - start, 0), min(off, end) - start))


def zscore_per_session(utterances: Sequence[Utterance]) -> list[Utterance]:
    """Per session, per grid channel: mean 0, sd 1. Dead (all-zero) channels stay 0."""
    by_session: dict[str, list[int]] = {}
    for i, u in enumerate(utterances):
        by_session.setdefault(u.session_id, []).append(i)
    out: list[Utterance] = list(utterances)
    for session, idxs in by_session.items():
        stacked = np.concatenate([utterances[i].neural.reshape(utterances[i].neural.shape[0], -1)
                                  for i in idxs])
        if stacked.shape[0] < 2:
            raise UsageError(f"session {session!r} has fewer than 2 frames; cannot z-score")
        mean = stacked.mean(axis=0)
        sd = stacked.std(axis=0)
        dead = (sd == 0) & (mean == 0)
        flat = (sd == 0) & ~dead
        if flat.any():
            warnings.warn(f"session {session!r}: {int(flat.sum())} zero-variance live channels left centered")
        scale = np.where(sd == 0, 1.0, sd)
        for i in idxs:
            u = utterances[i]
            shape = u.neural.shape
            arr = u.neural.reshape(shape[0], -1).astype(np.float64)
            arr = (arr - np.where(dead, 0.0, mean)) / scale
            out[i] = replace(u, neural=arr.reshape(shape).astype(np.float32))
    return out


# ---------------------------------------------------------------------------
# dataset assembly and on-disk layout


@dataclass
class Dataset:
    utterances: list
    sessions: list  # SessionProfile order = recording order of blocks
    train_idx: list
    test_idx: list
    meta: dict = field(default_factory=dict)

    @property
    def train(self) -> list:
        return [self.utterances[i] for i in self.train_idx]

    @property
    def test(self) -> list:
        return [self.utterances[i] for i in self.test_idx]

    def session_sequence(self) -> list[str]:
        seq = []
        for u in self.utterances:
            if not seq or seq[-1] != u.session_id:
                seq.append(u.session_id)
        return seq


def build_dataset(sentences: Sequence[str], n_test: int, spec: ForwardModelSpec,
                  n_sessions: int, seed: int, zscore: bool = True) -> Dataset:
    """Synthesize a dataset: contiguous session blocks, per-block tail held out.

    Utterance i derives its own seed from (seed, i), so generation order or
    parallelism cannot change the output.
    """
    model = build_forward_model(spec, seed)
    profiles = make_session_profiles(spec, n_sessions, seed)
    n = len(sentences)
    block = -(-n // n_sessions)
    utts = []
    for i, text in enumerate(sentences):
        session = profiles[min(i // block, n_sessions - 1)]
        utts.append(synth_utterance(text, session, model, seed=seed * 1_000_003 + i))
    if zscore:
        utts = zscore_per_session(utts)

    test_idx: list[int] = []
    per_block = -(-n_test // n_sessions)
    for si in range(n_sessions):
        lo, hi = si * block, min((si + 1) * block, n)
        take = min(per_block, n_test - len(test_idx))
        test_idx.extend(range(hi - take, hi))
    test_idx = sorted(test_idx[:n_test])
    train_idx = [i for i in range(n) if i not in set(test_idx)]
    meta = {"seed": seed, "n_sessions": n_sessions, "grid": list(spec.grid),
            "sample_rate": spec.sample_rate, "n_train": len(train_idx), "n_test": len(test_idx)}
    return Dataset(utts, profiles, train_idx, test_idx, meta)


def save_dataset(ds: Dataset, out_dir: str) -> None:
    os.makedirs(os.path.join(out_dir, "blobs"), exist_ok=True)
    records = []
    for i, u in enumerate(ds.utterances):
        rel = f"blobs/utt_{i:05d}.bin"
        offsets = {}
        with open(os.path.join(out_dir, rel), "wb") as fh:
            pos = 0
            for name, arr in (("neural", u.neural), ("akt", u.akt), ("mfcc", u.mfcc)):
                offsets[name] = pos
                pos += write_blob(fh, arr)
        records.append({"id": i, "text": u.text, "session_id": u.session_id,
                        "frames": int(u.neural.shape[0]),
                        "boundaries": list(u.boundaries), "file": rel, "offsets": offsets})
    with open(os.path.join(out_dir, "manifest.jsonl"), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    meta = dict(ds.meta)
    meta["train_idx"] = ds.train_idx
    meta["test_idx"] = ds.test_idx
    with open(os.path.join(out_dir, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_dataset(path: str) -> Dataset:
    meta_path = os.path.join(path, "dataset.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise FormatError("dataset.json not found", path=path) from None
    except json.JSONDecodeError as err:
        raise FormatError(f"malformed dataset.json: {err}", path=meta_path) from None
    utts = []
    with open(os.path.join(path, "manifest.jsonl"), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise FormatError(f"malformed manifest record: {err}", line=lineno) from None
            blob_path = os.path.join(path, rec["file"])
            arrays = {}
            with open(blob_path, "rb") as bf:
                for name in ("neural", "akt", "mfcc"):
                    bf.seek(rec["offsets"][name])
                    arrays[name] = read_blob(bf, path=blob_path)
            utts.append(Utterance(text=rec["text"], akt=arrays["akt"], mfcc=arrays["mfcc"],
                                  neural=arrays["neural"], session_id=rec["session_id"],
                                  boundaries=tuple(rec["boundaries"])))
    train_idx = meta.pop("train_idx")
    test_idx = meta.pop("test_idx")
    return Dataset(utts, [], train_idx, test_idx, meta)
