"""CTC prefix beam search with word-level language-model shallow fusion,
exposed both as batch decoding and as an incremental (feed/flush) API.

Beams track blank/non-blank path masses per prefix in natural-log space.
When a space is emitted (or at the final flush) the completed word is
scored against the n-gram model: score += lm_weight * ln(10) * log10P +
word_bonus. Ties are broken lexicographically for determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import UsageError
from .lm import BOS, ArpaModel, score_word
from .textdecoder import CharVocab

LN10 = math.log(10.0)
NEG_INF = float("-inf")


def _ladd(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


@dataclass
class DecodeConfig:
    beam_width: int = 100
    lm_weight: float = 1.5
    word_bonus: float = 0.0
    lm: Optional[ArpaModel] = None

    def __post_init__(self):
        if self.beam_width < 1:
            raise UsageError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.lm_weight < 0:
            raise UsageError(f"lm_weight must be >= 0, got {self.lm_weight}")


class BeamState:
    """One hypothesis: prefix text, blank/non-blank masses, LM bookkeeping."""

    __slots__ = ("p_blank", "p_nonblank", "lm_score", "context")

    def __init__(self, p_blank=NEG_INF, p_nonblank=NEG_INF, lm_score=0.0, context=(BOS,)):
        self.p_blank = p_blank
        self.p_nonblank = p_nonblank
        self.lm_score = lm_score
        self.context = context

    def total(self) -> float:
        return _ladd(self.p_blank, self.p_nonblank)

    def score(self) -> float:
        return self.total() + self.lm_score


class StreamDecoder:
    """Incremental prefix beam decoder over normalized posterior frames."""

    def __init__(self, config: DecodeConfig, vocab: CharVocab | None = None):
        self.config = config
        self.vocab = vocab or CharVocab()
        self.space = self.vocab.symbols.index(" ")
        self.blank = self.vocab.blank
        self._char_idx = {ch: i for i, ch in enumerate(self.vocab.symbols)}
        self._beams: dict[str, BeamState] = {"": BeamState(p_blank=0.0)}
        self._flushed = False
        self._frames_seen = 0
        if config.lm is not None and config.lm_weight > 0:
            self._lm_cache: dict | None = {}
        else:
            self._lm_cache = None

    # -- LM fusion ---------------------------------------------------------

    def _word_bonus(self, context: tuple, word: str) -> tuple[float, tuple]:
        """Weighted LM increment and updated context for a completed word."""
        cfg = self.config
        new_ctx = context
        bonus = cfg.word_bonus
        if self._lm_cache is not None:
            key = (context, word)
            cached = self._lm_cache.get(key)
            if cached is None:
                cached = cfg.lm_weight * LN10 * score_word(cfg.lm, context, word)
                self._lm_cache[key] = cached
            bonus += cached
            new_ctx = (context + (word,))[-(cfg.lm.order - 1):] if cfg.lm.order > 1 else ()
        return bonus, new_ctx

    def _extend_word(self, prefix: str, state: BeamState) -> tuple[float, tuple]:
        """LM update triggered by completing the trailing word of `prefix`."""
        cut = prefix.rfind(" ")
        word = prefix[cut + 1:]
        if not word:
            return state.lm_score, state.context
        inc, ctx = self._word_bonus(state.context, word)
        return state.lm_score + inc, ctx

    # -- frame processing ----------------------------------------------------

    def feed(self, chunk: np.ndarray) -> None:
        """Consume posterior frames (n, V); call repeatedly in temporal order."""
        if self._flushed:
            raise UsageError("feed after flush on a finished stream decoder")
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim == 1:
            chunk = chunk[None, :]
        if chunk.shape[1] != self.vocab.size:
            raise UsageError(f"posterior width {chunk.shape[1]} != vocabulary size {self.vocab.size}")
        if self._frames_seen == 0 and chunk.shape[0] > 0:
            z = float(np.logaddexp.reduce(chunk[0]))
            if abs(z) > 1e-6:
                raise UsageError(f"posteriors not normalized (frame log-sum {z:.3g})")
        for row in chunk:
            self._step(row.tolist())
            self._frames_seen += 1

    def _step(self, lp: list) -> None:
        blank = self.blank
        space = self.space
        symbols = self.vocab.symbols
        nxt: dict[str, BeamState] = {}

        def bucket(prefix: str, lm_score: float, context: tuple) -> BeamState:
            st = nxt.get(prefix)
            if st is None:
                st = BeamState(lm_score=lm_score, context=context)
                nxt[prefix] = st
            return st

        for prefix, st in self._beams.items():
            ptot = st.total()
            last = prefix[-1] if prefix else None

            # stay on this prefix: emit blank, or repeat the last symbol
            dst = bucket(prefix, st.lm_score, st.context)
            dst.p_blank = _ladd(dst.p_blank, ptot + lp[blank])
            if last is not None:
                dst.p_nonblank = _ladd(dst.p_nonblank, st.p_nonblank + lp[self._char_idx[last]])

            for ci, ch in enumerate(symbols):
                mass = st.p_blank + lp[ci] if ch == last else ptot + lp[ci]
                if mass == NEG_INF:
                    continue
                new_prefix = prefix + ch
                if ci == space:
                    lm_score, ctx = self._extend_word(prefix, st)
                else:
                    lm_score, ctx = st.lm_score, st.context
                dst = bucket(new_prefix, lm_score, ctx)
                dst.p_nonblank = _ladd(dst.p_nonblank, mass)

        if len(nxt) > self.config.beam_width:
            ranked = sorted(nxt.items(), key=lambda kv: (-kv[1].score(), kv[0]))
            nxt = dict(ranked[:self.config.beam_width])
        self._beams = nxt

    # -- results -------------------------------------------------------------

    def _finalized(self) -> list[tuple[str, float]]:
        out = []
        for prefix, st in self._beams.items():
            lm_score, _ = self._extend_word(prefix, st)
            out.append((prefix, st.total() + lm_score))
        out.sort(key=lambda kv: (-kv[1], kv[0]))
        return out

    def best(self) -> str:
        """Current best hypothesis (finalizes a snapshot; stream stays open)."""
        return self._finalized()[0][0]

    def flush(self, n_best: int = 1) -> list[tuple[str, float]]:
        """Finish the stream and return the ranked hypotheses."""
        if self._flushed:
            raise UsageError("flush called twice")
        self._flushed = True
        return self._finalized()[:n_best]


def beam_decode(post: np.ndarray, config: DecodeConfig, vocab: CharVocab | None = None,
                n_best: int = 1) -> list[tuple[str, float]]:
    """Batch prefix beam search over a full (T',V) posterior sequence."""
    dec = StreamDecoder(config, vocab)
    dec.feed(post)
    return dec.flush(n_best=n_best)


def greedy_decode(post: np.ndarray, vocab: CharVocab | None = None) -> str:
    """Best-path collapse: per-frame argmax, merge repeats, strip blanks."""
    vocab = vocab or CharVocab()
    ids = np.asarray(post).argmax(axis=1)
    out = []
    prev = -1
    for i in ids:
        if i != prev and i != vocab.blank:
            out.append(vocab.symbols[i])
        prev = i
    return "".join(out)
