"""Word n-gram language model: ARPA text I/O, backoff scoring, and an
interpolated Kneser-Ney estimator with a fixed discount.

All stored log10 values are quantized to 6 decimal places at model-build
time; backoff weights are then derived from the quantized probabilities,
so serialize -> parse round-trips preserve every query score exactly and
conditional distributions still sum to 1 within 1e-6.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

from .errors import FormatError, UsageError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

LOG10_MIN = -99.0  # conventional placeholder for "never predicted"


def _q6(value: float) -> float:
    """Quantize to the float nearest a 6-decimal string (ARPA print precision)."""
    return float(f"{value:.6f}")


@dataclass
class ArpaModel:
    """Immutable n-gram store: token tuple -> (log10 prob, log10 backoff or None)."""

    order: int
    ngrams: list = field(default_factory=list)  # index n-1: dict[tuple, (prob, bow)]

    @property
    def vocab(self) -> set:
        return {key[0] for key in self.ngrams[0]}

    def counts(self) -> list[int]:
        return [len(d) for d in self.ngrams]

    def lookup(self, tokens: tuple) -> Optional[tuple]:
        n = len(tokens)
        if n == 0 or n > self.order:
            return None
        return self.ngrams[n - 1].get(tokens)


def score_word(model: ArpaModel, context: tuple, word: str) -> float:
    """log10 P(word | context) with backoff-to-shorter-context semantics."""
    vocab = model.ngrams[0]
    if (word,) not in vocab:
        word = UNK
    context = tuple(w if (w,) in vocab else UNK for w in context)
    if len(context) > model.order - 1:
        context = context[len(context) - (model.order - 1):]

    while True:
        entry = model.lookup(context + (word,))
        if entry is not None:
            return entry[0]
        if not context:
            # unigrams are guaranteed present for every vocab word incl <unk>
            return vocab[(word,)][0]
        ctx_entry = model.lookup(context)
        penalty = 0.0
        if ctx_entry is not None and ctx_entry[1] is not None:
            penalty = ctx_entry[1]
        base = score_word(model, context[1:], word)
        return penalty + base


def sentence_logprob(model: ArpaModel, words: list[str], include_eos: bool = True) -> float:
    """log10 probability of a word sequence with <s>/</s> context handling."""
    context: tuple = (BOS,)
    total = 0.0
    for w in words:
        total += score_word(model, context, w)
        context = (context + (w,))[-(model.order - 1):] if model.order > 1 else ()
    if include_eos:
        total += score_word(model, context, EOS)
    return total


# ---------------------------------------------------------------------------
# ARPA text format


def serialize_arpa(model: ArpaModel, out: TextIO) -> None:
    out.write("\\data\\\n")
    for n, grams in enumerate(model.ngrams, start=1):
        out.write(f"ngram {n}={len(grams)}\n")
    out.write("\n")
    for n, grams in enumerate(model.ngrams, start=1):
        out.write(f"\\{n}-grams:\n")
        for key in sorted(grams):
            prob, bow = grams[key]
            line = f"{prob:.6f}\t{' '.join(key)}"
            if bow is not None:
                line += f"\t{bow:.6f}"
            out.write(line + "\n")
        out.write("\n")
    out.write("\\end\\\n")


def parse_arpa(stream: Iterable[str]) -> ArpaModel:
    """Parse ARPA text into an ArpaModel, validating section counts."""
    declared: dict[int, int] = {}
    ngrams: dict[int, dict] = {}
    state = "preamble"
    current_n = 0
    saw_end = False

    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            state = "data"
            continue
        if line == "\\end\\":
            saw_end = True
            state = "done"
            continue
        if line.startswith("\\") and line.endswith("-grams:"):
            try:
                current_n = int(line[1:-len("-grams:")])
            except ValueError:
                raise FormatError(f"malformed section header {line!r}", line=lineno)
            if current_n not in declared:
                raise FormatError(f"section \\{current_n}-grams: not declared in \\data\\", line=lineno)
            ngrams.setdefault(current_n, {})
            state = "grams"
            continue
        if state == "data":
            if not line.startswith("ngram "):
                raise FormatError(f"expected 'ngram N=count', got {line!r}", line=lineno)
            try:
                lhs, rhs = line[len("ngram "):].split("=")
                declared[int(lhs)] = int(rhs)
            except ValueError:
                raise FormatError(f"malformed count line {line!r}", line=lineno)
            continue
        if state == "grams":
            parts = line.split()
            if len(parts) == current_n + 1:
                bow = None
                words = tuple(parts[1:])
            elif len(parts) == current_n + 2:
                bow = float(parts[-1])
                words = tuple(parts[1:-1])
            else:
                raise FormatError(
                    f"expected {current_n}-gram line with optional backoff, got {len(parts)} fields",
                    line=lineno)
            try:
                prob = float(parts[0])
            except ValueError:
                raise FormatError(f"malformed probability {parts[0]!r}", line=lineno)
            ngrams[current_n][words] = (prob, bow)
            continue
        if state == "preamble":
            continue  # header junk is permitted before \data\
        raise FormatError(f"unexpected content after \\end\\: {line!r}", line=lineno)

    if not declared:
        raise FormatError("no \\data\\ section found")
    if not saw_end:
        raise FormatError("truncated file: missing \\end\\ marker")
    order = max(declared)
    store: list[dict] = []
    for n in range(1, order + 1):
        grams = ngrams.get(n, {})
        want = declared.get(n, 0)
        if len(grams) != want:
            raise FormatError(f"\\data\\ declares {want} {n}-grams but section has {len(grams)}")
        store.append(grams)
    return ArpaModel(order=order, ngrams=store)


def load_arpa(path: str) -> ArpaModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return parse_arpa(fh)
        except FormatError as err:
            raise FormatError(str(err), path=path) from None


def save_arpa(model: ArpaModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        serialize_arpa(model, fh)


# ---------------------------------------------------------------------------
# estimation (interpolated Kneser-Ney, fixed discount)


def train_ngram(corpus: Iterable[str], order: int = 4, discount: float = 0.75) -> ArpaModel:
    """Estimate an n-gram model from sentences (one string of words each).

    Interpolated Kneser-Ney with a fixed discount; lower orders use
    continuation counts (raw counts for <s>-initial histories, which never
    occur as continuations). The unigram level interpolates with a uniform
    distribution over the closed vocabulary, which is what gives <unk> its
    mass.
    """
    if not 0.0 < discount < 1.0:
        raise UsageError(f"discount must be in (0,1), got {discount}")
    sentences = [s.split() for s in corpus if s.split()]
    if not sentences:
        raise UsageError("empty corpus")

    # raw counts per order: history tuple -> {word: count}
    raw: list[dict] = [defaultdict(lambda: defaultdict(int)) for _ in range(order)]
    for words in sentences:
        toks = [BOS] + words + [EOS]
        for i in range(1, len(toks)):
            for n in range(1, order + 1):
                if i - (n - 1) < 0:
                    break
                hist = tuple(toks[i - (n - 1):i])
                raw[n - 1][hist][toks[i]] += 1
    # <s> itself needs a unigram entry (placeholder prob + backoff weight)
    predicted = sorted(set(raw[0][()]) | {UNK})

    # continuation counts: cont[n-1][hist][word] = #distinct left extensions
    cont: list[dict] = [defaultdict(lambda: defaultdict(int)) for _ in range(max(order - 1, 1))]
    for n in range(2, order + 1):
        for hist, words in raw[n - 1].items():
            sub = hist[1:]
            for w in words:
                cont[n - 2][sub][w] += 1

    vocab_size = len(predicted)
    probs: list[dict] = [dict() for _ in range(order)]

    # unigram level: continuation counts interpolated with uniform over vocab
    uni_cont = cont[0][()] if order > 1 else raw[0][()]
    total = sum(uni_cont.values())
    types = len(uni_cont)
    lam = discount * types / total
    for w in predicted:
        c = uni_cont.get(w, 0)
        p = max(c - discount, 0.0) / total + lam / vocab_size
        probs[0][(w,)] = _q6(math.log10(p))
    probs[0][(BOS,)] = LOG10_MIN

    # higher orders, bottom-up; top order uses raw counts, middles use
    # continuation counts except for <s>-initial histories
    for n in range(2, order + 1):
        use_raw = (n == order)
        table = raw[n - 1] if use_raw else cont[n - 1]
        for hist in raw[n - 1]:
            counts = table.get(hist)
            if not counts:
                counts = raw[n - 1][hist]  # <s>-initial histories never continue anything
            total = sum(counts.values())
            types = len(counts)
            lam = discount * types / total
            for w, c in counts.items():
                lower = probs[n - 2][hist[1:] + (w,)]
                p = max(c - discount, 0.0) / total + lam * (10.0 ** lower)
                probs[n - 1][hist + (w,)] = _q6(math.log10(p))

    # assemble entries, then derive backoff weights from the quantized probs
    ngrams: list[dict] = []
    for n in range(1, order + 1):
        ngrams.append({key: (p, None) for key, p in probs[n - 1].items()})
    model = ArpaModel(order=order, ngrams=ngrams)

    for n in range(1, order):
        for hist in list(ngrams[n - 1]):
            seen = raw[n][hist] if hist in raw[n] else {}
            if not seen:
                bow = 0.0  # nothing to back off from; weight 1
            else:
                top = sum(10.0 ** probs[n][hist + (w,)] for w in seen)
                low = sum(10.0 ** score_word(model, hist[1:], w) for w in seen)
                num = max(1.0 - top, 1e-12)
                den = max(1.0 - low, 1e-12)
                bow = _q6(math.log10(num / den))
            prob, _ = ngrams[n - 1][hist]
            ngrams[n - 1][hist] = (prob, bow)
    return model
