"""Character decoder head: dilated residual convolution stack producing
per-frame character posteriors, and the alignment-free sequence loss
(forward-backward over blank-augmented paths, computed in log space).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, log_softmax, record
from .errors import ShapeError, UsageError
from .nnops import add_bias, conv1d_dilated, dropout

LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class CharVocab:
    """26 letters + space + apostrophe + blank; blank fixed at the last index."""

    symbols: tuple = tuple(LETTERS) + (" ", "'")

    @property
    def size(self) -> int:
        return len(self.symbols) + 1  # + blank

    @property
    def blank(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        try:
            return [self.symbols.index(ch) for ch in text]
        except ValueError:
            bad = next(ch for ch in text if ch not in self.symbols)
            raise UsageError(f"character {bad!r} not in vocabulary") from None

    def decode(self, ids) -> str:
        return "".join(self.symbols[i] for i in ids)


@dataclass
class DilatedStackSpec:
    """3 layers x 5 dilated sub-layers with per-sub-layer residuals."""

    layers: int = 3
    dilations: tuple = (1, 2, 4, 8, 16)
    filter_size: int = 11
    width: int = 256
    output_dropout: float = 0.15

    def __post_init__(self):
        if tuple(self.dilations) != (1, 2, 4, 8, 16):
            raise UsageError(f"dilation ratios are fixed at (1,2,4,8,16), got {self.dilations}")
        if self.filter_size != 11:
            raise UsageError(f"filter size is fixed at 11, got {self.filter_size}")


@dataclass
class DilatedStackParams:
    """sub[l][s] = (kernel, bias); proj maps width -> vocab via a 1-wide conv."""

    sub: list = field(default_factory=list)
    proj_w: Tensor = None
    proj_b: Tensor = None


def dilated_stack(latent: Tensor, params: DilatedStackParams, spec: DilatedStackSpec,
                  training: bool = False, seed: int = 0) -> Tensor:
    """Map a (T',D) latent sequence to (T',V) character logits."""
    h = latent
    width = latent.data.shape[1]
    if width != spec.width:
        raise ShapeError(f"latent width {width} does not match stack width {spec.width}; "
                         "residual adds need equal channels")
    from .autodiff import add, tanh
    for li in range(spec.layers):
        for si, d in enumerate(spec.dilations):
            w, b = params.sub[li][si]
            h = add(tanh(add_bias(conv1d_dilated(h, w, d), b)), h)
    if training and spec.output_dropout > 0:
        h = dropout(h, spec.output_dropout, training=True, seed=seed)
    logits = add_bias(conv1d_dilated(h, params.proj_w, 1), params.proj_b)
    return logits


def posteriors(logits: Tensor) -> Tensor:
    """Per-frame log-softmax normalization of (T',V) logits."""
    return log_softmax(logits)


# ---------------------------------------------------------------------------
# CTC loss


def min_frames(labels: list[int]) -> int:
    """Shortest posterior sequence that can align to the label sequence."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_forward_backward(logpost: np.ndarray, labels: list[int], blank: int) -> tuple[float, np.ndarray]:
    """Loss and exact gradient w.r.t. normalized log-posteriors.

    Returns (-log sum over blank-augmented alignments, dloss/dlogpost).
    """
    t_len, n_sym = logpost.shape
    need = min_frames(labels)
    if t_len < need:
        raise UsageError(
            f"target unalignable: needs >= {need} frames, posterior sequence has {t_len}")

    ext = np.empty(2 * len(labels) + 1, dtype=np.int64)
    ext[0::2] = blank
    ext[1::2] = labels
    s_len = ext.size

    y = logpost[:, ext]  # (T, S) log prob of each extended symbol per frame
    neg_inf = -np.inf

    # transitions allowed from s-2: only onto a non-blank that differs from ext[s-2]
    skip_ok = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_ok[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((t_len, s_len), neg_inf)
    alpha[0, 0] = y[0, 0]
    if s_len > 1:
        alpha[0, 1] = y[0, 1]
    with np.errstate(divide="ignore"):
        for t in range(1, t_len):
            prev = alpha[t - 1]
            stay = prev
            step = np.concatenate(([neg_inf], prev[:-1]))
            skip = np.concatenate(([neg_inf, neg_inf], prev[:-2]))
            skip = np.where(skip_ok, skip, neg_inf)
            m = np.maximum(np.maximum(stay, step), skip)
            safe = np.where(np.isfinite(m), m, 0.0)
            acc = (np.exp(stay - safe) + np.exp(step - safe) + np.exp(skip - safe))
            alpha[t] = np.where(np.isfinite(m), safe + np.log(acc), neg_inf) + y[t]

    tail = alpha[-1, -1] if s_len == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    loss = -tail

    beta = np.full((t_len, s_len), neg_inf)
    beta[-1, -1] = y[-1, -1]
    if s_len > 1:
        beta[-1, -2] = y[-1, -2]
    fwd_skip_ok = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        fwd_skip_ok[:-2] = skip_ok[2:]
    with np.errstate(divide="ignore"):
        for t in range(t_len - 2, -1, -1):
            nxt = beta[t + 1]
            stay = nxt
            step = np.concatenate((nxt[1:], [neg_inf]))
            skip = np.concatenate((nxt[2:], [neg_inf, neg_inf]))
            skip = np.where(fwd_skip_ok, skip, neg_inf)
            m = np.maximum(np.maximum(stay, step), skip)
            safe = np.where(np.isfinite(m), m, 0.0)
            acc = (np.exp(stay - safe) + np.exp(step - safe) + np.exp(skip - safe))
            beta[t] = np.where(np.isfinite(m), safe + np.log(acc), neg_inf) + y[t]

    # occupancy gamma[t,s] = alpha + beta - y (y counted twice at frame t)
    gamma = alpha + beta - y
    grad = np.zeros_like(logpost)
    with np.errstate(invalid="ignore"):
        for s in range(s_len):
            col = gamma[:, s] + loss  # log(occupancy / p_total)
            k = ext[s]
            finite = np.isfinite(col)
            contrib = np.zeros(t_len)
            contrib[finite] = np.exp(col[finite])
            grad[:, k] -= contrib
    return float(loss), grad


def ctc_loss(logpost: Tensor, target: str, vocab: CharVocab | None = None) -> Tensor:
    """Alignment loss between (T',V) log-posteriors and a character string."""
    vocab = vocab or CharVocab()
    if logpost.data.shape[1] != vocab.size:
        raise ShapeError(
            f"posterior width {logpost.data.shape[1]} does not match vocabulary size {vocab.size}")
    labels = vocab.encode(target)
    loss, grad = ctc_forward_backward(logpost.data.astype(np.float64), labels, vocab.blank)

    def vjp(g):
        return (g * grad.astype(logpost.data.dtype),)

    return record([logpost], np.asarray(loss, dtype=logpost.data.dtype), vjp)
