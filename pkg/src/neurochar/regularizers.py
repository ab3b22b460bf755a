"""Training-time latent regularization: session-embedding calibration and
speech-feature (acoustic/articulatory) regression losses, combined with
the sequence loss under linearly decaying weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, add, concat, matmul, mse, scale
from .encoder import LatentSequence
from .errors import ShapeError, UsageError
from .nnops import add_bias


# ---------------------------------------------------------------------------
# session embeddings (skip-gram over the recording-time session sequence)


@dataclass
class SessionEmbeddingTable:
    embeddings: dict  # session_id -> (dim,) unit-norm vector
    window: int

    @property
    def dim(self) -> int:
        return next(iter(self.embeddings.values())).shape[0]

    def __contains__(self, session_id) -> bool:
        return session_id in self.embeddings

    def __getitem__(self, session_id) -> np.ndarray:
        if session_id not in self.embeddings:
            raise UsageError(f"unknown session {session_id!r} in embedding table")
        return self.embeddings[session_id]


def context_pairs(sequence: Sequence, window: int) -> list[tuple]:
    """(center, context) pairs within +-window over the ordered sequence."""
    pairs = []
    n = len(sequence)
    for i in range(n):
        for j in range(max(0, i - window), min(n, i + window + 1)):
            if j != i:
                pairs.append((sequence[i], sequence[j]))
    return pairs


def train_session_embeddings(session_sequence: Sequence, dim: int = 8, window: int = 2,
                             epochs: int = 300, lr: float = 0.05, negatives: int = 2,
                             seed: int = 0) -> SessionEmbeddingTable:
    """Skip-gram with negative sampling over session ids ordered by recording time.

    Co-occurrence within +-window makes temporally adjacent sessions end up
    with similar (unit-norm) embeddings.
    """
    order = list(dict.fromkeys(session_sequence))
    if len(order) < 2:
        warnings.warn("single session: returning one zero embedding, calibration has no signal")
        return SessionEmbeddingTable({order[0]: np.zeros(dim)} if order else {}, window)

    idx = {s: k for k, s in enumerate(order)}
    pairs = [(idx[a], idx[b]) for a, b in context_pairs(session_sequence, window)]
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(order)
    center = rng.normal(0.0, 0.1, size=(n, dim))
    context = rng.normal(0.0, 0.1, size=(n, dim))

    def sigmoid(z):
        return 1.0 / (1.0 + np.exp(-z))

    for _ in range(epochs):
        for pi in rng.permutation(len(pairs)):
            a, b = pairs[pi]
            # positive pair
            g = sigmoid(center[a] @ context[b]) - 1.0
            ga = g * context[b]
            context[b] -= lr * g * center[a]
            # negatives drawn from the other sessions
            for _ in range(negatives):
                nb = int(rng.integers(0, n - 1))
                if nb >= b:
                    nb += 1
                gneg = sigmoid(center[a] @ context[nb])
                ga += gneg * context[nb]
                context[nb] -= lr * gneg * center[a]
            center[a] -= lr * ga

    table = {}
    for s, k in idx.items():
        v = center[k]
        norm = np.linalg.norm(v)
        table[s] = v / norm if norm > 0 else v
    return SessionEmbeddingTable(table, window)


# ---------------------------------------------------------------------------
# regression heads and losses


@dataclass
class RegressionHead:
    """Learned linear map from the latent width to one target's dimension."""

    w: Tensor
    b: Tensor
    target_dim: int

    def __post_init__(self):
        if self.w.data.shape[1] != self.target_dim or self.b.data.shape != (self.target_dim,):
            raise ShapeError(
                f"head maps to {self.w.data.shape[1]} dims but target has {self.target_dim}")

    def apply(self, frames: Tensor) -> Tensor:
        return add_bias(matmul(frames, self.w), self.b)


def _frames_of(latent) -> Tensor:
    return latent.frames if isinstance(latent, LatentSequence) else latent


def session_loss(latent, session_id, head: RegressionHead, table: SessionEmbeddingTable) -> Tensor:
    """Mean squared error between the regressed latents and the session embedding."""
    frames = _frames_of(latent)
    target = table[session_id]
    pred = head.apply(frames)
    tiled = Tensor(np.broadcast_to(target.astype(frames.data.dtype),
                                   (frames.data.shape[0], target.shape[0])).copy())
    return mse(pred, tiled)


@dataclass
class RegSpec:
    """Weights and schedule for the auxiliary losses in the total objective."""

    mode: str = "independent"  # or "joint"
    alpha0: float = 1.0
    alphas: dict = field(default_factory=lambda: {"mfcc": 1.0, "akt": 1.0, "session": 1.0})
    horizon: int = 1000  # steps until the reg weights decay to exactly 0
    targets: tuple = ("mfcc", "akt", "session")
    joint_dim: int = 32

    def __post_init__(self):
        if self.mode not in ("independent", "joint"):
            raise UsageError(f"reg mode must be independent or joint, got {self.mode!r}")
        if self.alpha0 < 0 or any(a < 0 for a in self.alphas.values()):
            raise UsageError("reg weights must be >= 0")
        bad = set(self.targets) - {"mfcc", "akt", "session"}
        if bad:
            raise UsageError(f"unknown regularization targets {sorted(bad)}")


def decay(step: int, horizon: int) -> float:
    """Linear ramp from 1 at step 0 to exactly 0 at the horizon, 0 after."""
    if horizon <= 0:
        return 0.0
    return max(0.0, 1.0 - step / horizon)


def feature_reg_loss(latent, targets: Mapping[str, np.ndarray], heads: Mapping[str, RegressionHead],
                     spec: RegSpec, joint_proj: tuple | None = None) -> Tensor:
    """Weighted speech-feature regression loss on the latent frames.

    independent mode: sum_i alpha_i * mse(head_i(F), target_i).
    joint mode: mse(head_joint(F), Omega(concat(targets))) with Omega a
    learned linear projection to a joint basis.
    """
    frames = _frames_of(latent)
    t_frames = frames.data.shape[0]
    names = [n for n in spec.targets if n != "session" and n in targets]
    for name in names:
        if targets[name].shape[0] != t_frames:
            raise ShapeError(
                f"target {name!r} has {targets[name].shape[0]} frames, latent has {t_frames}; "
                "resample targets to the latent rate first")

    if spec.mode == "independent":
        pieces = []
        for name in names:
            alpha = spec.alphas.get(name, 0.0)
            if alpha == 0.0:
                continue
            target = Tensor(targets[name].astype(frames.data.dtype))
            pieces.append(scale(mse(heads[name].apply(frames), target), alpha))
        if not pieces:
            return Tensor(np.zeros((), dtype=frames.data.dtype))
        out = pieces[0]
        for piece in pieces[1:]:
            out = add(out, piece)
        return out

    if joint_proj is None:
        raise UsageError("joint mode needs the learned projection (w, b)")
    w, b = joint_proj
    stacked = Tensor(np.concatenate([targets[n] for n in names], axis=1).astype(frames.data.dtype))
    projected = add_bias(matmul(stacked, w), b)
    alpha = spec.alphas.get("joint", 1.0)
    return scale(mse(heads["joint"].apply(frames), projected), alpha)


def total_loss(seq_loss: Tensor, reg_losses: Mapping[str, Tensor], spec: RegSpec, step: int) -> Tensor:
    """alpha0 * sequence loss + decay(step) * sum_i alpha_i * reg loss_i."""
    if step < 0:
        raise UsageError(f"step must be >= 0, got {step}")
    out = scale(seq_loss, spec.alpha0)
    d = decay(step, spec.horizon)
    if d == 0.0:
        return out
    for name, loss in reg_losses.items():
        alpha = spec.alphas.get(name, 0.0)
        if alpha == 0.0:
            continue
        out = add(out, scale(loss, d * alpha))
    return out


def resample_to_frames(series: np.ndarray, n_out: int, stride: int) -> np.ndarray:
    """Linearly interpolate a (T,dim) series at latent frame centers."""
    t_in = series.shape[0]
    centers = (np.arange(n_out) + 0.5) * stride - 0.5
    xs = np.arange(t_in, dtype=np.float64)
    out = np.empty((n_out, series.shape[1]), dtype=series.dtype)
    for d in range(series.shape[1]):
        out[:, d] = np.interp(centers, xs, series[:, d])
    return out


def session_variance_ratio(frames_by_session: Mapping[str, np.ndarray]) -> float:
    """Between-session over within-session variance of latent frames.

    Between: mean squared distance of session means from their grand mean.
    Within: mean (over sessions) of the frames' squared distance to their
    session mean.
    """
    means = {s: f.mean(axis=0) for s, f in frames_by_session.items()}
    grand = np.mean(list(means.values()), axis=0)
    between = float(np.mean([np.sum((m - grand) ** 2) for m in means.values()]))
    within = float(np.mean([np.mean(np.sum((f - means[s]) ** 2, axis=1))
                            for s, f in frames_by_session.items()]))
    return between / within if within > 0 else float("inf")
