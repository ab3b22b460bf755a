"""Neural feature encoder: a stack of multi-scale 3-d convolution blocks
(parallel branches at kernel sizes drawn from {1,3,5,7}, channel-wise
concatenation, temporal stride 2 per block) followed by spatial average
pooling and two bidirectional LSTM layers.

Blocks themselves are purely convolutional (nested kernels, no
activation); the encoder applies ReLU between blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, relu
from .errors import ShapeError, UsageError
from .nnops import conv3d, dropout, lstm_seq, spatial_mean

ALLOWED_KERNEL_SIZES = {1, 3, 5, 7}


@dataclass(frozen=True)
class NeuralSample:
    """One utterance: (T,W,H,C) grid signal, session id, target text, speech bounds."""

    signal: np.ndarray
    session_id: str
    text: str
    boundaries: tuple[int, int]


@dataclass
class BranchSpec:
    kernels: list  # [(kt,kw,kh), ...] applied as a stack
    channels: list  # output channels per kernel in the stack

    def __post_init__(self):
        if len(self.kernels) != len(self.channels):
            raise UsageError("branch needs one channel count per kernel")
        for k in self.kernels:
            if any(s not in ALLOWED_KERNEL_SIZES for s in k):
                raise UsageError(f"kernel sizes must come from {sorted(ALLOWED_KERNEL_SIZES)}, got {k}")


@dataclass
class LayerSpec:
    branches: list  # of BranchSpec
    temporal_stride: int = 2


@dataclass
class InceptionSpec:
    layers: list = field(default_factory=list)

    @property
    def total_stride(self) -> int:
        s = 1
        for layer in self.layers:
            s *= layer.temporal_stride
        return s


def default_encoder_spec(in_channels: int = 2, widths: tuple = (32, 64, 128)) -> InceptionSpec:
    """3 blocks x 4 branches with kernel menus (1,1,1),(3,3,3),(5,3,3),(7,3,3)."""
    menus = [(1, 1, 1), (3, 3, 3), (5, 3, 3), (7, 3, 3)]
    layers = []
    for width in widths:
        per_branch = width // len(menus)
        branches = [BranchSpec(kernels=[k], channels=[per_branch]) for k in menus]
        layers.append(LayerSpec(branches=branches, temporal_stride=2))
    return InceptionSpec(layers=layers)


@dataclass
class LstmLayerParams:
    fw: tuple  # (wx, wh, b)
    bw: tuple


@dataclass
class EncoderParams:
    # blocks[layer][branch][kernel] -> Tensor(kt,kw,kh,cin,cout)
    blocks: list = field(default_factory=list)
    lstm: list = field(default_factory=list)  # of LstmLayerParams


@dataclass
class LatentSequence:
    """Encoder output: (T',D) frames (as an autodiff tensor) and their rate."""

    frames: Tensor
    frame_rate: float

    @property
    def array(self) -> np.ndarray:
        return self.frames.data


def inception_block(x: Tensor, branch_params: list, layer: LayerSpec) -> Tensor:
    """One multi-scale block: parallel conv stacks concatenated channel-wise.

    The temporal stride is applied once, on the first kernel of each branch.
    Branch order is fixed by the spec and is the concatenation order.
    """
    outputs = []
    for bi, (branch, kernels) in enumerate(zip(layer.branches, branch_params)):
        h = x
        for ki, kernel in enumerate(kernels):
            stride = (layer.temporal_stride, 1, 1) if ki == 0 else (1, 1, 1)
            h = conv3d(h, kernel, strides=stride)
        outputs.append(h)
    ref = outputs[0].data.shape[:3]
    for bi, out in enumerate(outputs):
        if out.data.shape[:3] != ref:
            raise ShapeError(
                f"branch {bi} output {out.data.shape[:3]} does not match branch 0 {ref} at concatenation")
    return concat(outputs, axis=3)


def bilstm(seq: Tensor, params: LstmLayerParams, dropout_p: float = 0.0,
           training: bool = False, seed: int = 0) -> Tensor:
    """Bidirectional LSTM layer: [forward ; backward] hidden states per frame."""
    fw = lstm_seq(seq, *params.fw)
    bw = lstm_seq(seq, *params.bw, reverse=True)
    out = concat([fw, bw], axis=1)
    if dropout_p > 0:
        out = dropout(out, dropout_p, training=training, seed=seed)
    return out


def min_input_frames(spec: InceptionSpec) -> int:
    return 2 * spec.total_stride


def encode(sample: NeuralSample | Tensor, params: EncoderParams, spec: InceptionSpec,
           input_rate: float = 200.0, lstm_dropout: float = 0.5,
           training: bool = False, seed: int = 0) -> LatentSequence:
    """Map a grid signal to the latent sequence F: blocks -> ReLU -> pool -> BiLSTMs.

    The session id plays no role here; session effects enter only through
    training losses.
    """
    x = sample if isinstance(sample, Tensor) else Tensor(sample.signal)
    t = x.data.shape[0]
    need = min_input_frames(spec)
    if t < need:
        raise UsageError(f"input has {t} frames; encoder requires at least {need}")

    h = x
    for li, layer in enumerate(spec.layers):
        h = inception_block(h, params.blocks[li], layer)
        h = relu(h)
    h = spatial_mean(h)
    for li, lparams in enumerate(params.lstm):
        h = bilstm(h, lparams, dropout_p=lstm_dropout if training else 0.0,
                   training=training, seed=seed + 7919 * (li + 1))
    return LatentSequence(frames=h, frame_rate=input_rate / spec.total_stride)
