"""Alpha-GAN components for 4D sequences.

Every network treats a batch of sequences as ``[B, T, D, H, W]``. Spatial
features come from a 3D conv stack shared across frames, giving ``[B, T, F]``;
a temporal stage of one of five kinds then collapses (encoder, discriminator)
or expands (generator) the time axis.
"""

from __future__ import annotations

import contextlib
import functools
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ValidationError
from .seqvol import ASD, HC

CONV1D = "conv1d"
LSTM = "lstm"
BILSTM = "bilstm"
ATTN_PE = "attn_pe"
ATTN_NOPE = "attn_nope"
TEMPORAL_KINDS = (CONV1D, LSTM, BILSTM, ATTN_PE, ATTN_NOPE)

# one-hot column per class; ASD is the positive class downstream
CLASS_INDEX = {HC: 0, ASD: 1}
INDEX_CLASS = {v: k for k, v in CLASS_INDEX.items()}


# --------------------------------------------------------------------------
# shape arithmetic


def conv_output_shape(in_len: int, kernel: int, stride: int, pad: int, layer: str = "conv") -> int:
    if in_len < 1 or kernel < 1 or stride < 1 or pad < 0:
        raise ConfigError(f"{layer}: invalid geometry in={in_len} k={kernel} s={stride} p={pad}")
    out = (in_len + 2 * pad - kernel) // stride + 1
    if out <= 0:
        raise ConfigError(
            f"{layer}: input length {in_len} too short for kernel {kernel} (stride {stride}, pad {pad})"
        )
    return out


def default_pad(kernel: int, stride: int) -> int:
    return (kernel - stride) // 2


def conv_trace(spatial: Sequence[int], layers: Sequence[Sequence[int]], name: str = "conv") -> list[tuple[int, ...]]:
    """Per-layer output shapes of a conv stack; ``layers`` holds
    ``(kernel, stride, channels)`` triples."""
    shape = tuple(spatial)
    trace = []
    for i, (k, s, _c) in enumerate(layers):
        p = default_pad(k, s)
        shape = tuple(conv_output_shape(n, k, s, p, layer=f"{name}[{i}]") for n in shape)
        trace.append(shape)
    return trace


def transpose_output_padding(in_len: int, target: int, kernel: int, stride: int, pad: int, layer: str) -> int:
    base = (in_len - 1) * stride - 2 * pad + kernel
    extra = target - base
    if extra < 0 or extra >= stride:
        raise ConfigError(f"{layer}: transpose conv cannot map length {in_len} back to {target}")
    return extra


def temporal_trace(T: int, kernel: int, stride: int, pads: Sequence[int]) -> list[int]:
    lengths = []
    n = T
    for i, p in enumerate(pads):
        n = conv_output_shape(n, kernel, stride, p, layer=f"temporal conv1d[{i}]")
        lengths.append(n)
    return lengths


# --------------------------------------------------------------------------
# config


@dataclass
class ArchConfig:
    dims: tuple[int, int, int, int] = (24, 16, 16, 16)
    encoder_conv: list[tuple[int, int, int]] = field(
        default_factory=lambda: [(16, 2, 2), (8, 2, 4), (4, 2, 8), (2, 1, 8)]
    )
    disc_conv: list[tuple[int, int, int]] = field(default_factory=lambda: [(8, 4, 2), (4, 2, 4), (4, 1, 8)])
    z_dim: int = 64
    temporal_kind: str = CONV1D
    disc_temporal_kind: str | None = None
    conv1d_layers: int = 2
    conv1d_kernel: int = 8
    conv1d_stride: int = 4
    conv1d_pad: int = 4
    lstm_layers: int = 2
    attn_layers: int = 1
    attn_heads: int = 1
    disc_mlp: tuple[int, ...] = (32,)
    code_mlp: tuple[int, ...] = (64, 64)
    n_classes: int = 2
    leak: float = 0.2

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.encoder_conv = [tuple(int(v) for v in layer) for layer in self.encoder_conv]
        self.disc_conv = [tuple(int(v) for v in layer) for layer in self.disc_conv]
        self.disc_mlp = tuple(int(v) for v in self.disc_mlp)
        self.code_mlp = tuple(int(v) for v in self.code_mlp)

    @classmethod
    def paper(cls, **overrides) -> "ArchConfig":
        base = dict(
            dims=(146, 91, 109, 91),
            encoder_conv=[(16, 2, 4), (8, 2, 8), (4, 2, 16), (2, 1, 24)],
            disc_conv=[(8, 4, 4), (4, 2, 8), (4, 1, 16)],
            z_dim=864,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"arch: unknown fields {unknown}")
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["encoder_conv"] = [list(x) for x in self.encoder_conv]
        d["disc_conv"] = [list(x) for x in self.disc_conv]
        d["disc_mlp"] = list(self.disc_mlp)
        d["code_mlp"] = list(self.code_mlp)
        return d

    @property
    def disc_kind(self) -> str:
        return self.disc_temporal_kind or self.temporal_kind

    def encoder_trace(self):
        return conv_trace(self.dims[1:], self.encoder_conv, "encoder_conv")

    def disc_trace(self):
        return conv_trace(self.dims[1:], self.disc_conv, "disc_conv")

    def frame_features(self, which: str = "encoder") -> int:
        layers = self.encoder_conv if which == "encoder" else self.disc_conv
        trace = self.encoder_trace() if which == "encoder" else self.disc_trace()
        return layers[-1][2] * math.prod(trace[-1])

    def validate(self) -> "ArchConfig":
        if len(self.dims) != 4 or min(self.dims) < 1:
            raise ConfigError(f"arch.dims must be 4 positive ints, got {self.dims}")
        if self.z_dim < 1:
            raise ConfigError("arch.z_dim must be >= 1")
        for name, layers in (("encoder_conv", self.encoder_conv), ("disc_conv", self.disc_conv)):
            if not layers:
                raise ConfigError(f"arch.{name} must have at least one layer")
            for i, (k, s, c) in enumerate(layers):
                if not (k >= s >= 1) or c < 1:
                    raise ConfigError(f"arch.{name}[{i}]: need kernel >= stride >= 1 and channels >= 1")
        for kind in (self.temporal_kind, self.disc_kind):
            if kind not in TEMPORAL_KINDS:
                raise ConfigError(f"arch: unknown temporal kind {kind!r}; expected one of {TEMPORAL_KINDS}")
        self.encoder_trace()
        self.disc_trace()
        _check_inverse(self.dims[1:], self.encoder_conv)
        for which, kind in (("encoder", self.temporal_kind), ("disc", self.disc_kind)):
            feats = self.frame_features(which)
            if kind == BILSTM and feats % 2:
                raise ConfigError(f"arch: bilstm needs an even feature count, {which} has {feats}")
            if kind in (ATTN_PE, ATTN_NOPE) and feats % self.attn_heads:
                raise ConfigError(f"arch: {which} features {feats} not divisible by attn_heads {self.attn_heads}")
            if kind == CONV1D:
                if not self.conv1d_kernel >= self.conv1d_stride >= 1:
                    raise ConfigError("arch: conv1d needs kernel >= stride >= 1")
                lengths = temporal_trace(self.dims[0], self.conv1d_kernel, self.conv1d_stride, self.conv1d_pads)
                if which == "encoder":
                    _check_temporal_inverse(self.dims[0], lengths, self)
        return self

    @property
    def conv1d_pads(self) -> list[int]:
        return [self.conv1d_pad] * self.conv1d_layers


def _check_inverse(spatial, layers):
    shapes = [tuple(spatial)] + conv_trace(spatial, layers)
    for i in reversed(range(len(layers))):
        k, s, _ = layers[i]
        for a, b in zip(shapes[i + 1], shapes[i]):
            transpose_output_padding(a, b, k, s, default_pad(k, s), f"generator deconv[{i}]")


def _check_temporal_inverse(T, lengths, cfg):
    targets = [T] + lengths
    for i in reversed(range(len(lengths))):
        transpose_output_padding(
            targets[i + 1], targets[i], cfg.conv1d_kernel, cfg.conv1d_stride, cfg.conv1d_pads[i], f"temporal deconv[{i}]"
        )


# --------------------------------------------------------------------------
# conv layers with a checked backward
#
# On some CPU builds the oneDNN float32 conv3d backward returns corrupt weight
# gradients for particular geometries (seen: k=8, s=2, p=3 on an 8^3 input).
# Each geometry is probed once against the native kernels; layers that
# disagree run their backward pass natively.


class _NativeBackwardConv(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, weight, bias, stride, padding, output_padding, transposed):
        ctx.save_for_backward(x, weight)
        ctx.conf = (stride, padding, output_padding, transposed, bias is not None)
        dil = [1] * len(stride)
        return torch.ops.aten.convolution(x, weight, bias, stride, padding, dil, transposed, output_padding, 1)

    @staticmethod
    def backward(ctx, grad):
        x, weight = ctx.saved_tensors
        stride, padding, output_padding, transposed, has_bias = ctx.conf
        out_ch = weight.shape[1] if transposed else weight.shape[0]
        mask = [ctx.needs_input_grad[0], ctx.needs_input_grad[1], has_bias and ctx.needs_input_grad[2]]
        with _mkldnn(False):
            gi, gw, gb = torch.ops.aten.convolution_backward(
                grad, x, weight, [out_ch] if has_bias else None, stride, padding, [1] * len(stride),
                transposed, output_padding, 1, mask,
            )
        return gi, gw, gb, None, None, None, None


@contextlib.contextmanager
def _mkldnn(enabled: bool):
    # toggling the backend also resets its TF32 flag, which warns on CPU builds
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="TF32 acceleration on top of oneDNN")
        with torch.backends.mkldnn.flags(enabled=enabled):
            yield


@functools.lru_cache(maxsize=None)
def _fast_backward_ok(transposed, in_ch, out_ch, kernel, stride, pad, out_pad, spatial) -> bool:
    if not torch.backends.mkldnn.is_available():
        return True
    gen = torch.Generator().manual_seed(0)
    cls = nn.ConvTranspose3d if transposed else nn.Conv3d
    kw = {"output_padding": out_pad} if transposed else {}
    conv = cls(in_ch, out_ch, kernel, stride, pad, **kw)
    x = torch.randn((1, in_ch) + spatial, generator=gen)
    grads = []
    for enabled in (True, False):
        with _mkldnn(enabled):
            conv.zero_grad()
            xx = x.clone().requires_grad_(True)
            y = conv(xx)
            (y * torch.rand(y.shape, generator=torch.Generator().manual_seed(1))).sum().backward()
            grads.append((conv.weight.grad.clone(), xx.grad.clone()))
    for fast, ref in zip(*grads):
        if not torch.isfinite(fast).all() or (fast - ref).abs().max() > 1e-3 * (ref.abs().max() + 1e-12):
            return False
    return True


class CheckedConv3d(nn.Conv3d):
    def __init__(self, in_ch, out_ch, kernel, stride, pad, spatial):
        super().__init__(in_ch, out_ch, kernel, stride, pad)
        self._native = not _fast_backward_ok(False, in_ch, out_ch, kernel, stride, pad, (0, 0, 0), tuple(spatial))

    def forward(self, x):
        if self._native and x.dtype == torch.float32 and torch.is_grad_enabled():
            return _NativeBackwardConv.apply(x, self.weight, self.bias, self.stride, self.padding, (0, 0, 0), False)
        return super().forward(x)


class CheckedConvTranspose3d(nn.ConvTranspose3d):
    def __init__(self, in_ch, out_ch, kernel, stride, pad, output_padding, spatial):
        super().__init__(in_ch, out_ch, kernel, stride, pad, output_padding=output_padding)
        self._native = not _fast_backward_ok(
            True, in_ch, out_ch, kernel, stride, pad, tuple(output_padding), tuple(spatial)
        )

    def forward(self, x):
        if self._native and x.dtype == torch.float32 and torch.is_grad_enabled():
            return _NativeBackwardConv.apply(
                x, self.weight, self.bias, self.stride, self.padding, self.output_padding, True
            )
        return super().forward(x)


# --------------------------------------------------------------------------
# building blocks


def sinusoidal_encoding(T: int, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Additive sin/cos encoding indexed by frame number, shape ``[T, dim]``."""
    pos = torch.arange(T, dtype=torch.float64, device=device)[:, None]
    i = torch.arange(dim, device=device)
    rates = torch.pow(10000.0, -(2 * (i // 2)).to(torch.float64) / dim)
    angles = pos * rates[None, :]
    pe = torch.where(i % 2 == 0, torch.sin(angles), torch.cos(angles))
    return pe.to(dtype)


class FrameConvStack(nn.Module):
    """3D convs applied to every frame with shared weights: [B,T,D,H,W] -> [B,T,F]."""

    def __init__(self, spatial, layers, leak):
        super().__init__()
        self.spatial = tuple(spatial)
        convs = []
        in_ch = 1
        shapes = [tuple(spatial)] + conv_trace(spatial, layers)
        for (k, s, c), shape in zip(layers, shapes):
            convs.append(CheckedConv3d(in_ch, c, k, s, default_pad(k, s), shape))
            in_ch = c
        self.convs = nn.ModuleList(convs)
        self.leak = leak
        self.out_shape = (layers[-1][2],) + conv_trace(spatial, layers)[-1]
        self.out_features = math.prod(self.out_shape)

    def forward(self, x):
        B, T = x.shape[:2]
        h = x.reshape(B * T, 1, *x.shape[2:])
        for conv in self.convs:
            h = F.leaky_relu(conv(h), self.leak)
        return h.reshape(B, T, -1)


class FrameDeconvStack(nn.Module):
    """Inverse of :class:`FrameConvStack` using transposed convs: [B,T,F] -> [B,T,D,H,W]."""

    def __init__(self, spatial, layers, leak):
        super().__init__()
        shapes = [tuple(spatial)] + conv_trace(spatial, layers)
        channels = [1] + [c for _, _, c in layers]
        deconvs = []
        for i in reversed(range(len(layers))):
            k, s, _ = layers[i]
            p = default_pad(k, s)
            op = tuple(
                transpose_output_padding(a, b, k, s, p, f"generator deconv[{i}]")
                for a, b in zip(shapes[i + 1], shapes[i])
            )
            deconvs.append(CheckedConvTranspose3d(channels[i + 1], channels[i], k, s, p, op, shapes[i + 1]))
        self.deconvs = nn.ModuleList(deconvs)
        self.in_shape = (channels[-1],) + shapes[-1]
        self.spatial = tuple(spatial)
        self.leak = leak

    def forward(self, h):
        B, T = h.shape[:2]
        h = F.leaky_relu(h.reshape(B * T, *self.in_shape), self.leak)
        for i, deconv in enumerate(self.deconvs):
            h = deconv(h)
            if i < len(self.deconvs) - 1:
                h = F.leaky_relu(h, self.leak)
        return h.reshape(B, T, *self.spatial)


class SelfAttentionStack(nn.Module):
    """Dot-product self-attention with residual connections, [B,T,F] -> [B,T,F]."""

    def __init__(self, features, heads, layers, positional):
        super().__init__()
        self.layers = nn.ModuleList(nn.MultiheadAttention(features, heads, batch_first=True) for _ in range(layers))
        self.positional = positional

    def forward(self, x):
        if self.positional:
            x = x + sinusoidal_encoding(x.shape[1], x.shape[2], x.dtype, x.device)[None]
        for attn in self.layers:
            x = x + attn(x, x, x, need_weights=False)[0]
        return x


class TemporalAggregate(nn.Module):
    """Collapse per-frame features [B,T,F] into one vector per sequence.

    conv1d flattens the output of strided convs along T; lstm takes the final
    hidden state of the top layer; bilstm concatenates the final states of both
    directions (each F/2 wide); the attention kinds average the attended
    sequence over T.
    """

    def __init__(self, kind, features, T, cfg: ArchConfig):
        super().__init__()
        self.kind = kind
        self.leak = cfg.leak
        if kind == CONV1D:
            lengths = temporal_trace(T, cfg.conv1d_kernel, cfg.conv1d_stride, cfg.conv1d_pads)
            self.convs = nn.ModuleList(
                nn.Conv1d(features, features, cfg.conv1d_kernel, cfg.conv1d_stride, p) for p in cfg.conv1d_pads
            )
            self.out_features = features * lengths[-1]
        elif kind in (LSTM, BILSTM):
            bidir = kind == BILSTM
            hidden = features // 2 if bidir else features
            self.rnn = nn.LSTM(features, hidden, cfg.lstm_layers, batch_first=True, bidirectional=bidir)
            self.out_features = 2 * hidden if bidir else hidden
        elif kind in (ATTN_PE, ATTN_NOPE):
            self.attn = SelfAttentionStack(features, cfg.attn_heads, cfg.attn_layers, kind == ATTN_PE)
            self.out_features = features
        else:
            raise ConfigError(f"unknown temporal kind {kind!r}")

    def forward(self, x):
        if self.kind == CONV1D:
            h = x.transpose(1, 2)
            for conv in self.convs:
                h = F.leaky_relu(conv(h), self.leak)
            return h.flatten(1)
        if self.kind == LSTM:
            _, (h, _) = self.rnn(x)
            return h[-1]
        if self.kind == BILSTM:
            _, (h, _) = self.rnn(x)
            return torch.cat([h[-2], h[-1]], dim=1)
        return self.attn(x).mean(dim=1)


class TemporalExpand(nn.Module):
    """Map a conditioning vector to per-frame features [B,T,F] (generator side)."""

    def __init__(self, kind, in_dim, features, T, cfg: ArchConfig):
        super().__init__()
        self.kind = kind
        self.T = T
        self.features = features
        self.leak = cfg.leak
        if kind == CONV1D:
            lengths = temporal_trace(T, cfg.conv1d_kernel, cfg.conv1d_stride, cfg.conv1d_pads)
            targets = [T] + lengths
            self.start_len = lengths[-1]
            self.fc = nn.Linear(in_dim, features * self.start_len)
            deconvs = []
            for i in reversed(range(len(lengths))):
                p = cfg.conv1d_pads[i]
                op = transpose_output_padding(
                    targets[i + 1], targets[i], cfg.conv1d_kernel, cfg.conv1d_stride, p, f"temporal deconv[{i}]"
                )
                deconvs.append(
                    nn.ConvTranspose1d(features, features, cfg.conv1d_kernel, cfg.conv1d_stride, p, output_padding=op)
                )
            self.deconvs = nn.ModuleList(deconvs)
        else:
            self.fc = nn.Linear(in_dim, T * features)
            if kind in (LSTM, BILSTM):
                bidir = kind == BILSTM
                hidden = features // 2 if bidir else features
                self.rnn = nn.LSTM(features, hidden, cfg.lstm_layers, batch_first=True, bidirectional=bidir)
            elif kind in (ATTN_PE, ATTN_NOPE):
                self.attn = SelfAttentionStack(features, cfg.attn_heads, cfg.attn_layers, kind == ATTN_PE)
            else:
                raise ConfigError(f"unknown temporal kind {kind!r}")

    def forward(self, v):
        B = v.shape[0]
        if self.kind == CONV1D:
            h = self.fc(v).reshape(B, self.features, self.start_len)
            for i, deconv in enumerate(self.deconvs):
                h = F.leaky_relu(h, self.leak)
                h = deconv(h)
            return h.transpose(1, 2)
        h = self.fc(v).reshape(B, self.T, self.features)
        if self.kind in (LSTM, BILSTM):
            return self.rnn(h)[0]
        return self.attn(h)


def mlp(in_dim, widths, out_dim, leak):
    layers = []
    for w in widths:
        layers += [nn.Linear(in_dim, w), nn.LeakyReLU(leak)]
        in_dim = w
    layers.append(nn.Linear(in_dim, out_dim))
    return nn.Sequential(*layers)


# --------------------------------------------------------------------------
# components


def _check_input(x, dims, who):
    if x.ndim != 5 or tuple(x.shape[1:]) != tuple(dims):
        raise ConfigError(f"{who}: expected input [B, {', '.join(map(str, dims))}], got {list(x.shape)}")


class Encoder(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.dims = cfg.dims
        self.frames = FrameConvStack(cfg.dims[1:], cfg.encoder_conv, cfg.leak)
        self.temporal = TemporalAggregate(cfg.temporal_kind, self.frames.out_features, cfg.dims[0], cfg)
        self.to_z = nn.Linear(self.temporal.out_features, cfg.z_dim)

    def forward(self, x):
        _check_input(x, self.dims, "encoder")
        return self.to_z(self.temporal(self.frames(x)))


class Generator(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.z_dim = cfg.z_dim
        self.n_classes = cfg.n_classes
        self.frames = FrameDeconvStack(cfg.dims[1:], cfg.encoder_conv, cfg.leak)
        feats = math.prod(self.frames.in_shape)
        self.temporal = TemporalExpand(cfg.temporal_kind, cfg.z_dim + cfg.n_classes, feats, cfg.dims[0], cfg)

    def forward(self, z, labels):
        if z.ndim != 2 or z.shape[1] != self.z_dim:
            raise ValidationError(f"generator: expected z of shape [B, {self.z_dim}], got {list(z.shape)}")
        onehot = F.one_hot(labels, self.n_classes).to(z.dtype)
        h = self.temporal(torch.cat([z, onehot], dim=1))
        return torch.tanh(self.frames(h))


class Discriminator(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.dims = cfg.dims
        self.frames = FrameConvStack(cfg.dims[1:], cfg.disc_conv, cfg.leak)
        self.temporal = TemporalAggregate(cfg.disc_kind, self.frames.out_features, cfg.dims[0], cfg)
        self.head = mlp(self.temporal.out_features, cfg.disc_mlp, 1, cfg.leak)

    def logit(self, x):
        _check_input(x, self.dims, "discriminator")
        return self.head(self.temporal(self.frames(x))).squeeze(1)

    def forward(self, x):
        return torch.sigmoid(self.logit(x))


class CodeDiscriminator(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.z_dim = cfg.z_dim
        self.head = mlp(cfg.z_dim, cfg.code_mlp, 1, cfg.leak)

    def forward(self, z):
        if z.ndim != 2 or z.shape[1] != self.z_dim:
            raise ValidationError(f"code discriminator: expected z of shape [B, {self.z_dim}], got {list(z.shape)}")
        return torch.sigmoid(self.head(z).squeeze(1))


class AlphaGAN(nn.Module):
    """Container for the four components; its state dict is the parameter store."""

    GROUPS = ("encoder", "generator", "discriminator", "code_discriminator")

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.encoder = Encoder(cfg)
        self.generator = Generator(cfg)
        self.discriminator = Discriminator(cfg)
        self.code_discriminator = CodeDiscriminator(cfg)

    def group(self, name) -> nn.Module:
        return getattr(self, name)


def init_params(cfg: ArchConfig, seed: int = 0, dtype=torch.float32) -> AlphaGAN:
    """Build the model with zero biases and weights ~ U(-a, a), a = sqrt(6 / fan_in),
    i.e. variance 2 / fan_in. ``fan_in`` is ``shape[1] * prod(shape[2:])``."""
    model = AlphaGAN(cfg).to(dtype)
    reinit_(model, seed)
    return model


def reinit_(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if "bias" in name.rsplit(".", 1)[-1] or p.ndim < 2:
                p.zero_()
            else:
                fan_in = p.shape[1] * math.prod(p.shape[2:])
                bound = math.sqrt(6.0 / fan_in)
                u = torch.rand(p.shape, generator=gen, dtype=torch.float64)
                p.copy_((2 * u - 1) * bound)


def label_indices(labels) -> torch.Tensor:
    if isinstance(labels, torch.Tensor):
        return labels.long()
    if isinstance(labels, str):
        labels = [labels]
    try:
        return torch.tensor([CLASS_INDEX[lab] for lab in labels], dtype=torch.long)
    except KeyError as exc:
        raise ValidationError(f"unknown class label {exc.args[0]!r}; expected one of {sorted(CLASS_INDEX)}") from None


# functional entry points mirroring the component roles


def encode(model: AlphaGAN, x: torch.Tensor) -> torch.Tensor:
    return model.encoder(x)


def generate(model: AlphaGAN, z: torch.Tensor, labels) -> torch.Tensor:
    return model.generator(z, label_indices(labels))


def discriminate(model: AlphaGAN, x: torch.Tensor) -> torch.Tensor:
    return model.discriminator(x)


def code_discriminate(model: AlphaGAN, z: torch.Tensor) -> torch.Tensor:
    return model.code_discriminator(z)
