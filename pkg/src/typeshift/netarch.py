"""Skip-connected encoder/decoder generator and three-way discriminator.

Tensors are NCHW inside the networks.  At full scale (canvas 256, base 64) the
generator has 8 stride-2 conv stages mirrored by 8 deconv stages; smaller
canvases use ``log2(canvas)`` stages with the same channel pattern.

Channel pattern, with ``c_k = base * min(2**(k-1), 8)`` for conv stage k of n:

* conv k:    ``c_{k-1} -> c_k`` (``c_0 = 3``)
* deconv 1:  ``c_n + style_dim -> 2 * c_{n-1}``
* deconv k:  ``2 * c_{n-k+1} + c_{n-k+1} -> 2 * c_{n-k}`` for ``1 < k < n``
* deconv n:  ``2 * c_1 + c_1 -> 3``
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch, UnknownStyleIndex, ValidationError

LEAK = 0.2
PHASES = ("train", "infer")


@dataclass(frozen=True)
class ModelSpec:
    canvas: int = 256
    base_channels: int = 64
    style_embed_dim: int = 128
    n_styles: int = 1
    kernel: int = 5
    stride: int = 2
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.canvas < 32 or self.canvas & (self.canvas - 1):
            raise ValidationError(f"canvas must be a power of two >= 32, got {self.canvas}")
        if self.base_channels < 1 or self.style_embed_dim < 0 or self.n_styles < 1:
            raise ValidationError("channel counts and style table size must be positive")
        if self.stride != 2:
            raise ValidationError("only stride-2 stages are supported")
        if self.kernel < 2 or self.kernel % 2 == 0:
            raise ValidationError("kernel must be odd and >= 3")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError("dropout_p must lie in [0, 1)")

    @classmethod
    def micro(cls, canvas: int = 32, base_channels: int = 4, **kw) -> "ModelSpec":
        kw.setdefault("style_embed_dim", 2 * base_channels)
        return cls(canvas=canvas, base_channels=base_channels, **kw)

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.canvas))

    def conv_channels(self) -> list[int]:
        return [self.base_channels * min(2 ** k, 8) for k in range(self.n_stages)]

    def deconv_channels(self) -> list[tuple[int, int, int]]:
        """(previous, skip, out) channels for each deconv stage."""
        c = self.conv_channels()
        n = self.n_stages
        out = []
        for k in range(1, n + 1):
            if k == 1:
                prev, skip = c[n - 1], self.style_embed_dim
            else:
                prev, skip = 2 * c[n - k], c[n - k]
            cout = 2 * c[n - k - 1] if k < n else 3
            out.append((prev, skip, cout))
        return out

    def disc_channels(self) -> list[int]:
        return [self.base_channels * m for m in (1, 2, 4, 8)]

    def dropout_stages(self) -> tuple[int, ...]:
        # deconv2 and deconv3, when the decoder is deep enough to have them
        return tuple(k for k in (2, 3) if k < self.n_stages)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_phase(phase: str) -> None:
    if phase not in PHASES:
        raise ValidationError(f"phase must be one of {PHASES}, got {phase!r}")


class ConvBlock(nn.Module):
    """[leaky ReLU] -> stride-2 conv -> [batch norm].

    The conv bias only exists when no normalization follows it.
    """

    def __init__(self, cin, cout, kernel, act=True, norm=True):
        super().__init__()
        self.act = act
        self.kernel = nn.Parameter(torch.empty(cout, cin, kernel, kernel))
        self.bias = None if norm else nn.Parameter(torch.zeros(cout))
        self.bn = nn.BatchNorm2d(cout) if norm else None
        nn.init.normal_(self.kernel, 0.0, 0.02)

    def forward(self, x):
        if self.act:
            x = F.leaky_relu(x, LEAK)
        x = F.conv2d(x, self.kernel, self.bias, stride=2, padding=self.kernel.shape[-1] // 2)
        if self.bn is not None:
            x = self.bn(x)
        return x


class ConditionalInstanceNorm(nn.Module):
    def __init__(self, channels, n_styles):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(n_styles, channels))
        self.beta = nn.Parameter(torch.zeros(n_styles, channels))

    def forward(self, x, style):
        h = F.instance_norm(x, eps=1e-5)
        return h * self.gamma[style][:, :, None, None] + self.beta[style][:, :, None, None]


class DeconvBlock(nn.Module):
    """ReLU -> stride-2 transposed conv -> batch norm (or CIN) -> [dropout]."""

    def __init__(self, cin, cout, kernel, dropout_p=0.0, n_styles=None):
        super().__init__()
        self.kernel = nn.Parameter(torch.empty(cin, cout, kernel, kernel))
        self.dropout_p = dropout_p
        if n_styles is None:
            self.bn = nn.BatchNorm2d(cout)
            self.cin = None
        else:
            self.bn = None
            self.cin = ConditionalInstanceNorm(cout, n_styles)
        nn.init.normal_(self.kernel, 0.0, 0.02)

    def forward(self, x, style=None):
        k = self.kernel.shape[-1]
        x = F.conv_transpose2d(F.relu(x), self.kernel, None, stride=2,
                               padding=k // 2, output_padding=1)
        x = self.bn(x) if self.cin is None else self.cin(x, style)
        if self.dropout_p:
            x = F.dropout(x, self.dropout_p, training=self.training)
        return x


class LayerTrace(NamedTuple):
    name: str
    in_hw: int
    in_channels: tuple
    out: torch.Tensor


class Generator(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        chans = spec.conv_channels()
        cin = 3
        for k, c in enumerate(chans, start=1):
            first = k == 1
            self.add_module(f"conv{k}", ConvBlock(cin, c, spec.kernel, act=not first, norm=not first))
            cin = c
        n = spec.n_stages
        drop = spec.dropout_stages()
        for k, (prev, skip, cout) in enumerate(spec.deconv_channels(), start=1):
            self.add_module(f"deconv{k}", DeconvBlock(
                prev + skip, cout, spec.kernel,
                dropout_p=spec.dropout_p if k in drop else 0.0,
                n_styles=spec.n_styles if k == n else None))
        self.style_embedding = nn.Parameter(torch.empty(spec.n_styles, spec.style_embed_dim))
        nn.init.normal_(self.style_embedding, 0.0, 1.0)

    def encoder_parameters(self):
        for k in range(1, self.spec.n_stages + 1):
            yield from getattr(self, f"conv{k}").parameters()

    def check_input(self, x):
        c = self.spec.canvas
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, c, c):
            raise ShapeMismatch(f"expected Bx3x{c}x{c} input, got {tuple(x.shape)}")

    def _style(self, style_index, batch, device):
        style = torch.as_tensor(style_index, dtype=torch.long, device="cpu")
        if style.dim() == 0:
            style = style.expand(batch)
        if style.shape != (batch,):
            raise ShapeMismatch(f"style_index must be a scalar or length-{batch} vector")
        if bool(((style < 0) | (style >= self.spec.n_styles)).any()):
            raise UnknownStyleIndex(f"style index outside [0, {self.spec.n_styles})")
        return style.to(device)

    def encode(self, x, trace=None):
        """Return ``(code, skips)``; ``skips[k-1]`` is conv k's output for k < n."""
        self.check_input(x)
        feats = []
        h = x
        for k in range(1, self.spec.n_stages + 1):
            hw, c = h.shape[-1], h.shape[1]
            h = getattr(self, f"conv{k}")(h)
            if trace is not None:
                trace.append(LayerTrace(f"conv{k}", hw, (c,), h))
            feats.append(h)
        return feats[-1], feats[:-1]

    def decode(self, code, skips, style_index=0, trace=None):
        n = self.spec.n_stages
        if len(skips) != n - 1:
            raise ShapeMismatch(f"expected {n - 1} skip tensors, got {len(skips)}")
        if code.dim() != 4 or tuple(code.shape[1:]) != (self.spec.conv_channels()[-1], 1, 1):
            raise ShapeMismatch(f"unexpected code shape {tuple(code.shape)}")
        batch = code.shape[0]
        style = self._style(style_index, batch, code.device)
        emb = self.style_embedding[style][:, :, None, None]
        h = torch.cat([code, emb], dim=1)
        parts = (code.shape[1], emb.shape[1])
        for k in range(1, n + 1):
            hw = h.shape[-1]
            block = getattr(self, f"deconv{k}")
            h = block(h, style if k == n else None)
            if trace is not None:
                trace.append(LayerTrace(f"deconv{k}", hw, parts, h))
            if k < n:
                skip = skips[n - k - 1]
                if skip.shape[-1] != h.shape[-1] or skip.shape[0] != batch:
                    raise ShapeMismatch(f"skip for deconv{k + 1} has shape {tuple(skip.shape)}")
                parts = (h.shape[1], skip.shape[1])
                h = torch.cat([h, skip], dim=1)
        return torch.tanh(h)

    def forward(self, x, style_index=0, trace=None):
        code, skips = self.encode(x, trace)
        return self.decode(code, skips, style_index, trace)


class Discriminator(nn.Module):
    """Four stride-2 convs then a linear map to three logits.

    Class semantics: 0 = real target, 1 = generated from source,
    2 = generated from target.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        cin = 3
        for k, c in enumerate(spec.disc_channels(), start=1):
            self.add_module(f"conv{k}", ConvBlock(cin, c, spec.kernel, act=k > 1, norm=k > 1))
            cin = c
        side = spec.canvas // 16
        self.fc = nn.Linear(side * side * cin, 3)
        nn.init.normal_(self.fc.weight, 0.0, 0.02)
        nn.init.zeros_(self.fc.bias)

    def forward(self, x, trace=None):
        c = self.spec.canvas
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, c, c):
            raise ShapeMismatch(f"expected Bx3x{c}x{c} input, got {tuple(x.shape)}")
        h = x
        for k in range(1, 5):
            hw, ch = h.shape[-1], h.shape[1]
            h = getattr(self, f"conv{k}")(h)
            if trace is not None:
                trace.append(LayerTrace(f"conv{k}", hw, (ch,), h))
        flat = F.leaky_relu(h, LEAK).flatten(1)
        logits = self.fc(flat)
        if trace is not None:
            trace.append(LayerTrace("fc", h.shape[-1], (h.shape[1],), logits))
        return logits


def build(spec: ModelSpec, seed: int = 0, dtype=torch.float32):
    """Construct a seeded ``(Generator, Discriminator)`` pair."""
    gen_rng = torch.random.fork_rng(devices=[])
    with gen_rng:
        torch.manual_seed(seed)
        g = Generator(spec).to(dtype)
        d = Discriminator(spec).to(dtype)
    return g, d


def set_phase(module: nn.Module, phase: str) -> nn.Module:
    """``train`` uses minibatch statistics and dropout; ``infer`` uses running stats."""
    _check_phase(phase)
    module.train(phase == "train")
    return module


def encode(gen: Generator, x, phase="infer"):
    set_phase(gen, phase)
    return gen.encode(x)


def decode(gen: Generator, code, skips, style_index=0, phase="infer"):
    set_phase(gen, phase)
    return gen.decode(code, skips, style_index)


def generate(gen: Generator, x, style_index=0, phase="infer"):
    set_phase(gen, phase)
    return gen(x, style_index)


def discriminate(disc: Discriminator, x, phase="infer"):
    set_phase(disc, phase)
    return disc(x)


def parameter_count(spec: ModelSpec) -> dict:
    with torch.device("meta"):
        g, d = Generator(spec), Discriminator(spec)
    return {"generator": sum(p.numel() for p in g.parameters()),
            "discriminator": sum(p.numel() for p in d.parameters())}


def to_nchw(x) -> torch.Tensor:
    """Convert a BxHxWx3 (or HxWx3) array to a float NCHW tensor."""
    t = torch.as_tensor(x)
    if t.dim() == 3:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).contiguous()


def to_nhwc(t: torch.Tensor):
    return t.detach().permute(0, 2, 3, 1).cpu().numpy()
