"""Loss terms for unsupervised glyph style transfer.

All image losses are means over every element, computed in ``[-1, 1]`` space.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .errors import NonFiniteInput, ShapeMismatch, ShapeTooSmall, ValidationError

REAL_TARGET, FAKE_FROM_SOURCE, FAKE_FROM_TARGET = 0, 1, 2
TERMS = ("gan_d", "gan_g", "const", "tid", "tv", "l2")


@dataclass(frozen=True)
class LossWeights:
    w_gan: float = 1.0
    w_const: float = 1.0
    w_tid: float = 10.0
    w_tv: float = 0.1
    w_l2: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    step: int
    gan_d: float = 0.0
    gan_g: float = 0.0
    const: float = 0.0
    tid: float = 0.0
    tv: float = 0.0
    l2: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    CSV_HEADER = "step,gan_d,gan_g,const,tid,tv,l2,total_g,total_d"

    def as_row(self) -> str:
        vals = [self.gan_d, self.gan_g, self.const, self.tid, self.tv,
                self.l2, self.total_g, self.total_d]
        return ",".join([str(self.step)] + [repr(float(v)) for v in vals])

    @classmethod
    def from_row(cls, row: str) -> "LossReport":
        parts = row.strip().split(",")
        return cls(int(parts[0]), *map(float, parts[1:]))

    def values(self) -> dict:
        d = asdict(self)
        d.pop("step")
        return d


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _class_xent(logits, cls):
    target = torch.full((logits.shape[0],), cls, dtype=torch.long, device=logits.device)
    return F.cross_entropy(logits, target)


def gan_losses(logits_real_target, logits_gen_from_source, logits_gen_from_target):
    """Three-way discriminator loss and non-saturating generator loss.

    The discriminator sees real targets as class 0, G(source) as class 1 and
    G(target) as class 2; ``d_loss`` is the mean of the three per-batch
    cross-entropies.  The generator pushes both generated batches towards
    class 0.
    """
    for t in (logits_real_target, logits_gen_from_source, logits_gen_from_target):
        if t.dim() != 2 or t.shape[1] != 3:
            raise ShapeMismatch(f"expected Bx3 logits, got {tuple(t.shape)}")
        if not bool(torch.isfinite(t).all()):
            raise NonFiniteInput("discriminator logits contain NaN or inf")
    d_loss = (_class_xent(logits_real_target, REAL_TARGET)
              + _class_xent(logits_gen_from_source, FAKE_FROM_SOURCE)
              + _class_xent(logits_gen_from_target, FAKE_FROM_TARGET)) / 3.0
    g_loss = (_class_xent(logits_gen_from_source, REAL_TARGET)
              + _class_xent(logits_gen_from_target, REAL_TARGET)) / 2.0
    return d_loss, g_loss


def mse(a, b):
    _same_shape(a, b)
    return ((a - b) ** 2).mean()


def const_loss(f_of_x, f_of_gx):
    """Squared distance between encoder codes of an input and of its translation."""
    return mse(f_of_x, f_of_gx)


def tid_loss(x_target, g_of_x_target):
    """Identity loss: the generator should leave target-style glyphs untouched."""
    return mse(x_target, g_of_x_target)


def pixel_l2(gen, truth):
    return mse(gen, truth)


def tv_loss(img):
    """Anisotropic total variation, summed over both directions, averaged over pixels.

    ``img`` is ``(..., H, W)``.  The vertical and horizontal absolute
    differences are summed and divided by the element count of ``img``, so a
    2x2 image ``[[0, 1], [0, 1]]`` scores ``2 / 4``.
    """
    if img.dim() < 2 or img.shape[-1] < 2 or img.shape[-2] < 2:
        raise ShapeTooSmall(f"total variation needs H, W >= 2, got {tuple(img.shape)}")
    dv = (img[..., 1:, :] - img[..., :-1, :]).abs().sum()
    dh = (img[..., :, 1:] - img[..., :, :-1]).abs().sum()
    return (dv + dh) / img.numel()


def total_generator_loss(weights: LossWeights, gan_g, const, tid, tv, l2=None):
    total = (weights.w_gan * gan_g + weights.w_const * const
             + weights.w_tid * tid + weights.w_tv * tv)
    if l2 is not None:
        total = total + weights.w_l2 * l2
    return total


def total_discriminator_loss(weights: LossWeights, gan_d):
    return weights.w_gan * gan_d
