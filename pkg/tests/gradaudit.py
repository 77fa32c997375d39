"""Finite-difference audit of every loss term against autograd on a micro model."""

import numpy as np
import torch

from oracles import central_difference, relative_error
from typeshift.losses import const_loss, gan_losses, pixel_l2, tid_loss, tv_loss
from typeshift.netarch import ModelSpec, build, set_phase

TERMS = ("gan_g", "gan_d", "const", "tid", "tv", "l2")
DROPOUT_SEED = 123


class MicroProblem:
    def __init__(self, seed=0, batch=4):
        self.spec = ModelSpec.micro()
        self.gen, self.disc = build(self.spec, seed=seed, dtype=torch.float64)
        set_phase(self.gen, "train")
        set_phase(self.disc, "train")
        g = torch.Generator().manual_seed(seed)
        shape = (batch, 3, 32, 32)
        self.src = torch.rand(shape, generator=g, dtype=torch.float64) * 2 - 1
        self.tgt = torch.rand(shape, generator=g, dtype=torch.float64) * 2 - 1

    def terms(self):
        torch.manual_seed(DROPOUT_SEED)  # identical dropout masks on every call
        b = self.src.shape[0]
        code_s, skips = self.gen.encode(self.src)
        fake_s = self.gen.decode(code_s, skips)
        fake_t = self.gen(self.tgt)
        logits = self.disc(torch.cat([self.tgt, fake_s, fake_t]))
        gan_d, gan_g = gan_losses(logits[:b], logits[b:2 * b], logits[2 * b:])
        return {
            "gan_g": gan_g,
            "gan_d": gan_d,
            "const": const_loss(code_s, self.gen.encode(fake_s)[0]),
            "tid": tid_loss(self.tgt, fake_t),
            "tv": tv_loss(fake_s),
            "l2": pixel_l2(fake_s, self.tgt),
        }

    def params_for(self, term):
        named = [(f"gen.{n}", p) for n, p in self.gen.named_parameters()]
        if term in ("gan_g", "gan_d"):
            named += [(f"disc.{n}", p) for n, p in self.disc.named_parameters()]
        return named


def audit(term, probes, rng, problem=None):
    """Return a list of (param name, index, analytic, numeric, relative error)."""
    problem = problem or MicroProblem()
    named = problem.params_for(term)
    for _, p in named:
        p.grad = None
    problem.terms()[term].backward()
    sizes = np.array([p.numel() for _, p in named], dtype=float)
    rows = []
    for _ in range(probes):
        k = rng.choice(len(named), p=sizes / sizes.sum())
        name, p = named[k]
        flat = int(rng.integers(p.numel()))
        index = np.unravel_index(flat, p.shape)
        analytic = 0.0 if p.grad is None else p.grad[index].item()
        numeric = central_difference(lambda: problem.terms()[term].item(), p.data, index)
        rows.append((name, index, analytic, numeric, relative_error(analytic, numeric)))
    return rows
