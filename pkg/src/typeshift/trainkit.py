"""Training loop: augmentation, alternating D/G updates, warm start, resume.

Every source of randomness in a step (dropout masks, augmentation draws) is
seeded from ``(seed, step)`` and the data order of an epoch from
``(seed, epoch)``, so a run resumed from any checkpoint replays the
uninterrupted loss trajectory exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch.func import functional_call

from . import __version__
from .checkpoint import (Checkpoint, as_checkpoint, config_hash, from_models,
                         load_module_tensors, load_optimizer_tensors)
from .errors import (ConfigMismatch, InsufficientCorpus, NonFiniteLoss, PolicyError,
                     ValidationError)
from .glyphrender import load_png
from .losses import (LossReport, LossWeights, const_loss, gan_losses, pixel_l2,
                     tid_loss, total_discriminator_loss, total_generator_loss, tv_loss)
from .netarch import Discriminator, Generator, ModelSpec, build, set_phase
from .pairset import PairManifest, PairPolicy, PolicyKind

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    max_shift_px: int | None = None
    scale_range: tuple = (0.9, 1.1)
    fill: float = 1.0

    def __post_init__(self):
        lo, hi = self.scale_range
        object.__setattr__(self, "scale_range", (float(lo), float(hi)))
        if not (0 < lo <= 1.0 <= hi):
            raise ValidationError(f"scale_range must satisfy 0 < lo <= 1 <= hi, got {self.scale_range}")
        if self.max_shift_px is not None and self.max_shift_px < 0:
            raise ValidationError("max_shift_px must be >= 0")

    def shift_for(self, canvas: int) -> int:
        """Shift bound in pixels; defaults to 8 px per 256 px of canvas."""
        if self.max_shift_px is not None:
            return self.max_shift_px
        return int(round(8 * canvas / 256))


@dataclass(frozen=True)
class TrainConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    batch_size: int = 16
    epochs: int = 100
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    policy: PairPolicy = field(default_factory=PairPolicy)
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    warm_start: str | None = None
    warm_start_scope: str = "generator"
    freeze_encoder_steps: int = 0
    block_const_grad: bool = False
    checkpoint_every: int = 0
    sample_every: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.freeze_encoder_steps < 0:
            raise ValidationError("freeze_encoder_steps must be >= 0")
        if self.warm_start_scope not in ("encoder", "generator"):
            raise ValidationError("warm_start_scope must be 'encoder' or 'generator'")
        if self.dtype not in DTYPES:
            raise ValidationError(f"dtype must be one of {sorted(DTYPES)}")
        check_policy_guard(self.policy, self.weights)

    @classmethod
    def micro(cls, **kw) -> "TrainConfig":
        """Desk-scale defaults: canvas 32, base 4 channels, lr 1e-3."""
        kw.setdefault("model", ModelSpec.micro())
        kw.setdefault("learning_rate", 1e-3)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"]["kind"] = self.policy.kind.value
        d["augment"]["scale_range"] = list(self.augment.scale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelSpec(**d["model"])
        d["policy"] = PairPolicy(**d["policy"])
        d["weights"] = LossWeights(**d["weights"])
        aug = dict(d["augment"])
        aug["scale_range"] = tuple(aug["scale_range"])
        d["augment"] = AugmentConfig(**aug)
        return cls(**d)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def check_policy_guard(policy: PairPolicy, weights: LossWeights) -> None:
    """Pixel L2 needs aligned pairs, which only the strong policy provides."""
    if weights.w_l2 > 0 and policy.kind is not PolicyKind.STRONG:
        raise PolicyError(
            f"w_l2={weights.w_l2} requires the strong pairing policy, got {policy.kind.value}")


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, step]).generate_state(1)[0])


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, step, 1])


def augment(batch: torch.Tensor, cfg: AugmentConfig, rng: np.random.Generator,
            shifts=None, scales=None) -> torch.Tensor:
    """Random integer shift and uniform scale about the canvas center, per image.

    ``batch`` is NCHW in ``[-1, 1]``.  Uncovered regions are filled with
    ``cfg.fill``.  ``shifts`` (Bx2 pixels, x then y) and ``scales`` (B) may
    be passed to force the transform instead of drawing it from ``rng``.
    """
    if not cfg.enabled:
        return batch
    b, _, h, w = batch.shape
    if shifts is None:
        m = cfg.shift_for(w)
        shifts = rng.integers(-m, m + 1, size=(b, 2))
    if scales is None:
        lo, hi = cfg.scale_range
        scales = rng.uniform(lo, hi, size=b)
    shifts = torch.as_tensor(np.asarray(shifts, dtype=np.float64), dtype=batch.dtype)
    scales = torch.as_tensor(np.asarray(scales, dtype=np.float64), dtype=batch.dtype)
    theta = torch.zeros(b, 2, 3, dtype=batch.dtype)
    theta[:, 0, 0] = 1.0 / scales
    theta[:, 1, 1] = 1.0 / scales
    theta[:, 0, 2] = -2.0 * shifts[:, 0] / w / scales
    theta[:, 1, 2] = -2.0 * shifts[:, 1] / h / scales
    grid = F.affine_grid(theta, list(batch.shape), align_corners=False)
    # zero padding on the fill-shifted image gives fill outside the frame
    out = F.grid_sample(batch - cfg.fill, grid, mode="bilinear",
                        padding_mode="zeros", align_corners=False) + cfg.fill
    return out.clamp_(-1.0, 1.0)


def load_pair_tensors(manifest: PairManifest, dtype=torch.float32):
    """Stack a manifest's source and target images into two NCHW tensors."""
    if not manifest.pairs:
        return None, None
    src = np.stack([load_png(p.src_path) for p in manifest.pairs])
    tgt = np.stack([load_png(p.tgt_path) for p in manifest.pairs])
    to = lambda a: torch.from_numpy(a).permute(0, 3, 1, 2).contiguous().to(dtype)
    return to(src), to(tgt)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded batch index lists for one epoch; ``ceil(n / batch_size)`` batches.

    A batch of one sample (the trailing batch, or every batch when
    ``batch_size`` is 1) is topped up with the next index in the epoch order
    because batch norm in training phase needs more than one value per channel
    at the 1x1 bottleneck.
    """
    order = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, epoch, 2]).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if n > 1:
        batches = [b if len(b) > 1 else np.array([b[0], order[(i * batch_size + 1) % n]])
                   for i, b in enumerate(batches)]
    return batches


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


class Trainer:
    """Mutable training state: networks, optimizers and the step counter."""

    def __init__(self, config: TrainConfig, gen: Generator | None = None,
                 disc: Discriminator | None = None):
        self.config = config
        dtype = DTYPES[config.dtype]
        if gen is None or disc is None:
            gen, disc = build(config.model, seed=config.seed, dtype=dtype)
        self.gen, self.disc = gen, disc
        betas = (config.beta1, config.beta2)
        self.opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=betas)
        self.opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=betas)
        self.step = 0
        self.epoch = 0
        self.extra_meta: dict = {}
        self._enc_names = {n for n, _ in gen.named_parameters() if n.startswith("conv")}

    @property
    def dtype(self):
        return DTYPES[self.config.dtype]

    def _code_of_translation(self, fake):
        if not self.config.block_const_grad:
            return self.gen.encode(fake)[0]
        params = {n: (p.detach() if n in self._enc_names else p)
                  for n, p in self.gen.named_parameters()}
        return _call_encode(self.gen, params, fake)

    def _check_finite(self, named: dict):
        bad = {k: v for k, v in named.items() if not bool(torch.isfinite(v).all())}
        if not bad:
            return
        dump = {k: v.detach().cpu() for k, v in bad.items()}
        for name, p in list(self.gen.named_parameters()) + list(self.disc.named_parameters()):
            if not bool(torch.isfinite(p).all()):
                dump[f"param:{name}"] = p.detach().cpu()
        raise NonFiniteLoss(f"non-finite values at step {self.step}: {sorted(bad)}", dump)

    def train_step(self, src: torch.Tensor, tgt: torch.Tensor) -> LossReport:
        """One discriminator update followed by one generator update."""
        cfg = self.config
        w = cfg.weights
        src = src.to(self.dtype)
        tgt = tgt.to(self.dtype)
        if src.shape != tgt.shape:
            raise ValidationError(f"source/target batch shapes differ: {tuple(src.shape)} vs {tuple(tgt.shape)}")
        torch.manual_seed(_step_seed(cfg.seed, self.step))
        rng = step_rng(cfg.seed, self.step)
        src = augment(src, cfg.augment, rng)
        tgt = augment(tgt, cfg.augment, rng)
        set_phase(self.gen, "train")
        set_phase(self.disc, "train")
        b = src.shape[0]
        strong = cfg.policy.kind is PolicyKind.STRONG

        # discriminator: real target -> 0, G(source) -> 1, G(target) -> 2
        with torch.no_grad():
            fake_s = self.gen(src)
            fake_t = self.gen(tgt)
        logits = self.disc(torch.cat([tgt, fake_s, fake_t]))
        self._check_finite({"d_logits": logits})
        d_loss, _ = gan_losses(logits[:b], logits[b:2 * b], logits[2 * b:])
        total_d = total_discriminator_loss(w, d_loss)
        self.opt_d.zero_grad(set_to_none=True)
        total_d.backward()
        self.opt_d.step()

        # generator
        code_s, skips = self.gen.encode(src)
        fake_s = self.gen.decode(code_s, skips)
        fake_t = self.gen(tgt)
        logits = self.disc(torch.cat([tgt, fake_s, fake_t]))
        self._check_finite({"g_logits": logits, "fake_s": fake_s, "fake_t": fake_t})
        _, g_loss = gan_losses(logits[:b], logits[b:2 * b], logits[2 * b:])
        code_gs = self._code_of_translation(fake_s)
        const = const_loss(code_s, code_gs)
        tid = tid_loss(tgt, fake_t)
        tv = tv_loss(fake_s)
        l2 = pixel_l2(fake_s, tgt) if strong else None
        total_g = total_generator_loss(w, g_loss, const, tid, tv, l2)
        self._check_finite({"total_g": total_g, "total_d": total_d})
        self.opt_g.zero_grad(set_to_none=True)
        self.opt_d.zero_grad(set_to_none=True)
        total_g.backward()
        if self.step < cfg.freeze_encoder_steps:
            for p in self.gen.encoder_parameters():
                p.grad = None
        self.opt_g.step()
        self.opt_d.zero_grad(set_to_none=True)

        report = LossReport(
            step=self.step + 1, gan_d=d_loss.item(), gan_g=g_loss.item(),
            const=const.item(), tid=tid.item(), tv=tv.item(),
            l2=l2.item() if l2 is not None else 0.0,
            total_g=total_g.item(), total_d=total_d.item())
        self.step += 1
        return report

    # checkpoints

    def metadata(self) -> dict:
        return {
            "spec": self.config.model.to_dict(),
            "step": self.step,
            "epoch": self.epoch,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash,
            "rng": {"scheme": "seed-step", "seed": self.config.seed, "step": self.step},
            "param_count": {
                "generator": sum(p.numel() for p in self.gen.parameters()),
                "discriminator": sum(p.numel() for p in self.disc.parameters()),
            },
            "version": __version__,
            **self.extra_meta,
        }

    def checkpoint(self) -> Checkpoint:
        return from_models(self.gen, self.disc, self.metadata(), self.opt_g, self.opt_d)

    @classmethod
    def from_checkpoint(cls, ckpt, config: TrainConfig | None = None) -> "Trainer":
        """Rebuild full training state (networks, optimizer moments, counters)."""
        ckpt = as_checkpoint(ckpt)
        if config is None:
            config = TrainConfig.from_dict(ckpt.meta["config"])
        if ckpt.spec != config.model:
            raise ConfigMismatch(f"checkpoint model {ckpt.spec} differs from config {config.model}")
        t = cls(config)
        load_module_tensors("gen", t.gen, ckpt.tensors)
        load_module_tensors("disc", t.disc, ckpt.tensors)
        load_optimizer_tensors("opt_g", t.opt_g, t.gen, ckpt.tensors)
        load_optimizer_tensors("opt_d", t.opt_d, t.disc, ckpt.tensors)
        t.step = ckpt.step
        t.epoch = int(ckpt.meta.get("epoch", 0))
        return t

    def warm_start_from(self, ckpt) -> None:
        """Copy encoder (or whole generator) tensors from a pretraining checkpoint."""
        ckpt = as_checkpoint(ckpt)
        if ckpt.spec != self.config.model:
            raise ConfigMismatch(f"warm-start model {ckpt.spec} differs from {self.config.model}")
        state = self.gen.state_dict()
        for key in state:
            if self.config.warm_start_scope == "encoder" and not key.startswith("conv"):
                continue
            name = f"gen/{key.replace('.', '/')}"
            if name not in ckpt.tensors:
                raise ConfigMismatch(f"warm-start checkpoint lacks {name}")
            state[key] = ckpt.tensors[name].to(state[key].dtype)
        self.gen.load_state_dict(state)


def _call_encode(gen: Generator, params: dict, x):
    class _Enc(torch.nn.Module):
        def __init__(self, g):
            super().__init__()
            self.g = g

        def forward(self, y):
            return self.g.encode(y)[0]

    wrapped = {f"g.{k}": v for k, v in params.items()}
    return functional_call(_Enc(gen), wrapped, (x,), strict=False)


def train_step(state: Trainer, src_batch, tgt_batch) -> LossReport:
    return state.train_step(src_batch, tgt_batch)


@dataclass
class FitResult:
    checkpoint: Checkpoint
    log: list[LossReport]
    checkpoint_path: Path | None = None
    log_path: Path | None = None


def _write_log(path: Path, reports: Sequence[LossReport]) -> None:
    lines = [LossReport.CSV_HEADER] + [r.as_row() for r in reports]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_log(path) -> list[LossReport]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [LossReport.from_row(l) for l in lines[1:] if l.strip()]


def fit(config: TrainConfig, manifest: PairManifest, out_dir=None, resume=None,
        max_steps: int | None = None, sample_fn: Callable | None = None,
        on_step: Callable | None = None, extra_meta: dict | None = None) -> FitResult:
    """Train for ``epochs * ceil(N / batch_size)`` steps over ``manifest``.

    With ``out_dir`` the run writes ``train_log.csv``, ``last.ckpt`` and
    ``step_<N>.ckpt`` every ``checkpoint_every`` steps, and sample grids
    ``samples/step_<N>.png`` every ``sample_every`` steps.  ``resume`` is a
    checkpoint (path or object) produced by an earlier run of the same config;
    ``max_steps`` stops early, which is how interrupted runs are simulated.
    """
    check_policy_guard(manifest.policy, config.weights)
    if manifest.policy.kind is not config.policy.kind:
        raise PolicyError(f"config policy {config.policy.kind.value} differs from the "
                          f"manifest's {manifest.policy.kind.value}")
    if config.epochs > 0 and not manifest.pairs:
        raise InsufficientCorpus("cannot train on an empty manifest")
    src, tgt = load_pair_tensors(manifest, DTYPES[config.dtype])
    emit = None
    if config.sample_every and out_dir is not None:
        emit = lambda trainer, out: _emit_samples(trainer, manifest, out, sample_fn)
    return fit_arrays(config, src, tgt, out_dir, resume, max_steps, emit, on_step, extra_meta)


def fit_arrays(config: TrainConfig, src, tgt, out_dir=None, resume=None,
               max_steps: int | None = None, emit_samples: Callable | None = None,
               on_step: Callable | None = None, extra_meta: dict | None = None) -> FitResult:
    """Training loop over in-memory NCHW source/target tensors (row i paired with row i)."""
    if resume is not None:
        trainer = Trainer.from_checkpoint(as_checkpoint(resume), config)
    else:
        trainer = Trainer(config)
        if config.warm_start:
            trainer.warm_start_from(config.warm_start)
    trainer.extra_meta = dict(extra_meta or {})
    out = Path(out_dir) if out_dir is not None else None
    log_path = out / "train_log.csv" if out is not None else None
    reports: list[LossReport] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is not None and log_path.exists():
            reports = [r for r in read_log(log_path) if r.step <= trainer.step]

    n = 0 if src is None else len(src)
    if n and (tgt is None or tgt.shape != src.shape):
        raise ValidationError("source and target stacks must have the same shape")
    per_epoch = steps_per_epoch(n, config.batch_size) if n else 0
    total = config.epochs * per_epoch
    if max_steps is not None:
        total = min(total, max_steps)

    while trainer.step < total:
        epoch, offset = divmod(trainer.step, per_epoch)
        trainer.epoch = epoch
        for idx in epoch_batches(n, config.batch_size, config.seed, epoch)[offset:]:
            if trainer.step >= total:
                break
            idx_t = torch.as_tensor(idx)
            report = trainer.train_step(src[idx_t], tgt[idx_t])
            reports.append(report)
            if on_step is not None:
                on_step(trainer, report)
            if out is not None:
                if config.checkpoint_every and trainer.step % config.checkpoint_every == 0:
                    trainer.checkpoint().save(out / f"step_{trainer.step}.ckpt")
                    _write_log(log_path, reports)
                if emit_samples is not None and trainer.step % config.sample_every == 0:
                    emit_samples(trainer, out)
        trainer.epoch = trainer.step // per_epoch

    ckpt = trainer.checkpoint()
    ckpt_path = None
    if out is not None:
        ckpt_path = ckpt.save(out / "last.ckpt")
        _write_log(log_path, reports)
    return FitResult(ckpt, reports, ckpt_path, log_path)


def _emit_samples(trainer: Trainer, manifest: PairManifest, out: Path, sample_fn) -> None:
    if sample_fn is None:
        from .evalkit import sample_grid

        def sample_fn(ckpt, m, path):
            return sample_grid(ckpt, m, rows=min(8, len(m.pairs)), out_path=path)
    (out / "samples").mkdir(exist_ok=True)
    sample_fn(trainer.checkpoint(), manifest, out / "samples" / f"step_{trainer.step}.png")


PRETRAIN_WEIGHTS = LossWeights(w_gan=0.0, w_const=0.0, w_tid=1.0, w_tv=0.0, w_l2=10.0)


def pretrain_encoder(config: TrainConfig, manifest: PairManifest, steps: int | None = None,
                     weights: LossWeights = PRETRAIN_WEIGHTS, out_dir=None) -> Checkpoint:
    """Supervised warm-start phase on aligned pairs.

    Trains the generator with a pixel-L2-dominant objective on a strong-policy
    manifest and returns the checkpoint whose encoder seeds later runs.
    """
    if manifest.policy.kind is not PolicyKind.STRONG:
        raise PolicyError("pretraining needs a strong-policy manifest")
    if len(manifest.pairs) < 2:
        raise InsufficientCorpus("pretraining needs at least two aligned pairs")
    pre = replace(config, weights=weights, policy=manifest.policy, warm_start=None,
                  freeze_encoder_steps=0)
    return fit(pre, manifest, out_dir=out_dir, max_steps=steps).checkpoint
