"""TOML run configuration with a one-to-one mapping onto command-line flags.

One file can drive a whole experiment::

    [render]
    src_font = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"
    tgt_font = "/usr/share/fonts/truetype/dejavu/DejaVuSerif.ttf"
    n = 1000
    canvas = 32
    out = "runs/corpus"

    [pair]
    corpus = "runs/corpus"
    policy = "soft"
    out = "runs/pairs"

    [model]
    canvas = 32
    base_channels = 4
    style_embed_dim = 8

    [train]
    manifest = "runs/pairs/train.jsonl"
    out = "runs/train"
    learning_rate = 1e-3

    [weights]
    w_tid = 10.0

Every key ``section.name`` has exactly one flag on the subcommand that reads
the section; flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli

from .checkpoint import config_hash
from .errors import ValidationError
from .glyphrender import RenderConfig
from .losses import LossWeights
from .netarch import ModelSpec
from .pairset import PairPolicy, PolicyKind
from .trainkit import AugmentConfig, TrainConfig


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    type: Any
    default: Any
    help: str
    flag: str | None = None
    nargs: int | None = None
    choices: tuple | None = None

    @property
    def dotted(self) -> str:
        return f"{self.section}.{self.name}"

    @property
    def option(self) -> str:
        return self.flag or "--" + self.name.replace("_", "-")


_MODEL, _TRAIN = ModelSpec(), TrainConfig()
_W, _AUG = LossWeights(), AugmentConfig()

SCHEMA: tuple[Key, ...] = (
    Key("render", "src_font", str, None, "source font file"),
    Key("render", "tgt_font", str, None, "target font file"),
    Key("render", "src_face", int, 0, "face index inside a source collection"),
    Key("render", "tgt_face", int, 0, "face index inside a target collection"),
    Key("render", "n", int, 1000, "number of shared codepoints to render"),
    Key("render", "seed", int, 0, "codepoint sampling seed"),
    Key("render", "canvas", int, 256, "image side in pixels"),
    Key("render", "glyph_extent", int, None, "ink box side (default 220/256 of canvas)"),
    Key("render", "supersample", int, 2, "rasterization oversampling factor"),
    Key("render", "out", str, None, "output corpus directory"),

    Key("pair", "corpus", str, None, "rendered corpus directory or manifest"),
    Key("pair", "policy", str, "strong", "pairing policy", choices=tuple(k.value for k in PolicyKind)),
    Key("pair", "overlap", float, None, "overlap ratio (random policy only)"),
    Key("pair", "seed", int, 0, "split and pairing seed"),
    Key("pair", "train", int, 900, "training pairs"),
    Key("pair", "test", int, 100, "held-out test glyphs"),
    Key("pair", "out", str, None, "output directory for train.jsonl and test.jsonl"),

    Key("model", "canvas", int, _MODEL.canvas, "model canvas (power of two >= 32)"),
    Key("model", "base_channels", int, _MODEL.base_channels, "channels of the first conv"),
    Key("model", "style_embed_dim", int, _MODEL.style_embed_dim, "style vector length"),
    Key("model", "n_styles", int, _MODEL.n_styles, "number of target styles"),
    Key("model", "kernel", int, _MODEL.kernel, "convolution kernel size"),
    Key("model", "dropout_p", float, _MODEL.dropout_p, "dropout on deconv2/deconv3"),

    Key("train", "manifest", str, None, "training pair manifest"),
    Key("train", "out", str, None, "run directory"),
    Key("train", "resume", str, None, "checkpoint to resume from"),
    Key("train", "warm_start", str, None, "pretraining checkpoint to initialise from"),
    Key("train", "warm_start_scope", str, _TRAIN.warm_start_scope, "tensors copied on warm start",
        choices=("encoder", "generator")),
    Key("train", "freeze_encoder_steps", int, 0, "steps during which the encoder is frozen"),
    Key("train", "batch_size", int, _TRAIN.batch_size, "minibatch size"),
    Key("train", "epochs", int, _TRAIN.epochs, "passes over the training pairs"),
    Key("train", "max_steps", int, None, "stop after this many steps"),
    Key("train", "learning_rate", float, _TRAIN.learning_rate, "Adam step size"),
    Key("train", "beta1", float, _TRAIN.beta1, "Adam beta1"),
    Key("train", "beta2", float, _TRAIN.beta2, "Adam beta2"),
    Key("train", "seed", int, 0, "seed for initialisation, data order, dropout and augmentation"),
    Key("train", "block_const_grad", bool, False, "stop gradients through f(G(x)) in the const loss"),
    Key("train", "checkpoint_every", int, 0, "steps between checkpoints (0 = final only)"),
    Key("train", "sample_every", int, 0, "steps between sample grids (0 = never)"),
    Key("train", "dtype", str, "float32", "parameter dtype", choices=("float32", "float64")),

    Key("weights", "w_gan", float, _W.w_gan, "adversarial loss weight"),
    Key("weights", "w_const", float, _W.w_const, "encoder consistency weight"),
    Key("weights", "w_tid", float, _W.w_tid, "target identity weight"),
    Key("weights", "w_tv", float, _W.w_tv, "total variation weight"),
    Key("weights", "w_l2", float, _W.w_l2, "supervised pixel L2 weight (strong policy only)"),

    Key("augment", "enabled", bool, _AUG.enabled, "random shift/scale augmentation",
        flag="--augment"),
    Key("augment", "max_shift_px", int, None, "largest shift (default 8 px per 256 px of canvas)"),
    Key("augment", "scale_range", float, list(_AUG.scale_range), "scale bounds LO HI", nargs=2),
    Key("augment", "fill", float, _AUG.fill, "background value exposed by the warp"),
)

SECTIONS = {
    "render": ("render",),
    "pair": ("pair",),
    "train": ("model", "train", "weights", "augment"),
}


def keys_for(command: str) -> list[Key]:
    sections = SECTIONS[command]
    return [k for k in SCHEMA if k.section in sections]


def flag_to_key(command: str) -> dict[str, str]:
    return {k.option: k.dotted for k in keys_for(command)}


def add_flags(parser: argparse.ArgumentParser, command: str) -> None:
    """Register one flag per config key; unset flags stay out of the namespace."""
    parser.add_argument("--config", help="TOML file whose values the flags override")
    for k in keys_for(command):
        kw = dict(dest=k.dotted, default=argparse.SUPPRESS, help=f"{k.help} [{k.dotted}]")
        if k.type is bool:
            parser.add_argument(k.option, action=argparse.BooleanOptionalAction, **kw)
            continue
        kw["type"] = k.type
        if k.nargs:
            kw["nargs"] = k.nargs
        if k.choices:
            kw["choices"] = k.choices
        parser.add_argument(k.option, **kw)


def _coerce(k: Key, value):
    if value is None:
        return None
    if k.nargs:
        if not isinstance(value, (list, tuple)) or len(value) != k.nargs:
            raise ValidationError(f"{k.dotted} needs {k.nargs} values, got {value!r}")
        return [_coerce(Key(k.section, k.name, k.type, None, ""), v) for v in value]
    if k.type is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"{k.dotted} must be true or false, got {value!r}")
        return value
    if k.type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, k.type) or isinstance(value, bool):
        raise ValidationError(f"{k.dotted} must be {k.type.__name__}, got {value!r}")
    if k.choices and value not in k.choices:
        raise ValidationError(f"{k.dotted} must be one of {list(k.choices)}, got {value!r}")
    return value


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def resolve(command: str, namespace: argparse.Namespace | dict | None = None,
            file_values: dict | None = None) -> dict:
    """Merge defaults, file values and flag values into ``{"section.name": value}``.

    Keys of the command's sections that the schema does not know are rejected;
    sections belonging to other commands are ignored so one file can serve all.
    """
    ns = vars(namespace) if isinstance(namespace, argparse.Namespace) else dict(namespace or {})
    if file_values is None and ns.get("config"):
        file_values = read_toml(ns["config"])
    known = {k.dotted: k for k in keys_for(command)}
    values = {name: k.default for name, k in known.items()}
    for section in SECTIONS[command]:
        table = (file_values or {}).get(section, {})
        if not isinstance(table, dict):
            raise ValidationError(f"[{section}] must be a table")
        for name, value in table.items():
            dotted = f"{section}.{name}"
            if dotted not in known:
                raise ValidationError(f"unknown config key {dotted}")
            values[dotted] = _coerce(known[dotted], value)
    for dotted, value in ns.items():
        if dotted in known:
            values[dotted] = _coerce(known[dotted], value)
    return values


def section(values: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}


def render_config(values: dict) -> RenderConfig:
    r = section(values, "render")
    if r["glyph_extent"] is None:
        return RenderConfig.for_canvas(r["canvas"], r["supersample"])
    return RenderConfig(r["canvas"], r["glyph_extent"], r["supersample"])


def pair_policy(values: dict) -> PairPolicy:
    """The pair section's policy; an explicit overlap only makes sense for random."""
    p = section(values, "pair")
    kind = PolicyKind(p["policy"])
    if kind is PolicyKind.RANDOM:
        if p["overlap"] is None:
            raise ValidationError("the random policy needs an overlap ratio")
        return PairPolicy(kind, p["overlap"], p["seed"])
    if p["overlap"] is not None:
        raise ValidationError(
            f"overlap is fixed at 1.0 for the {kind.value} policy; drop the overlap setting")
    return PairPolicy(kind, 1.0, p["seed"])


def train_config(values: dict, policy: PairPolicy) -> TrainConfig:
    """Build the validated training config; contradictions raise before any work."""
    t = section(values, "train")
    aug = section(values, "augment")
    return TrainConfig(
        model=ModelSpec(**section(values, "model")),
        batch_size=t["batch_size"], epochs=t["epochs"], learning_rate=t["learning_rate"],
        beta1=t["beta1"], beta2=t["beta2"], policy=policy,
        weights=LossWeights(**section(values, "weights")),
        augment=AugmentConfig(aug["enabled"], aug["max_shift_px"], tuple(aug["scale_range"]),
                              aug["fill"]),
        seed=t["seed"], warm_start=t["warm_start"], warm_start_scope=t["warm_start_scope"],
        freeze_encoder_steps=t["freeze_encoder_steps"], block_const_grad=t["block_const_grad"],
        checkpoint_every=t["checkpoint_every"], sample_every=t["sample_every"], dtype=t["dtype"])


def values_hash(values: dict) -> str:
    """Hash of the resolved settings; output locations are left out so that
    identical settings written to different directories hash alike."""
    return config_hash({k: v for k, v in values.items() if not k.endswith(".out")})
