"""Scoring, comparison grids, feature-map montages and Turing-test packets."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .checkpoint import as_checkpoint
from .errors import InsufficientCorpus, MissingGroundTruth, UnknownLayer, ValidationError
from .glyphrender import FontHandle, RenderConfig, cp_label, load_png, rasterize, to_png
from .netarch import Generator, LayerTrace, set_phase
from .pairset import PairManifest, PolicyKind

KEY_FILE = "ANSWER_KEY_spoils_the_test.json"
PACKET_FILE = "packet.json"
EVAL_SEED = 0


@dataclass
class EvalReport:
    mean_l2: float
    per_glyph_l2: dict
    n: int
    phase_used: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path


def _nchw(images: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2).to(dtype)


def _generator(checkpoint) -> Generator:
    return as_checkpoint(checkpoint).generator()


def run_generator(gen: Generator, images: np.ndarray, phase: str = "infer",
                  batch_size: int = 16, style_index: int = 0) -> np.ndarray:
    """Translate a stack of HxWx3 images; deterministic for either phase.

    In training phase dropout masks come from a fixed seed and batch-norm
    statistics from each chunk of ``batch_size`` images.
    """
    set_phase(gen, phase)
    dtype = next(gen.parameters()).dtype
    outs = []
    with torch.random.fork_rng(devices=[]), torch.no_grad():
        torch.manual_seed(EVAL_SEED)
        for i in range(0, len(images), batch_size):
            chunk = images[i:i + batch_size]
            if phase == "train" and len(chunk) == 1:
                # batch norm needs two samples per channel in training phase
                chunk = np.concatenate([chunk, chunk])
                outs.append(gen(_nchw(chunk, dtype), style_index)[:1])
            else:
                outs.append(gen(_nchw(chunk, dtype), style_index))
    if not outs:
        return np.zeros((0,) + images.shape[1:], dtype=np.float32)
    return torch.cat(outs).permute(0, 2, 3, 1).float().numpy()


def evaluate(checkpoint, test_manifest: PairManifest, phase: str = "infer",
             batch_size: int = 16) -> EvalReport:
    """Mean and per-glyph pixel L2 (in ``[-1, 1]`` space) against ground truth."""
    if test_manifest.policy.kind is not PolicyKind.STRONG:
        raise MissingGroundTruth(
            f"evaluation needs aligned ground truth, manifest policy is {test_manifest.policy.kind.value}")
    if not test_manifest.pairs:
        raise InsufficientCorpus("test manifest is empty")
    gen = _generator(checkpoint)
    src = np.stack([load_png(p.src_path) for p in test_manifest.pairs])
    tgt = np.stack([load_png(p.tgt_path) for p in test_manifest.pairs])
    out = run_generator(gen, src, phase, batch_size)
    per = ((out.astype(np.float64) - tgt) ** 2).mean(axis=(1, 2, 3))
    per_glyph = {cp_label(p.src_cp): float(v) for p, v in zip(test_manifest.pairs, per)}
    return EvalReport(float(per.mean()), per_glyph, len(per), phase)


def _encode_png(u8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(u8, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _to_u8(img: np.ndarray) -> np.ndarray:
    gray = img[..., 0] if img.ndim == 3 else img
    return np.rint((np.clip(gray, -1, 1) + 1.0) / 2.0 * 255.0).astype(np.uint8)


def _write(blob: bytes, out_path):
    if out_path is None:
        return blob
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(blob)
    return out_path


def sample_grid(checkpoint, manifest: PairManifest, rows: int | None = None,
                out_path=None, phase: str = "infer"):
    """Grid with one row per glyph: source | ground truth | generated.

    The ground-truth column only appears for strong-policy manifests.  Returns
    PNG bytes, or the written path when ``out_path`` is given.
    """
    if not manifest.pairs:
        raise InsufficientCorpus("cannot draw a grid from an empty manifest")
    pairs = manifest.pairs[: rows or len(manifest.pairs)]
    src = np.stack([load_png(p.src_path) for p in pairs])
    out = run_generator(_generator(checkpoint), src, phase)
    columns = [src]
    if manifest.has_ground_truth:
        columns.append(np.stack([load_png(p.tgt_path) for p in pairs]))
    columns.append(out)
    grid = np.concatenate([np.concatenate([_to_u8(c[i]) for c in columns], axis=1)
                           for i in range(len(pairs))], axis=0)
    return _write(_encode_png(grid), out_path)


def _montage(fmap: np.ndarray) -> np.ndarray:
    """Tile CxHxW channels into a near-square grid, each min-max scaled to 0..255."""
    c, h, w = fmap.shape
    cols = math.ceil(math.sqrt(c))
    rows = math.ceil(c / cols)
    canvas = np.zeros((rows * h, cols * w), dtype=np.uint8)
    for k in range(c):
        ch = fmap[k].astype(np.float64)
        lo, hi = ch.min(), ch.max()
        tile = np.zeros_like(ch) if hi <= lo else (ch - lo) / (hi - lo) * 255.0
        r, q = divmod(k, cols)
        canvas[r * h:(r + 1) * h, q * w:(q + 1) * w] = np.rint(tile).astype(np.uint8)
    return canvas


def layer_names(gen: Generator) -> list[str]:
    n = gen.spec.n_stages
    return [f"conv{k}" for k in range(1, n + 1)] + [f"deconv{k}" for k in range(1, n + 1)]


def feature_maps(checkpoint, glyph, layers: Sequence[str] = ("conv1", "deconv8"),
                 out_dir=None, phase: str = "infer") -> dict:
    """Per-layer montage of a single glyph's activations.

    ``glyph`` is an HxWx3 array or a :class:`GlyphImage`.  Returns a mapping
    layer -> ``(png bytes or path, tile_count)``.
    """
    gen = _generator(checkpoint)
    valid = layer_names(gen)
    unknown = [l for l in layers if l not in valid]
    if unknown:
        raise UnknownLayer(f"unknown layer(s) {unknown}; valid: {valid}")
    pixels = getattr(glyph, "pixels", glyph)
    x = _nchw(np.asarray(pixels)[None], next(gen.parameters()).dtype)
    trace: list[LayerTrace] = []
    set_phase(gen, phase)
    with torch.random.fork_rng(devices=[]), torch.no_grad():
        torch.manual_seed(EVAL_SEED)
        if phase == "train":
            x = torch.cat([x, x])
        gen(x, trace=trace)
    by_name = {t.name: t.out[0].float().numpy() for t in trace}
    result = {}
    for layer in layers:
        fmap = by_name[layer]
        target = Path(out_dir) / f"{layer}.png" if out_dir is not None else None
        result[layer] = (_write(_encode_png(_montage(fmap)), target), fmap.shape[0])
    return result


@dataclass
class TuringPacket:
    images: list
    key: list
    seed: int
    codepoints: list = field(default_factory=list)


def turing_packet(checkpoint, manifest: PairManifest, n: int, seed: int, out_dir,
                  phase: str = "infer") -> TuringPacket:
    """Shuffle ``n`` ground-truth and ``n`` generated glyphs into one packet.

    Writes ``img_XXX.png`` files, ``packet.json`` (the image order, no labels)
    and the answer key in a separate file whose name warns it spoils the test.
    """
    if manifest.policy.kind is not PolicyKind.STRONG:
        raise MissingGroundTruth("Turing packets need a strong-policy manifest")
    if n < 1 or n > len(manifest.pairs):
        raise InsufficientCorpus(f"need {n} glyphs, manifest has {len(manifest.pairs)}")
    rng = np.random.default_rng(seed)
    chosen = [manifest.pairs[i] for i in sorted(rng.choice(len(manifest.pairs), n, replace=False))]
    src = np.stack([load_png(p.src_path) for p in chosen])
    real = np.stack([load_png(p.tgt_path) for p in chosen])
    fake = run_generator(_generator(checkpoint), src, phase)
    items = [(real[i], "real", chosen[i].tgt_cp) for i in range(n)]
    items += [(fake[i], "generated", chosen[i].src_cp) for i in range(n)]
    order = rng.permutation(2 * n)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, key, cps = [], [], []
    for slot, idx in enumerate(order):
        img, label, cp = items[idx]
        name = f"img_{slot:03d}.png"
        to_png(img, out_dir / name)
        images.append(str(out_dir / name))
        key.append(label)
        cps.append(cp)
    (out_dir / PACKET_FILE).write_text(json.dumps(
        {"images": [Path(p).name for p in images], "seed": seed}, indent=2) + "\n", encoding="utf-8")
    (out_dir / KEY_FILE).write_text(json.dumps(
        {"key": key, "codepoints": [cp_label(c) for c in cps], "seed": seed}, indent=2) + "\n",
        encoding="utf-8")
    return TuringPacket(images, key, seed, cps)


def score_key(key: Sequence[str], responses: Sequence[str]) -> float:
    """Fraction of slots a volunteer labelled correctly."""
    if len(key) != len(responses):
        raise ValidationError(f"{len(responses)} responses for {len(key)} images")
    if not key:
        raise ValidationError("empty key")
    return sum(k == r for k, r in zip(key, responses)) / len(key)


def load_key(packet_dir) -> list[str]:
    return json.loads((Path(packet_dir) / KEY_FILE).read_text(encoding="utf-8"))["key"]


def transfer_glyphs(checkpoint, font: FontHandle, text: str, out_dir,
                    cfg: RenderConfig | None = None, phase: str = "infer") -> list[Path]:
    """Rasterize each character of ``text`` with ``font`` and write transferred PNGs."""
    ckpt = as_checkpoint(checkpoint)
    canvas = ckpt.spec.canvas
    cfg = cfg or RenderConfig.for_canvas(canvas)
    if cfg.canvas != canvas:
        raise ValidationError(f"render canvas {cfg.canvas} differs from model canvas {canvas}")
    cps = [ord(ch) for ch in text if not ch.isspace()]
    if not cps:
        raise ValidationError("no characters to transfer")
    src = np.stack([rasterize(font, cp, cfg).pixels for cp in cps])
    out = run_generator(ckpt.generator(), src, phase)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, cp in enumerate(cps):
        path = out_dir / f"{i:03d}_{cp_label(cp)}.png"
        to_png(out[i], path)
        paths.append(path)
    return paths


def transfer_manifest(checkpoint, manifest: PairManifest, out_dir, phase: str = "infer") -> list[Path]:
    """Translate every source image listed in ``manifest`` to ``out_dir/U+XXXX.png``."""
    if not manifest.pairs:
        raise InsufficientCorpus("manifest lists no glyphs")
    src = np.stack([load_png(p.src_path) for p in manifest.pairs])
    out = run_generator(_generator(checkpoint), src, phase)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, p in enumerate(manifest.pairs):
        path = out_dir / f"{cp_label(p.src_cp)}.png"
        to_png(out[i], path)
        paths.append(path)
    return paths
