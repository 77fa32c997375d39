"""Font parsing and glyph rasterization.

Glyphs are rendered as isolated codepoints onto a square canvas, centered on
their ink bounding box, and stored as float images in ``[-1, 1]`` with white
background ``+1`` and full ink ``-1``.  The grayscale coverage is replicated
across three channels.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from fontTools.pens.boundsPen import ControlBoundsPen
from fontTools.ttLib import TTFont
from PIL import Image, ImageDraw, ImageFont

from .errors import InsufficientCorpus, MissingGlyph, UnparsableFont, ValidationError

MANIFEST_NAME = "manifest.jsonl"
CORPUS_META_NAME = "corpus.json"


@dataclass(frozen=True)
class RenderConfig:
    canvas: int = 256
    glyph_extent: int = 220
    supersample: int = 2

    def __post_init__(self):
        if self.canvas < 1 or self.glyph_extent < 1:
            raise ValidationError("canvas and glyph_extent must be positive")
        if self.glyph_extent > self.canvas:
            raise ValidationError(
                f"glyph_extent {self.glyph_extent} exceeds canvas {self.canvas}"
            )
        if self.supersample < 1:
            raise ValidationError("supersample must be >= 1")

    @classmethod
    def for_canvas(cls, canvas: int, supersample: int = 2) -> "RenderConfig":
        """Config with the default 220/256 extent ratio scaled to ``canvas``."""
        return cls(canvas=canvas, glyph_extent=max(1, round(canvas * 220 / 256)),
                   supersample=supersample)


@dataclass(frozen=True)
class FontHandle:
    path: str
    face_index: int
    units_per_em: int
    codepoint_set: frozenset = field(repr=False)
    cmap: frozenset = field(repr=False)

    @property
    def font_id(self) -> str:
        return f"{Path(self.path).name}#{self.face_index}"


@dataclass(frozen=True)
class GlyphImage:
    pixels: np.ndarray
    codepoint: int
    font_id: str
    canvas: int = 256


def _is_nonempty(glyph_set, glyf, name) -> bool:
    if glyf is not None:
        return glyf[name].numberOfContours != 0
    pen = ControlBoundsPen(glyph_set)
    glyph_set[name].draw(pen)
    return pen.bounds is not None


def open_font(path, face_index: int = 0) -> FontHandle:
    """Parse a TrueType/OpenType file and collect its renderable codepoints.

    Raises ``FileNotFoundError`` for a missing path and ``UnparsableFont`` for
    anything fontTools or FreeType cannot read.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"font file not found: {path}")
    if face_index < 0:
        raise ValidationError("face_index must be >= 0")
    try:
        tt = TTFont(str(path), fontNumber=face_index, lazy=True)
        cmap = tt.getBestCmap() or {}
        upem = int(tt["head"].unitsPerEm)
        glyph_set = tt.getGlyphSet()
        glyf = tt["glyf"] if "glyf" in tt else None
        nonempty = {}
        inked = set()
        for cp, name in cmap.items():
            if name not in nonempty:
                nonempty[name] = _is_nonempty(glyph_set, glyf, name)
            if nonempty[name]:
                inked.add(cp)
        _pil_font(str(path), face_index, 16)
    except Exception as exc:  # fontTools raises a zoo of exception types
        raise UnparsableFont(f"cannot parse {path}: {exc}") from exc
    finally:
        try:
            tt.close()
        except Exception:
            pass
    return FontHandle(str(path), face_index, upem, frozenset(inked), frozenset(cmap))


@lru_cache(maxsize=32)
def _pil_font(path: str, face_index: int, size: int):
    return ImageFont.truetype(path, size=size, index=face_index)


def _coverage(font: FontHandle, codepoint: int, cfg: RenderConfig) -> np.ndarray:
    ss = cfg.supersample
    big_canvas = cfg.canvas * ss
    pil = _pil_font(font.path, font.face_index, cfg.glyph_extent * ss)
    scratch = 2 * big_canvas
    img = Image.new("L", (scratch, scratch), 0)
    ImageDraw.Draw(img).text((scratch // 2, scratch // 2), chr(codepoint),
                             fill=255, font=pil, anchor="mm")
    out = Image.new("L", (big_canvas, big_canvas), 0)
    bbox = img.getbbox()
    if bbox is not None:
        ink = img.crop(bbox)
        w, h = ink.size
        out.paste(ink, ((big_canvas - w) // 2, (big_canvas - h) // 2))
    cov = np.asarray(out, dtype=np.float64) / 255.0
    # box-filter downsample
    cov = cov.reshape(cfg.canvas, ss, cfg.canvas, ss).mean(axis=(1, 3))
    return cov


def rasterize(font: FontHandle, codepoint: int, cfg: RenderConfig | None = None) -> GlyphImage:
    """Render one codepoint to a ``canvas x canvas x 3`` float32 image."""
    cfg = cfg or RenderConfig()
    if codepoint not in font.cmap:
        raise MissingGlyph(codepoint, font.font_id)
    cov = _coverage(font, codepoint, cfg)
    gray = (1.0 - 2.0 * cov).astype(np.float32)
    pixels = np.repeat(gray[:, :, None], 3, axis=2)
    np.clip(pixels, -1.0, 1.0, out=pixels)
    return GlyphImage(pixels, codepoint, font.font_id, cfg.canvas)


def shared_codepoints(a: FontHandle, b: FontHandle) -> list[int]:
    return sorted(a.codepoint_set & b.codepoint_set)


def sample_codepoints(codepoints: Sequence[int], n: int, seed: int) -> list[int]:
    """Seeded sample of ``n`` codepoints, returned sorted."""
    pool = sorted(set(codepoints))
    if n > len(pool):
        raise InsufficientCorpus(f"requested {n} codepoints but only {len(pool)} are shared")
    return sorted(random.Random(seed).sample(pool, n))


def cp_label(cp: int) -> str:
    return f"U+{cp:04X}"


def parse_cp(label: str) -> int:
    if not label.upper().startswith("U+"):
        raise ValidationError(f"bad codepoint label {label!r}")
    return int(label[2:], 16)


def to_png(pixels: np.ndarray, path) -> None:
    """Write a ``[-1, 1]`` image (HxW or HxWxC, channel 0 used) as 8-bit grayscale."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[..., 0]
    u8 = np.rint((np.clip(arr, -1, 1) + 1.0) / 2.0 * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Inverse of :func:`to_png`: returns an HxWx3 float32 image in ``[-1, 1]``."""
    with Image.open(path) as im:
        u8 = np.asarray(im.convert("L"), dtype=np.float32)
    gray = u8 / 255.0 * 2.0 - 1.0
    return np.repeat(gray[:, :, None], 3, axis=2)


@dataclass(frozen=True)
class CorpusEntry:
    cp: int
    src: str
    tgt: str


@dataclass
class CorpusManifest:
    root: Path
    entries: list[CorpusEntry]
    meta: dict = field(default_factory=dict)

    @property
    def codepoints(self) -> list[int]:
        return [e.cp for e in self.entries]

    def entry(self, cp: int) -> CorpusEntry:
        try:
            return self._index[cp]
        except AttributeError:
            self._index = {e.cp: e for e in self.entries}
            return self._index[cp]

    def __len__(self):
        return len(self.entries)


def render_corpus(a: FontHandle, b: FontHandle, codepoints: Iterable[int],
                  cfg: RenderConfig, out_dir, extra_meta: dict | None = None) -> Path:
    """Render source/target images for every codepoint and write the manifest.

    Images land in ``out_dir/src`` and ``out_dir/tgt``; the JSON-lines manifest
    lists rows sorted by codepoint.
    """
    cps = sorted(set(codepoints))
    missing = [cp for cp in cps if cp not in a.cmap or cp not in b.cmap]
    if missing:
        raise MissingGlyph(missing, f"{a.font_id} / {b.font_id}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    if cps:
        (out_dir / "src").mkdir(exist_ok=True)
        (out_dir / "tgt").mkdir(exist_ok=True)
    for cp in cps:
        src_rel = f"src/{cp_label(cp)}.png"
        tgt_rel = f"tgt/{cp_label(cp)}.png"
        to_png(rasterize(a, cp, cfg).pixels, out_dir / src_rel)
        to_png(rasterize(b, cp, cfg).pixels, out_dir / tgt_rel)
        rows.append({"cp": cp_label(cp), "src": src_rel, "tgt": tgt_rel})
    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    meta = {
        "src_font": {"path": str(Path(a.path).resolve()), "face_index": a.face_index},
        "tgt_font": {"path": str(Path(b.path).resolve()), "face_index": b.face_index},
        "render": {"canvas": cfg.canvas, "glyph_extent": cfg.glyph_extent,
                   "supersample": cfg.supersample},
        **(extra_meta or {}),
    }
    with open(out_dir / CORPUS_META_NAME, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return manifest


def load_corpus(path) -> CorpusManifest:
    """Load a corpus manifest given the manifest file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                row = json.loads(line)
                entries.append(CorpusEntry(parse_cp(row["cp"]), row["src"], row["tgt"]))
    meta_path = path.parent / CORPUS_META_NAME
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return CorpusManifest(path.parent, entries, meta)
