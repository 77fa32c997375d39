"""``typeshift`` command line: render, pair, train, infer, eval, grid, featmaps, turing.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 unreadable
input (fonts, files), 4 non-finite loss during training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import HASH_ALGORITHM, Checkpoint
from .config import (add_flags, pair_policy, render_config, resolve, section,
                     train_config, values_hash)
from .errors import (CorruptCheckpoint, MissingGlyph, NonFiniteLoss, OutputExists, TypeshiftError,
                     UnparsableFont, ValidationError)
from .glyphrender import CORPUS_META_NAME, load_corpus, load_png, open_font, render_corpus
from .glyphrender import sample_codepoints, shared_codepoints
from .pairset import PairPolicy, PolicyKind, build_pairs, load_manifest, save_manifest, split_corpus

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


def _guard(paths, force: bool) -> None:
    taken = [str(p) for p in paths if Path(p).exists()]
    if taken and not force:
        raise OutputExists(f"refusing to overwrite {', '.join(taken)} (pass --force)")


def _require(values: dict, *keys) -> None:
    missing = [k for k in keys if values.get(k) is None]
    if missing:
        raise ValidationError("missing required setting(s): " + ", ".join(missing))


def cmd_render(args) -> int:
    values = resolve("render", args)
    _require(values, "render.src_font", "render.tgt_font", "render.out")
    r = section(values, "render")
    cfg = render_config(values)
    out = Path(r["out"])
    _guard([out / "manifest.jsonl"], args.force)
    a = open_font(r["src_font"], r["src_face"])
    b = open_font(r["tgt_font"], r["tgt_face"])
    cps = sample_codepoints(shared_codepoints(a, b), r["n"], r["seed"])
    path = render_corpus(a, b, cps, cfg, out,
                         {"config_hash": values_hash(values), "seed": r["seed"]})
    print(f"wrote {len(cps)} pairs to {path}")
    return EXIT_OK


def cmd_pair(args) -> int:
    values = resolve("pair", args)
    _require(values, "pair.corpus", "pair.out")
    p = section(values, "pair")
    policy = pair_policy(values)
    out = Path(p["out"])
    _guard([out / "train.jsonl", out / "test.jsonl"], args.force)
    corpus = load_corpus(p["corpus"])
    train_cps, test_cps = split_corpus(corpus, p["train"], p["test"], p["seed"])
    extra = {"config_hash": values_hash(values),
             "corpus": os.path.relpath(Path(corpus.root).resolve(), out.resolve())}
    train = build_pairs(train_cps, policy, corpus, "train", exclude=test_cps)
    train.header_extra = extra
    test = build_pairs(test_cps, PairPolicy(PolicyKind.STRONG, 1.0, p["seed"]), corpus, "test")
    test.header_extra = extra
    save_manifest(train, out / "train.jsonl")
    save_manifest(test, out / "test.jsonl")
    print(f"wrote {len(train)} {policy.kind.value} training pairs and {len(test)} test pairs to {out}")
    return EXIT_OK


def _source_font(manifest_path: Path, manifest) -> dict | None:
    corpus = manifest.header_extra.get("corpus")
    if corpus is not None:
        meta = manifest_path.parent / corpus / CORPUS_META_NAME
    elif manifest.pairs:
        meta = Path(manifest.pairs[0].src_path).parent.parent / CORPUS_META_NAME
    else:
        return None
    if not meta.exists():
        return None
    return json.loads(meta.read_text(encoding="utf-8")).get("src_font")


def cmd_train(args) -> int:
    from .trainkit import fit

    values = resolve("train", args)
    _require(values, "train.manifest", "train.out")
    t = section(values, "train")
    manifest_path = Path(t["manifest"])
    manifest = load_manifest(manifest_path)
    config = train_config(values, manifest.policy)
    out = Path(t["out"])
    if t["resume"] is None:
        _guard([out / "last.ckpt", out / "train_log.csv"], args.force)
    extra = {"run_config_hash": values_hash(values)}
    font = _source_font(manifest_path, manifest)
    if font is not None:
        extra["src_font"] = font
    result = fit(config, manifest, out, resume=t["resume"], max_steps=t["max_steps"],
                 extra_meta=extra)
    last = result.log[-1].as_row() if result.log else "no steps run"
    print(f"step {result.checkpoint.step}: {last}")
    print(f"checkpoint {result.checkpoint_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .evalkit import transfer_glyphs, transfer_manifest

    ckpt = Checkpoint.load(args.checkpoint)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        _guard([out], args.force)
    if args.manifest:
        paths = transfer_manifest(ckpt, load_manifest(args.manifest), out, args.phase)
    else:
        font_path, face = args.src_font, args.src_face
        if font_path is None:
            recorded = ckpt.meta.get("src_font")
            if recorded is None:
                raise ValidationError("checkpoint records no source font; pass --src-font")
            font_path, face = recorded["path"], recorded["face_index"]
        paths = transfer_glyphs(ckpt, open_font(font_path, face), args.text, out, phase=args.phase)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evalkit import evaluate

    manifest = load_manifest(args.manifest)
    if args.out:
        _guard([args.out], args.force)
    ckpt = Checkpoint.load(args.checkpoint)
    report = evaluate(ckpt, manifest, args.phase, args.batch_size)
    payload = json.loads(report.to_json())
    payload["config_hash"] = ckpt.meta.get("config_hash")
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_grid(args) -> int:
    from .evalkit import sample_grid

    _guard([args.out], args.force)
    path = sample_grid(Checkpoint.load(args.checkpoint), load_manifest(args.manifest),
                       args.rows, args.out, args.phase)
    print(path)
    return EXIT_OK


def cmd_featmaps(args) -> int:
    from .evalkit import feature_maps

    out = Path(args.out)
    _guard([out / f"{layer}.png" for layer in args.layers], args.force)
    ckpt = Checkpoint.load(args.checkpoint)
    maps = feature_maps(ckpt, load_png(args.image), args.layers, out, args.phase)
    for layer, (path, tiles) in maps.items():
        print(f"{layer}: {tiles} channels -> {path}")
    return EXIT_OK


def cmd_turing(args) -> int:
    from .evalkit import PACKET_FILE, turing_packet

    out = Path(args.out)
    _guard([out / PACKET_FILE], args.force)
    packet = turing_packet(Checkpoint.load(args.checkpoint), load_manifest(args.manifest),
                           args.n, args.seed, out, args.phase)
    print(f"wrote {len(packet.images)} images to {out}")
    return EXIT_OK


def _phase(p):
    p.add_argument("--phase", choices=("infer", "train"), default="infer",
                   help="batch-norm/dropout phase used when generating")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="typeshift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"typeshift {__version__} (config hash: {HASH_ALGORITHM})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="rasterize a source/target corpus")
    add_flags(p, "render")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pair", help="split a corpus and write pair manifests")
    add_flags(p, "pair")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("train", help="train or resume a translator")
    add_flags(p, "train")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="transfer a string or a manifest's glyphs")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="characters to rasterize with the source font")
    src.add_argument("--manifest", help="pair manifest whose source images are transferred")
    p.add_argument("--src-font", help="source font (default: the one recorded at training)")
    p.add_argument("--src-face", type=int, default=0)
    p.add_argument("--out", required=True)
    _phase(p)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="pixel L2 against strong-policy ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", help="also write the JSON report here")
    _phase(p)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="source | truth | generated comparison image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--out", required=True)
    _phase(p)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("featmaps", help="per-layer activation montages for one glyph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="glyph PNG at the model canvas size")
    p.add_argument("--layers", nargs="+", default=["conv1", "deconv8"])
    p.add_argument("--out", required=True)
    _phase(p)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_featmaps)

    p = sub.add_parser("turing", help="shuffled real/generated packet plus answer key")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _phase(p)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_turing)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UnparsableFont, MissingGlyph, CorruptCheckpoint, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValidationError, TypeshiftError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
