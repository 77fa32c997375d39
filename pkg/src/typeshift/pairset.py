"""Training/test pair manifests under the strong, soft and random policies."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyManifest, InsufficientCorpus, ValidationError
from .glyphrender import CorpusManifest, cp_label, parse_cp


class PolicyKind(str, enum.Enum):
    STRONG = "strong"
    SOFT = "soft"
    RANDOM = "random"


@dataclass(frozen=True)
class PairPolicy:
    kind: PolicyKind = PolicyKind.STRONG
    overlap_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValidationError(f"overlap_ratio must lie in [0, 1], got {self.overlap_ratio}")

    @property
    def nominal_overlap(self) -> float:
        return self.overlap_ratio if self.kind is PolicyKind.RANDOM else 1.0


@dataclass(frozen=True)
class PairRecord:
    src_cp: int
    tgt_cp: int
    src_path: str
    tgt_path: str


@dataclass
class PairManifest:
    pairs: list[PairRecord]
    policy: PairPolicy
    split: str = "train"
    header_extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    @property
    def has_ground_truth(self) -> bool:
        return self.policy.kind is PolicyKind.STRONG


def n_overlap(n: int, ratio: float) -> int:
    # builtin round() is half-to-even
    return int(round(ratio * n))


def split_corpus(manifest: CorpusManifest, n_train: int, n_test: int, seed: int):
    """Seeded disjoint split of the corpus codepoints into sorted train/test lists."""
    if n_train < 0 or n_test < 0:
        raise ValidationError("split sizes must be non-negative")
    cps = sorted(set(manifest.codepoints))
    if n_train + n_test > len(cps):
        raise InsufficientCorpus(
            f"split needs {n_train + n_test} codepoints, corpus has {len(cps)}")
    order = np.random.default_rng(seed).permutation(len(cps))
    picked = [cps[i] for i in order[: n_train + n_test]]
    return sorted(picked[:n_train]), sorted(picked[n_train:])


def _targets(train_cps: list[int], policy: PairPolicy, corpus_cps: Sequence[int],
             exclude: set) -> list[int]:
    n = len(train_cps)
    rng = np.random.default_rng(policy.seed)
    if policy.kind is PolicyKind.STRONG:
        return list(train_cps)
    if policy.kind is PolicyKind.SOFT:
        if n <= 1:
            return list(train_cps)
        while True:
            perm = rng.permutation(n)
            if not np.array_equal(perm, np.arange(n)):
                return [train_cps[i] for i in perm]
    k = n_overlap(n, policy.overlap_ratio)
    blocked = set(train_cps) | exclude
    outside = sorted(cp for cp in set(corpus_cps) if cp not in blocked)
    if len(outside) < n - k:
        raise InsufficientCorpus(
            f"random policy with overlap {policy.overlap_ratio} needs {n - k} codepoints "
            f"outside the training split, corpus offers {len(outside)}")
    kept = [train_cps[i] for i in sorted(rng.choice(n, size=k, replace=False))]
    extra = [outside[i] for i in sorted(rng.choice(len(outside), size=n - k, replace=False))]
    pool = kept + extra
    return [pool[i] for i in rng.permutation(n)]


def build_pairs(train_cps: Sequence[int], policy: PairPolicy, corpus: CorpusManifest,
                split: str = "train", exclude: Sequence[int] = ()) -> PairManifest:
    """Pair every training codepoint's source image with a target image.

    Strong keeps the identity alignment, Soft permutes the targets (never the
    identity permutation when N > 1), and Random makes exactly
    ``round(overlap_ratio * N)`` source codepoints reappear among the targets,
    filling the rest from corpus codepoints outside ``train_cps`` and
    ``exclude`` (typically the held-out test codepoints).
    """
    train_cps = list(train_cps)
    if len(set(train_cps)) != len(train_cps):
        raise ValidationError("training codepoints must be distinct")
    known = set(corpus.codepoints)
    absent = [cp for cp in train_cps if cp not in known]
    if absent:
        raise InsufficientCorpus(
            "codepoints absent from corpus: " + ", ".join(cp_label(c) for c in absent[:10]))
    targets = _targets(train_cps, policy, corpus.codepoints, set(exclude))
    root = Path(corpus.root)
    pairs = [
        PairRecord(s, t, str(root / corpus.entry(s).src), str(root / corpus.entry(t).tgt))
        for s, t in zip(train_cps, targets)
    ]
    return PairManifest(pairs, policy, split)


def measure_overlap(m: PairManifest) -> float:
    if len(m.pairs) == 0:
        raise EmptyManifest("cannot measure overlap of an empty manifest")
    targets = {p.tgt_cp for p in m.pairs}
    return sum(p.src_cp in targets for p in m.pairs) / len(m.pairs)


def check_policy_invariant(m: PairManifest) -> bool:
    """True when ``m`` satisfies the defining property of its policy."""
    src = [p.src_cp for p in m.pairs]
    tgt = [p.tgt_cp for p in m.pairs]
    kind = m.policy.kind
    if kind is PolicyKind.STRONG:
        return src == tgt
    if kind is PolicyKind.SOFT:
        if sorted(src) != sorted(tgt):
            return False
        return len(src) <= 1 or src != tgt
    if not m.pairs:
        return True
    return round(measure_overlap(m) * len(src)) == n_overlap(len(src), m.policy.overlap_ratio)


def save_manifest(m: PairManifest, path) -> Path:
    """Write the header row followed by one JSON row per pair.

    Image paths are stored relative to the manifest's directory.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    header = {
        "policy": m.policy.kind.value,
        "overlap": measure_overlap(m) if m.pairs else m.policy.nominal_overlap,
        "seed": m.policy.seed,
        "ratio": m.policy.overlap_ratio,
        "split": m.split,
    }
    header.update(m.header_extra)
    lines = [json.dumps(header, sort_keys=True)]
    for p in m.pairs:
        lines.append(json.dumps({
            "src_cp": cp_label(p.src_cp),
            "tgt_cp": cp_label(p.tgt_cp),
            "src": os.path.relpath(Path(p.src_path).resolve(), base),
            "tgt": os.path.relpath(Path(p.tgt_path).resolve(), base),
        }, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_manifest(path) -> PairManifest:
    path = Path(path)
    rows = [json.loads(l) for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]
    if not rows or "policy" not in rows[0]:
        raise ValidationError(f"{path} lacks a pair-manifest header row")
    header, body = rows[0], rows[1:]
    policy = PairPolicy(header["policy"], header.get("ratio", header["overlap"]), header["seed"])
    base = path.parent
    pairs = [
        PairRecord(parse_cp(r["src_cp"]), parse_cp(r["tgt_cp"]),
                   str(base / r["src"]), str(base / r["tgt"]))
        for r in body
    ]
    extra = {k: v for k, v in header.items()
             if k not in ("policy", "overlap", "seed", "ratio", "split")}
    return PairManifest(pairs, policy, header.get("split", "train"), extra)
