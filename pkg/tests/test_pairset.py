import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import count_overlap
from typeshift.errors import EmptyManifest, InsufficientCorpus, ValidationError
from typeshift.glyphrender import CorpusEntry, CorpusManifest
from typeshift.pairset import (PairManifest, PairPolicy, PairRecord, build_pairs,
                               check_policy_invariant, load_manifest, measure_overlap,
                               save_manifest, split_corpus)


def synthetic_corpus(n, root="/corpus"):
    entries = [CorpusEntry(cp, f"src/{cp}.png", f"tgt/{cp}.png") for cp in range(0x4E00, 0x4E00 + n)]
    return CorpusManifest(root, entries)


def test_split_900_100():
    corpus = synthetic_corpus(1000)
    train, test = split_corpus(corpus, 900, 100, seed=7)
    assert len(train) == 900 and len(test) == 100
    assert not set(train) & set(test)


def test_split_empty():
    assert split_corpus(synthetic_corpus(5), 0, 0, 1) == ([], [])


def test_split_seeding():
    corpus = synthetic_corpus(1000)
    assert split_corpus(corpus, 900, 100, 3) == split_corpus(corpus, 900, 100, 3)
    assert split_corpus(corpus, 900, 100, 3) != split_corpus(corpus, 900, 100, 4)


def test_split_insufficient():
    with pytest.raises(InsufficientCorpus):
        split_corpus(synthetic_corpus(10), 8, 3, 0)


def test_strong_identity_alignment():
    corpus = synthetic_corpus(10)
    a, b, c = corpus.codepoints[:3]
    m = build_pairs([a, b, c], PairPolicy("strong"), corpus)
    assert [(p.src_cp, p.tgt_cp) for p in m.pairs] == [(a, a), (b, b), (c, c)]
    assert m.pairs[0].src_path.endswith(f"src/{a}.png")
    assert m.pairs[0].tgt_path.endswith(f"tgt/{a}.png")
    assert measure_overlap(m) == 1.0


def test_soft_is_nonidentity_permutation():
    corpus = synthetic_corpus(10)
    cps = corpus.codepoints[:4]
    m = build_pairs(cps, PairPolicy("soft", seed=11), corpus)
    tgts = [p.tgt_cp for p in m.pairs]
    assert sorted(tgts) == sorted(cps)
    assert tgts != cps
    assert measure_overlap(m) == 1.0


def test_random_half_overlap_counted_by_brute_force():
    corpus = synthetic_corpus(20)
    cps = corpus.codepoints[:4]
    m = build_pairs(cps, PairPolicy("random", 0.5, seed=5), corpus)
    src = [p.src_cp for p in m.pairs]
    tgt = [p.tgt_cp for p in m.pairs]
    assert count_overlap(src, tgt) == 2
    assert measure_overlap(m) == 0.5
    assert len(set(tgt)) == len(tgt)


def test_random_zero_overlap():
    corpus = synthetic_corpus(40)
    m = build_pairs(corpus.codepoints[:16], PairPolicy("random", 0.0, seed=2), corpus)
    assert measure_overlap(m) == 0.0


def test_random_needs_outside_codepoints():
    corpus = synthetic_corpus(10)
    with pytest.raises(InsufficientCorpus):
        build_pairs(corpus.codepoints[:8], PairPolicy("random", 0.0, seed=0), corpus)


def test_codepoints_must_be_in_corpus():
    with pytest.raises(InsufficientCorpus):
        build_pairs([1], PairPolicy("strong"), synthetic_corpus(3))


def test_hand_built_overlap_half():
    # sources {1, 2, 9, 4}, targets {2, 9, 8, 7}: sources 2 and 9 overlap
    recs = [PairRecord(1, 2, "", ""), PairRecord(2, 9, "", ""),
            PairRecord(9, 8, "", ""), PairRecord(4, 7, "", "")]
    m = PairManifest(recs, PairPolicy("random", 0.5))
    assert count_overlap([r.src_cp for r in recs], [r.tgt_cp for r in recs]) == 2
    assert measure_overlap(m) == 0.5


def test_measure_overlap_empty():
    with pytest.raises(EmptyManifest):
        measure_overlap(PairManifest([], PairPolicy()))


def test_policy_validation():
    with pytest.raises(ValidationError):
        PairPolicy("random", 1.5)
    with pytest.raises(ValueError):
        PairPolicy("loose")


def test_round_half_to_even():
    corpus = synthetic_corpus(40)
    # 0.5 * 5 = 2.5 rounds to 2, 0.5 * 7 = 3.5 rounds to 4
    m5 = build_pairs(corpus.codepoints[:5], PairPolicy("random", 0.5, seed=1), corpus)
    m7 = build_pairs(corpus.codepoints[:7], PairPolicy("random", 0.5, seed=1), corpus)
    assert measure_overlap(m5) * 5 == 2
    assert measure_overlap(m7) * 7 == 4


def test_manifest_serialisation(tmp_path):
    corpus = synthetic_corpus(30, root=str(tmp_path / "corpus"))
    m = build_pairs(corpus.codepoints[:6], PairPolicy("random", 0.5, seed=9), corpus)
    path = save_manifest(m, tmp_path / "pairs" / "train.jsonl")
    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    assert header["policy"] == "random" and header["overlap"] == 0.5 and header["seed"] == 9
    assert set(json.loads(lines[1])) == {"src_cp", "tgt_cp", "src", "tgt"}
    back = load_manifest(path)
    assert [(p.src_cp, p.tgt_cp) for p in back.pairs] == [(p.src_cp, p.tgt_cp) for p in m.pairs]
    assert back.policy == m.policy
    assert save_manifest(back, tmp_path / "pairs" / "again.jsonl").read_bytes() == path.read_bytes()


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 200), kind=st.sampled_from(["strong", "soft", "random"]),
       ratio=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), seed=st.integers(0, 2**63 - 1))
def test_overlap_matches_nominal(n, kind, ratio, seed):
    corpus = synthetic_corpus(2 * n + 1)
    m = build_pairs(corpus.codepoints[:n], PairPolicy(kind, ratio, seed), corpus)
    assert check_policy_invariant(m)
    expected = round(ratio * n) / n if kind == "random" else 1.0
    assert measure_overlap(m) == expected
    assert Counter(p.src_cp for p in m.pairs) == Counter(corpus.codepoints[:n])


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 50), kind=st.sampled_from(["strong", "soft", "random"]),
       seed=st.integers(0, 1000))
def test_build_pairs_deterministic(n, kind, seed):
    corpus = synthetic_corpus(2 * n)
    pol = PairPolicy(kind, 0.5, seed)
    assert build_pairs(corpus.codepoints[:n], pol, corpus).pairs == \
        build_pairs(corpus.codepoints[:n], pol, corpus).pairs
