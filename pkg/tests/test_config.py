import argparse

import pytest

from typeshift.config import (SCHEMA, SECTIONS, add_flags, flag_to_key, keys_for, pair_policy,
                              render_config, resolve, train_config)
from typeshift.errors import PolicyError, ValidationError
from typeshift.pairset import PairPolicy, PolicyKind
from typeshift.trainkit import TrainConfig


@pytest.mark.parametrize("command", sorted(SECTIONS))
def test_flags_and_keys_are_bijective(command):
    mapping = flag_to_key(command)
    assert len(mapping) == len(set(mapping.values())) == len(keys_for(command))
    parser = argparse.ArgumentParser()
    add_flags(parser, command)
    dests = {a.dest for a in parser._actions if a.dest not in ("help", "config")}
    assert dests == set(mapping.values())
    text = parser.format_help()
    for flag in mapping:
        assert flag in text


def test_schema_keys_are_unique():
    dotted = [k.dotted for k in SCHEMA]
    assert len(dotted) == len(set(dotted))


def test_defaults_reproduce_train_config_defaults():
    values = resolve("train")
    assert train_config(values, PairPolicy()) == TrainConfig()


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[train]\nepochs = 3\nbatch_size = 8\n[weights]\nw_tid = 2\n')
    values = resolve("train", {"config": str(path), "train.epochs": 5})
    assert values["train.epochs"] == 5
    assert values["train.batch_size"] == 8
    assert values["weights.w_tid"] == 2.0 and isinstance(values["weights.w_tid"], float)


def test_unknown_keys_and_bad_types_are_rejected(tmp_path):
    with pytest.raises(ValidationError):
        resolve("train", file_values={"train": {"epoch": 3}})
    with pytest.raises(ValidationError):
        resolve("train", file_values={"train": {"epochs": "many"}})
    with pytest.raises(ValidationError):
        resolve("train", file_values={"augment": {"enabled": 1}})
    with pytest.raises(ValidationError):
        resolve("pair", file_values={"pair": {"policy": "loose"}})
    bad = tmp_path / "bad.toml"
    bad.write_text("[train\n")
    with pytest.raises(ValidationError):
        resolve("train", {"config": str(bad)})


def test_other_commands_sections_are_ignored():
    values = resolve("render", file_values={"train": {"nonsense": 1}, "render": {"n": 5}})
    assert values["render.n"] == 5


def test_contradictions_fail_before_work():
    values = resolve("train", file_values={"weights": {"w_l2": 1.0}})
    with pytest.raises(PolicyError):
        train_config(values, PairPolicy("soft"))
    train_config(values, PairPolicy("strong"))


@pytest.mark.parametrize("policy, overlap, ok", [
    ("strong", None, True), ("soft", None, True), ("soft", 0.3, False),
    ("strong", 0.5, False), ("random", 0.5, True), ("random", None, False),
    ("random", 1.5, False),
])
def test_pair_policy_overlap_rules(policy, overlap, ok):
    values = resolve("pair", {"pair.policy": policy, "pair.overlap": overlap})
    if ok:
        assert pair_policy(values).kind is PolicyKind(policy)
    else:
        with pytest.raises(ValidationError):
            pair_policy(values)


def test_render_config_scales_extent():
    assert render_config(resolve("render", {"render.canvas": 32})).glyph_extent == 28
    assert render_config(resolve("render", {"render.glyph_extent": 200})).glyph_extent == 200


def test_shipped_example_config_is_valid():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "micro.toml"
    for command in SECTIONS:
        resolve(command, {"config": str(path)})
    values = resolve("train", {"config": str(path)})
    cfg = train_config(values, pair_policy(resolve("pair", {"config": str(path)})))
    assert cfg.model.canvas == 32 and cfg.weights.w_tid == 10.0
