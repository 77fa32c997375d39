import json
import subprocess
import sys

import pytest

from typeshift import __version__
from typeshift.cli import build_parser, main
from typeshift.config import flag_to_key
from typeshift.pairset import check_policy_invariant, load_manifest, measure_overlap
from typeshift.trainkit import read_log

FONTS = "/usr/share/fonts/truetype/dejavu"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory, sans_font, serif_font):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    rc = main(["render", "--src-font", sans_font.path, "--tgt-font", serif_font.path,
               "--n", "60", "--canvas", "32", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def pairs(corpus):
    out = corpus.parent / "pairs"
    assert main(["pair", "--corpus", str(corpus), "--policy", "strong", "--train", "12",
                 "--test", "6", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run(pairs, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    toml = root / "run.toml"
    toml.write_text(
        "[model]\ncanvas = 32\nbase_channels = 4\nstyle_embed_dim = 8\n"
        f'[train]\nmanifest = "{pairs / "train.jsonl"}"\nlearning_rate = 1e-3\n'
        "epochs = 2\nbatch_size = 4\ncheckpoint_every = 3\n")
    assert main(["train", "--config", str(toml), "--out", str(root / "full")]) == 0
    return root


def test_version_reports_hash_algorithm(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert __version__ in out and "sha256-canonical-json" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "typeshift", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout


@pytest.mark.parametrize("command", ["render", "pair", "train"])
def test_help_lists_every_config_flag(command, capsys):
    with pytest.raises(SystemExit):
        main([command, "--help"])
    text = capsys.readouterr().out
    for flag in flag_to_key(command):
        assert flag in text


def test_every_subcommand_has_force():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        assert any("--force" in a.option_strings for a in p._actions), name


def test_render_writes_manifest_and_hash(corpus):
    rows = (corpus / "manifest.jsonl").read_text().splitlines()
    assert len(rows) == 60
    meta = json.loads((corpus / "corpus.json").read_text())
    assert len(meta["config_hash"]) == 64


def test_render_errors(corpus, tmp_path, capsys):
    args = ["render", "--src-font", f"{FONTS}/DejaVuSans.ttf", "--tgt-font",
            f"{FONTS}/DejaVuSerif.ttf", "--canvas", "32"]
    assert main(args + ["--n", "5", "--out", str(corpus)]) == 2
    assert main(["render", "--src-font", str(tmp_path / "missing.ttf"), "--tgt-font",
                 f"{FONTS}/DejaVuSerif.ttf", "--out", str(tmp_path / "x")]) == 3
    assert "missing.ttf" in capsys.readouterr().err
    assert main(args + ["--n", "100000", "--out", str(tmp_path / "y")]) == 2
    assert "shared" in capsys.readouterr().err
    bad = tmp_path / "bad.ttf"
    bad.write_bytes(b"not a font")
    assert main(["render", "--src-font", str(bad), "--tgt-font", f"{FONTS}/DejaVuSerif.ttf",
                 "--out", str(tmp_path / "z")]) == 3


def test_render_force_overwrites(sans_font, serif_font, tmp_path):
    args = ["render", "--src-font", sans_font.path, "--tgt-font", serif_font.path,
            "--n", "3", "--canvas", "32", "--out", str(tmp_path / "c")]
    assert main(args) == 0
    assert main(args) == 2
    assert main(args + ["--force"]) == 0


def test_pair_policies(corpus, tmp_path):
    out = tmp_path / "strong"
    assert main(["pair", "--corpus", str(corpus), "--train", "20", "--test", "10",
                 "--out", str(out)]) == 0
    train = load_manifest(out / "train.jsonl")
    test = load_manifest(out / "test.jsonl")
    assert check_policy_invariant(train) and len(train) == 20 and len(test) == 10
    assert not {p.src_cp for p in train.pairs} & {p.src_cp for p in test.pairs}

    out = tmp_path / "random"
    assert main(["pair", "--corpus", str(corpus), "--policy", "random", "--overlap", "0.5",
                 "--train", "20", "--test", "10", "--out", str(out)]) == 0
    train = load_manifest(out / "train.jsonl")
    assert measure_overlap(train) == 0.5
    test_cps = {p.src_cp for p in load_manifest(out / "test.jsonl").pairs}
    assert not {p.tgt_cp for p in train.pairs} & test_cps

    assert main(["pair", "--corpus", str(corpus), "--policy", "soft", "--overlap", "0.3",
                 "--out", str(tmp_path / "soft")]) == 2
    assert not (tmp_path / "soft").exists()


def test_pair_is_byte_deterministic(corpus, tmp_path):
    for name in ("a", "b"):
        assert main(["pair", "--corpus", str(corpus), "--policy", "soft", "--seed", "4",
                     "--train", "30", "--test", "10", "--out", str(tmp_path / name)]) == 0
    for f in ("train.jsonl", "test.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_outputs_and_collision(run):
    full = run / "full"
    assert (full / "last.ckpt").exists() and (full / "step_3.ckpt").exists()
    assert len(read_log(full / "train_log.csv")) == 6
    assert main(["train", "--config", str(run / "run.toml"), "--out", str(full)]) == 2


def test_train_resume_matches_uninterrupted(run):
    part = run / "part"
    base = ["train", "--config", str(run / "run.toml"), "--out", str(part)]
    assert main(base + ["--max-steps", "3"]) == 0
    assert main(base + ["--resume", str(part / "step_3.ckpt")]) == 0
    a = [r.values() for r in read_log(run / "full" / "train_log.csv")]
    b = [r.values() for r in read_log(part / "train_log.csv")]
    assert a == b


def test_train_validation_happens_before_work(run, tmp_path):
    out = tmp_path / "never"
    args = ["train", "--config", str(run / "run.toml"), "--out", str(out)]
    assert main(args + ["--batch-size", "0"]) == 2
    assert main(args + ["--canvas", "48"]) == 2
    assert not out.exists()


def test_train_l2_needs_strong_policy(corpus, run, tmp_path):
    soft = tmp_path / "soft"
    assert main(["pair", "--corpus", str(corpus), "--policy", "soft", "--train", "12",
                 "--test", "6", "--out", str(soft)]) == 0
    args = ["train", "--config", str(run / "run.toml"), "--manifest", str(soft / "train.jsonl"),
            "--out", str(tmp_path / "r")]
    assert main(args + ["--w-l2", "1"]) == 2
    assert not (tmp_path / "r").exists()


def test_eval(run, pairs, corpus, tmp_path, capsys):
    ckpt = str(run / "full" / "last.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--manifest", str(pairs / "test.jsonl")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == 6 and report["phase_used"] == "infer" and report["config_hash"]
    soft = tmp_path / "soft"
    main(["pair", "--corpus", str(corpus), "--policy", "soft", "--train", "12", "--test", "6",
          "--out", str(soft)])
    capsys.readouterr()
    assert main(["eval", "--checkpoint", ckpt, "--manifest", str(soft / "train.jsonl")]) == 2
    assert "ground truth" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                 "--manifest", str(pairs / "test.jsonl")]) == 3
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"\x00" * 64)
    assert main(["eval", "--checkpoint", str(junk), "--manifest", str(pairs / "test.jsonl")]) == 3


def test_infer_text_uses_recorded_font(run, tmp_path):
    ckpt = str(run / "full" / "last.ckpt")
    out = tmp_path / "inf"
    assert main(["infer", "--checkpoint", ckpt, "--text", "g", "--out", str(out)]) == 0
    assert [p.name for p in out.iterdir()] == ["000_U+0067.png"]
    assert main(["infer", "--checkpoint", ckpt, "--text", "g", "--out", str(out)]) == 2
    assert main(["infer", "--checkpoint", ckpt, "--text", "g", "--out", str(out), "--force"]) == 0
    assert main(["infer", "--checkpoint", ckpt, "--text", "永", "--out", str(tmp_path / "c")]) == 3


def test_infer_manifest_grid_featmaps_turing(run, pairs, corpus, tmp_path):
    ckpt = str(run / "full" / "last.ckpt")
    test = str(pairs / "test.jsonl")
    assert main(["infer", "--checkpoint", ckpt, "--manifest", test, "--out", str(tmp_path / "m")]) == 0
    assert len(list((tmp_path / "m").iterdir())) == 6
    assert main(["grid", "--checkpoint", ckpt, "--manifest", test, "--rows", "3",
                 "--out", str(tmp_path / "g.png")]) == 0
    assert main(["grid", "--checkpoint", ckpt, "--manifest", test,
                 "--out", str(tmp_path / "g.png")]) == 2
    image = str(next((corpus / "src").iterdir()))
    assert main(["featmaps", "--checkpoint", ckpt, "--image", image, "--layers", "conv1",
                 "deconv5", "--out", str(tmp_path / "f")]) == 0
    assert (tmp_path / "f" / "deconv5.png").exists()
    assert main(["featmaps", "--checkpoint", ckpt, "--image", image, "--layers", "conv9",
                 "--out", str(tmp_path / "f2")]) == 2
    assert main(["turing", "--checkpoint", ckpt, "--manifest", test, "--n", "3",
                 "--out", str(tmp_path / "t")]) == 0
    assert len(list((tmp_path / "t").glob("img_*.png"))) == 6


def test_non_finite_loss_exit_code(run, monkeypatch, tmp_path):
    from typeshift import trainkit
    from typeshift.errors import NonFiniteLoss

    def boom(*a, **k):
        raise NonFiniteLoss("total_g is nan")

    monkeypatch.setattr(trainkit, "fit", boom)
    assert main(["train", "--config", str(run / "run.toml"), "--out", str(tmp_path / "n")]) == 4
