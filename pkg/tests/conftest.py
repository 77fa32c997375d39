import glob
import os

import pytest
import torch

from typeshift.glyphrender import RenderConfig, load_corpus, open_font, render_corpus, sample_codepoints, shared_codepoints

torch.set_num_threads(1)

FONT_DIRS = ["/usr/share/fonts", "/usr/local/share/fonts", os.path.expanduser("~/.fonts")]


def _find(name):
    for d in FONT_DIRS:
        hits = glob.glob(os.path.join(d, "**", name), recursive=True)
        if hits:
            return hits[0]
    return None


def _find_cjk():
    env = os.environ.get("TYPESHIFT_CJK_FONT")
    if env:
        return open_font(env)
    for d in FONT_DIRS:
        for path in glob.glob(os.path.join(d, "**", "*.[ot]t[fc]"), recursive=True):
            if "cjk" in path.lower() or "noto" in path.lower() or "wqy" in path.lower():
                try:
                    h = open_font(path)
                except Exception:
                    continue
                if 0x6C38 in h.codepoint_set:
                    return h
    return None


@pytest.fixture(scope="session")
def sans_font():
    path = _find("DejaVuSans.ttf")
    if path is None:
        pytest.skip("DejaVu Sans not installed")
    return open_font(path)


@pytest.fixture(scope="session")
def serif_font():
    path = _find("DejaVuSerif.ttf")
    if path is None:
        pytest.skip("DejaVu Serif not installed")
    return open_font(path)


@pytest.fixture(scope="session")
def cjk_font():
    h = _find_cjk()
    if h is None:
        pytest.skip("no CJK font with U+6C38 installed")
    return h


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory, sans_font, serif_font):
    """200 shared codepoints rendered on a 32 px canvas."""
    out = tmp_path_factory.mktemp("corpus32")
    cps = sample_codepoints(shared_codepoints(sans_font, serif_font), 200, 0)
    render_corpus(sans_font, serif_font, cps, RenderConfig.for_canvas(32), out)
    return load_corpus(out)


def make_manifest(corpus, n, kind="strong", seed=0, start=0, ratio=1.0, split="train"):
    from typeshift.pairset import PairPolicy, build_pairs

    cps = sorted(corpus.codepoints)[start:start + n]
    return build_pairs(cps, PairPolicy(kind, ratio, seed), corpus, split)


@pytest.fixture
def strong10(micro_corpus):
    return make_manifest(micro_corpus, 10)


@pytest.fixture
def soft10(micro_corpus):
    return make_manifest(micro_corpus, 10, "soft")


def pytest_terminal_summary(terminalreporter):
    from acceptlog import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
