import numpy as np
import pytest

from nurbsrep.datagen import CorpusSpec, generate
from nurbsrep.preprocess import PreprocessConfig, normalize, pack, to_model_range


def model_bundles(surfaces, config: PreprocessConfig):
    out = []
    for s in surfaces:
        ns, rec = normalize(s)
        out.append(to_model_range(pack(ns, config, rec)))
    return out


@pytest.fixture(scope="session")
def small_corpus():
    spec = CorpusSpec(counts={"plane": 4, "ruled": 4, "smooth": 4, "cylinder": 4},
                      pad_dim=5, knot_len=8, ctrl_range=(4, 4), degree_range=(3, 3),
                      ruled_degree_range=(2, 3), seed=1)
    return generate(spec)


@pytest.fixture(scope="session")
def small_bundles(small_corpus):
    return model_bundles(small_corpus, PreprocessConfig(5, 8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
