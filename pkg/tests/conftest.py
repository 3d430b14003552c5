import numpy as np
import pytest

from scenesound import data, features
from scenesound import model as mdl


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params():
    return mdl.init_params(mdl.TINY, seed=3)


@pytest.fixture(scope="session")
def small_corpus():
    """Four clips per scene, 1 s long, at 16 kHz."""
    spec = data.SynthSpec(clips_per_scene=4, clip_seconds=1.0)
    return data.synth_corpus(spec, seed=5)


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    cfg = features.FeatureConfig(sample_rate=16000)
    return data.build_dataset(small_corpus, cfg, events=data.DEFAULT_EVENTS, scenes=data.DEFAULT_SCENES, threads=1)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
