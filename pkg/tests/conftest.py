import numpy as np
import pytest

from bbekit.corpus import SyntheticSpec, generate_synthetic_corpus, load_manifest
from bbekit.model import EncoderConfig, EncoderModel


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_config():
    return EncoderConfig(n_blocks=2, d_model=16, n_heads=2, d_ffn=32)


@pytest.fixture
def tiny_model(tiny_config):
    return EncoderModel.build(tiny_config, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(202)


@pytest.fixture
def make_corpus(tmp_path):
    """Factory for small on-disk synthetic corpora."""

    def _make(corpus_id="c0", **overrides):
        defaults = dict(n_speakers=5, samples_per_speaker=2, d=16, noise_std=0.1,
                        seed=40, frame_rate=10.0)
        defaults.update(overrides)
        spec = SyntheticSpec(corpus_id=corpus_id, **defaults)
        path = generate_synthetic_corpus(spec, tmp_path / corpus_id)
        return load_manifest(path)

    return _make
