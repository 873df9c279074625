"""Shared fixtures: a tiny generated corpus and its loaded splits."""

import pytest

from despoof import spoof_synth as ss
from despoof.dataset import load_split


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = ss.GenConfig(size=32, seed=11, blur_level=1,
                       mediums=("print1", "print2", "display1", "display2"),
                       train_live=6, train_spoof_per_medium=2,
                       test_live=4, test_spoof_per_medium=1)
    ss.gen_corpus(cfg, str(out))
    return str(out)


@pytest.fixture(scope="session")
def tiny_train(tiny_corpus):
    return load_split(tiny_corpus, "train")


@pytest.fixture(scope="session")
def tiny_test(tiny_corpus):
    return load_split(tiny_corpus, "test")
