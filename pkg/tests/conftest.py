import numpy as np
import pytest

from protoscope.backbone import BackboneConfig
from protoscope.model import ModelConfig
from protoscope.synthetic import SynthSpec, generate_corpus
from protoscope.train import TrainConfig, restore_model, train


def micro_spec(out_dir, seed=7):
    return SynthSpec(out_dir=str(out_dir), seed=seed,
                     train_per_class=12, val_per_class=4, test_per_class=4,
                     ood_count=8)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """A small but complete corpus: all four classes, every split."""
    out = tmp_path_factory.mktemp("corpus") / "micro"
    return generate_corpus(micro_spec(out))


@pytest.fixture(scope="session")
def micro_train_config():
    return TrainConfig(epochs=6, freeze_epochs=2, batch_size=16, seed=3)


@pytest.fixture(scope="session")
def trained_micro(micro_corpus, micro_train_config, tmp_path_factory):
    """A short training run; accurate enough for plumbing tests."""
    out = tmp_path_factory.mktemp("run")
    result = train(micro_corpus, micro_train_config,
                   ModelConfig(class_names=micro_corpus.class_names,
                               backbone=BackboneConfig()),
                   out_dir=str(out))
    return restore_model(result.best), result, micro_corpus


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
