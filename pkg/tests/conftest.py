import pytest

from alseg.config import DataParams, ExperimentConfig, ModelConfig, OptimConfig
from alseg.synthdata import build_dataset

TINY_DATA = DataParams(n_train=20, n_val=4, height=64, width=64, num_classes=3)
TINY_MODEL = ModelConfig(channels=(4, 8, 8), decoder_channels=8, embed_dim=4)


def tiny_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        name="tiny",
        seed=0,
        data=TINY_DATA,
        model=TINY_MODEL,
        optim=OptimConfig(lr=0.02),
        epochs_per_cycle=1,
        iters_per_epoch=3,
        final_epoch_multiplier=1.0,
        batch_labeled=2,
        batch_unlabeled=2,
        save_pool_snapshots=False,
        eval_batch=8,
    )
    return cfg.replace(**overrides)


@pytest.fixture(scope="session")
def tiny_ds():
    return build_dataset(0, TINY_DATA)
