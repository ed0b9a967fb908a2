"""Shared fixtures: small simulation configs and toy datasets"""

import numpy as np
import pytest

from app.config import Settings
from app.models.dataset import Dataset
from app.schemas import ExperimentSpec, FeedbackSimConfig, TrainConfig


@pytest.fixture
def small_sim_config() -> FeedbackSimConfig:
    """A feedback loop small enough to run in well under a second"""
    return FeedbackSimConfig(
        K=40,
        T=4,
        p_click=0.3,
        reservoir_size=2_000,
        heldout_size=1_000,
        candidate_set_size=200,
        n_features=4,
        rng_seed=7,
    )


@pytest.fixture
def small_train_config() -> TrainConfig:
    return TrainConfig(
        lam=0.9,
        epochs=3,
        probe_epochs=2,
        minibatch_size=16,
        base_widths=[5],
        prediction_widths=[4],
        bias_widths=[4],
        bypass_widths=[1],
        rng_seed=3,
    )


def make_fl_dataset(n: int = 60, n_features: int = 3, seed: int = 0) -> Dataset:
    """Two days x two positions with a distinct CTR per (day, position) cell"""
    rng = np.random.default_rng(seed)
    y = np.zeros(n)
    y[: n // 3] = 1.0
    rng.shuffle(y)
    y[:2] = [0.0, 1.0]
    X = rng.normal(size=(n, n_features)) + y[:, None]
    position = np.tile([1, 2], n // 2)
    ctr = {(0, 1): 0.45, (0, 2): 0.40, (1, 1): 0.47, (1, 2): 0.39}
    day = (np.arange(n) >= n // 2).astype(int)
    b = np.array([ctr[(d, p)] for d, p in zip(day, position)])
    return Dataset(X=X, y=y, b=b, position=position)


@pytest.fixture
def fl_dataset() -> Dataset:
    return make_fl_dataset()


@pytest.fixture
def small_spec(small_sim_config, small_train_config, tmp_path) -> ExperimentSpec:
    return ExperimentSpec(
        sim=small_sim_config,
        train=small_train_config,
        lambdas=[0.0, 0.9, 0.999],
        trials=2,
        output_dir=str(tmp_path / "sweep"),
        master_seed=11,
    )


@pytest.fixture
def thread_settings(tmp_path) -> Settings:
    """Thread executor keeps sweeps inside the test process"""
    return Settings(
        output_dir=str(tmp_path / "runs"),
        worker_concurrency=2,
        worker_executor="thread",
        job_max_retries=1,
        log_file=str(tmp_path / "logs" / "app.log"),
    )
