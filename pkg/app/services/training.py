"""
Adversarial training of the ANN

Each minibatch gets two sequential SGD updates:
  (i)  noisy loss (1 - lam) * BCE + lam * Cov^2 on theta_A, theta_Y, theta_BY,
       with the Bias network frozen but still passing gradient into Z_A;
  (ii) bias loss (MSE of b_hat) on theta_B only, against the just-updated
       Base network.
"""

from typing import List, Optional, Tuple
import logging

import numpy as np

from app.exceptions import InputError, TrainingError
from app.losses import bias_mse_loss, noisy_loss
from app.metrics import auc, log_loss, mse
from app.models.ann import (
    AnnParams,
    NoisyGrads,
    ann_forward_pass,
    infer,
    noisy_backward,
)
from app.models.dataset import Dataset
from app.models.network import backward, forward, sgd_step
from app.schemas import EpochLoss, MetricsReport, TrainConfig, TrainingLog

logger = logging.getLogger(__name__)

# Sub-streams of cfg.rng_seed (initialisation uses its own derivation)
_SHUFFLE_STREAM = 1
_PROBE_STREAM = 2


def _require_bias(data: Dataset) -> np.ndarray:
    if data.b is None:
        raise InputError("Dataset has no position CTR column b")
    return data.b


def _check_finite(value: float, what: str, batch_index: int, epoch: Optional[int]) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"Non-finite {what}: {value}", batch_index=batch_index, epoch=epoch)


def _check_finite_grads(grads: NoisyGrads, batch_index: int, epoch: Optional[int]) -> None:
    """All three noisy-loss updates are applied or none is"""
    for name in ("base", "prediction", "bypass"):
        net_grads = getattr(grads, name)
        for i, g in enumerate(net_grads or []):
            if not (np.all(np.isfinite(g.weights)) and np.all(np.isfinite(g.biases))):
                raise TrainingError(
                    f"Non-finite {name} gradient in layer {i}", batch_index=batch_index, epoch=epoch
                )


class TrainingService:
    """Service class for ANN training and evaluation"""

    @staticmethod
    def minibatches(n: int, size: int, rng: np.random.Generator) -> List[np.ndarray]:
        """
        Shuffled index batches of `size`; a trailing singleton is merged
        into the previous batch so every batch has at least two rows.
        """
        if n < 2:
            raise InputError(f"Need at least 2 rows to train, got {n}")
        order = rng.permutation(n)
        batches = [order[i:i + size] for i in range(0, n, size)]
        if len(batches) > 1 and batches[-1].shape[0] < 2:
            tail = batches.pop()
            batches[-1] = np.concatenate([batches[-1], tail])
        return batches

    @staticmethod
    def train_step(
        params: AnnParams,
        X: np.ndarray,
        y: np.ndarray,
        b: np.ndarray,
        cfg: TrainConfig,
        *,
        batch_index: int = 0,
        epoch: Optional[int] = None,
    ) -> Tuple[float, float]:
        """
        One alternating update on a single minibatch.
        Returns (loss_n, loss_b), each measured before its own update.
        """
        y = np.asarray(y, dtype=np.float64).ravel()
        b = np.asarray(b, dtype=np.float64).ravel()
        if y.shape[0] < 2:
            raise InputError("A training minibatch needs at least 2 rows")

        # (i) noisy loss -> theta_A, theta_Y, theta_BY
        fwd = ann_forward_pass(params, X, b)
        loss_n = noisy_loss(y, fwd.y_hat, b, fwd.b_hat, cfg.lam)
        _check_finite(loss_n.value, "noisy loss", batch_index, epoch)

        grads = noisy_backward(params, fwd, loss_n.grad_y_hat, loss_n.grad_b_hat)
        _check_finite_grads(grads, batch_index, epoch)
        sgd_step(params.base, grads.base, cfg.learning_rate, batch_index=batch_index)
        sgd_step(params.prediction, grads.prediction, cfg.learning_rate, batch_index=batch_index)
        if params.bypass is not None:
            sgd_step(params.bypass, grads.bypass, cfg.learning_rate, batch_index=batch_index)

        # (ii) bias loss -> theta_B, on the updated representation
        z_a, _ = forward(params.base, X)
        b_hat, bias_trace = forward(params.bias, z_a)
        loss_b = bias_mse_loss(b, b_hat)
        _check_finite(loss_b.value, "bias loss", batch_index, epoch)

        bias_grads, _ = backward(params.bias, bias_trace, loss_b.grad_b_hat.reshape(b_hat.shape))
        sgd_step(params.bias, bias_grads, cfg.learning_rate, batch_index=batch_index)

        return loss_n.value, loss_b.value

    @staticmethod
    def train(params: AnnParams, dataset: Dataset, cfg: TrainConfig) -> TrainingLog:
        """Run cfg.epochs passes of alternating updates over shuffled minibatches"""
        b = _require_bias(dataset)
        if len(dataset) == 0:
            raise InputError("Cannot train on an empty dataset")

        rng = np.random.default_rng([cfg.rng_seed, _SHUFFLE_STREAM])
        log = TrainingLog()
        for epoch in range(cfg.epochs):
            losses_n, losses_b = [], []
            for i, idx in enumerate(TrainingService.minibatches(len(dataset), cfg.minibatch_size, rng)):
                loss_n, loss_b = TrainingService.train_step(
                    params, dataset.X[idx], dataset.y[idx], b[idx], cfg,
                    batch_index=i, epoch=epoch,
                )
                losses_n.append(loss_n)
                losses_b.append(loss_b)

            entry = EpochLoss(epoch=epoch, loss_n=float(np.mean(losses_n)), loss_b=float(np.mean(losses_b)))
            log.epochs.append(entry)
            logger.debug(f"epoch {epoch}: loss_n={entry.loss_n:.6f} loss_b={entry.loss_b:.6f}")

        if log.epochs:
            last = log.epochs[-1]
            logger.info(
                f"Trained lam={cfg.lam} variant={params.variant.value} for {cfg.epochs} epochs: "
                f"loss_n={last.loss_n:.6f} loss_b={last.loss_b:.6f}"
            )
        return log

    @staticmethod
    def probe_bias(params: AnnParams, dataset: Dataset, cfg: TrainConfig) -> float:
        """
        Retrain only the Bias network for cfg.probe_epochs on the frozen
        representation Z_A and return its dataset-level MSE on b.
        """
        b = _require_bias(dataset)
        z_a, _ = forward(params.base, dataset.X)
        b_col = b.reshape(-1, 1)

        rng = np.random.default_rng([cfg.rng_seed, _PROBE_STREAM])
        for epoch in range(cfg.probe_epochs):
            for i, idx in enumerate(TrainingService.minibatches(len(dataset), cfg.minibatch_size, rng)):
                b_hat, trace = forward(params.bias, z_a[idx])
                loss = bias_mse_loss(b_col[idx], b_hat)
                _check_finite(loss.value, "probe loss", i, epoch)
                grads, _ = backward(params.bias, trace, loss.grad_b_hat.reshape(b_hat.shape))
                sgd_step(params.bias, grads, cfg.learning_rate, batch_index=i)

        b_hat, _ = forward(params.bias, z_a)
        probe_mse = mse(b, b_hat)
        logger.info(f"Bias probe after {cfg.probe_epochs} epochs: mse={probe_mse:.6g}")
        return probe_mse

    @staticmethod
    def evaluate(
        params: AnnParams,
        data: Dataset,
        *,
        tag: str,
        position1_ctr: Optional[float] = None,
    ) -> MetricsReport:
        """
        AUC / log loss of the click predictions and MSE of the Bias
        network's estimate of b.

        Rows use their own b unless `position1_ctr` is given, in which case
        it replaces b both as Bypass input and as the Bias-network target.
        """
        if position1_ctr is not None:
            b = np.full(len(data), float(position1_ctr))
        else:
            b = _require_bias(data)

        y_hat = infer(params, data.X, b)
        z_a, _ = forward(params.base, data.X)
        b_hat, _ = forward(params.bias, z_a)
        return MetricsReport(
            tag=tag,
            n=len(data),
            auc=auc(data.y, y_hat),
            log_loss=log_loss(data.y, y_hat),
            bias_probe_mse=mse(b, b_hat),
        )
