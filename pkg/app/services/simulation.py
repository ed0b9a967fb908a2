"""
Synthetic feedback-loop data generation

The ground-truth distribution D draws a click label y ~ Bernoulli(p_click)
and then every feature from N(y, sigma). A Reservoir and an independent
HeldOut (RUS) set are sampled from D. Each simulated day the previous
ranker scores K/2 random candidate sets drawn from the Reservoir; the two
best candidates of each set are shown in positions 1 and 2 and their
(optionally corrupted) clicks become the next day's training data.
"""

from typing import Dict, Optional, Tuple
import logging

import numpy as np

from app.exceptions import SimulationError, TrainingError
from app.metrics import auc, log_loss
from app.models.dataset import DayCtr, Dataset, FeedbackLoopOutput
from app.models.ranker import LogisticRanker
from app.schemas import FeedbackSimConfig

logger = logging.getLogger(__name__)

_STREAMS = ("reservoir", "heldout", "candidates", "corruption", "upper_bound")


def _streams(cfg: FeedbackSimConfig) -> Dict[str, np.random.Generator]:
    """Independent generators per concern, all derived from cfg.rng_seed"""
    children = np.random.SeedSequence(cfg.rng_seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}


def _top_two(scores: np.ndarray, candidates: np.ndarray) -> Tuple[int, int]:
    """Row indices of the two best-scored candidates; ties go to the lower index"""
    s = scores[candidates]
    best = s.max()
    first = int(candidates[s == best].min())

    keep = candidates != first
    rest, s_rest = candidates[keep], s[keep]
    runner_up = s_rest.max()
    second = int(rest[s_rest == runner_up].min())
    return first, second


class SimulationService:
    """Service class for the synthetic feedback-loop system"""

    @staticmethod
    def sample_reservoir(
        cfg: FeedbackSimConfig,
        rng: np.random.Generator,
        size: Optional[int] = None,
    ) -> Dataset:
        """Draw `size` (default reservoir_size) labelled examples from D"""
        n = cfg.reservoir_size if size is None else size
        y = (rng.random(n) < cfg.p_click).astype(np.float64)
        X = rng.normal(0.0, 1.0, size=(n, cfg.n_features)) * cfg.sigma + y[:, None]
        return Dataset(X=X, y=y)

    @staticmethod
    def train_ranker(data: Dataset, cfg: Optional[FeedbackSimConfig] = None) -> LogisticRanker:
        """Fit the day's logistic ranker on raw features"""
        cfg = cfg or FeedbackSimConfig()
        return LogisticRanker.fit(
            data, l2=cfg.ranker_l2, max_iter=cfg.ranker_max_iter, tol=cfg.ranker_tol
        )

    @staticmethod
    def run_feedback_loop(cfg: FeedbackSimConfig) -> FeedbackLoopOutput:
        """
        Simulate T days of model-in-the-loop ranking.

        Day 0 is K random Reservoir rows. Day d >= 1 is ranked by the model
        trained on days d-1 and d-2. Only days 1..T-1 are generated; the
        last two are returned with each row's b set to its (day, position)
        CTR.
        """
        rngs = _streams(cfg)
        reservoir = SimulationService.sample_reservoir(cfg, rngs["reservoir"])
        heldout = SimulationService.sample_reservoir(cfg, rngs["heldout"], size=cfg.heldout_size)
        loop_rng, corruption_rng = rngs["candidates"], rngs["corruption"]

        R, K = cfg.reservoir_size, cfg.K
        n_sets = K // 2
        positions = np.tile(np.array([1, 2], dtype=np.int64), n_sets)

        current = reservoir.subset(loop_rng.choice(R, size=K, replace=False))
        previous: Optional[Dataset] = None
        history = []

        logger.info(f"Running feedback loop: K={K} T={cfg.T} r={cfg.r} seed={cfg.rng_seed}")
        for day in range(1, cfg.T):
            train_data = current if previous is None else Dataset.concat([previous, current])
            try:
                ranker = SimulationService.train_ranker(train_data, cfg)
            except TrainingError as exc:
                logger.error(f"Ranker for day {day - 1} failed: {exc}")
                raise SimulationError(str(exc), day=day - 1) from exc

            scores = ranker.score(reservoir.X)
            shown = np.empty(K, dtype=np.int64)
            for k in range(n_sets):
                candidates = loop_rng.choice(R, size=cfg.candidate_set_size, replace=False, shuffle=False)
                shown[2 * k], shown[2 * k + 1] = _top_two(scores, candidates)

            y = reservoir.y[shown].copy()
            # User-level bias: position-2 clicks are lost with probability r
            position2 = y[1::2]
            lost = (position2 == 1.0) & (corruption_rng.random(n_sets) < cfg.r)
            position2[lost] = 0.0

            day_data = Dataset(X=reservoir.X[shown], y=y, position=positions.copy())
            ctr = DayCtr(day=day, position1_ctr=float(y[0::2].mean()), position2_ctr=float(y[1::2].mean()))
            history.append(ctr)
            logger.debug(
                f"day {day}: pos1 CTR={ctr.position1_ctr:.3f} pos2 CTR={ctr.position2_ctr:.3f} "
                f"lost clicks={int(lost.sum())}"
            )
            previous, current = current, day_data

        last_day = cfg.T - 1
        b_table = {}
        for entry in history[-2:]:
            b_table[(entry.day, 1)] = entry.position1_ctr
            b_table[(entry.day, 2)] = entry.position2_ctr

        def _attach(data: Dataset, day: int) -> Dataset:
            b = np.where(data.position == 1, b_table[(day, 1)], b_table[(day, 2)])
            return Dataset(X=data.X, y=data.y, b=b, position=data.position)

        output = FeedbackLoopOutput(
            topk_last=_attach(current, last_day),
            topk_prev=_attach(previous, last_day - 1),
            b_table=b_table,
            heldout=heldout,
            last_day=last_day,
            history=history,
        )
        logger.info(
            f"Feedback loop done: last-day CTR pos1={output.position1_ctr_last:.3f} "
            f"pos2={output.position2_ctr_last:.3f}"
        )
        return output

    @staticmethod
    def naive_ctr_baseline(output: FeedbackLoopOutput) -> Tuple[float, float]:
        """
        Predict the average of the four (day, position) CTR cells for every
        row; returns (average CTR, MSE of that constant against each row's b).
        """
        days = (output.prev_day, output.last_day)
        cells = [output.b_table[(day, pos)] for day in days for pos in (1, 2)]
        avg_ctr = float(np.mean(cells))
        b = output.fl_dataset().b
        return avg_ctr, float(np.mean((b - avg_ctr) ** 2))

    @staticmethod
    def logistic_upper_bound(cfg: FeedbackSimConfig, heldout: Dataset) -> Tuple[float, float]:
        """
        Fit the ranker on unbiased heldout data and score it on a second,
        independent draw of the same size: (AUC, log loss).
        """
        rng = _streams(cfg)["upper_bound"]
        test = SimulationService.sample_reservoir(cfg, rng, size=len(heldout))
        ranker = SimulationService.train_ranker(heldout, cfg)
        p = ranker.predict_proba(test.X)
        return auc(test.y, p), log_loss(test.y, p)
