"""
Artifact persistence: dataset CSVs, model checkpoints and simulation
summaries.

Dataset CSV schema (UTF-8, LF line endings, header row):

    f0,...,f{d-1},label,position,b

Features and b are written with 17 significant digits, label is 0/1,
position is 1/2; position and b are empty for data without them
(e.g. the heldout RUS set).
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import json
import logging
import re

import numpy as np
import pandas as pd

from app.exceptions import ConfigurationError, DatasetParseError
from app.models.ann import AnnParams, Variant
from app.models.dataset import Dataset, FeedbackLoopOutput
from app.models.network import Activation, DenseLayer, Network
from app.schemas import AnnCheckpoint, LayerState, NetworkState, TrainConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"
LABEL_COLUMNS = ["label", "position", "b"]


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return float("nan")


def _write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return path


class ArtifactService:
    """Service class for reading and writing run artifacts"""

    # ------------------------------------------------------------------ #
    #  Datasets                                                            #
    # ------------------------------------------------------------------ #

    @staticmethod
    def export_dataset(data: Dataset, path: PathLike) -> Path:
        """Write a dataset in the documented CSV schema"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        frame = pd.DataFrame(data.X, columns=[f"f{j}" for j in range(data.n_features)])
        frame["label"] = data.y.astype(np.int64)
        frame["position"] = pd.array(
            [pd.NA] * len(data) if data.position is None else data.position, dtype="Int64"
        )
        frame["b"] = np.nan if data.b is None else data.b
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
        logger.debug(f"Exported {len(data)} rows to {path}")
        return path

    @staticmethod
    def import_dataset(path: PathLike) -> Dataset:
        """Read a dataset CSV, rejecting malformed rows with their line number"""
        path = Path(path)
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        except pd.errors.EmptyDataError as exc:
            raise DatasetParseError("File is empty (missing header)", line=1) from exc
        except pd.errors.ParserError as exc:
            match = re.search(r"line (\d+)", str(exc))
            raise DatasetParseError(str(exc), line=int(match.group(1)) if match else 0) from exc

        columns = list(frame.columns)
        n_features = len(columns) - len(LABEL_COLUMNS)
        expected = [f"f{j}" for j in range(max(n_features, 0))] + LABEL_COLUMNS
        if n_features < 1 or columns != expected:
            raise DatasetParseError(f"Unexpected header {columns}", line=1)

        def _numeric(column: str, allow_empty: bool) -> Optional[np.ndarray]:
            raw = frame[column].str.strip()
            empty = raw == ""
            if empty.all() and allow_empty:
                return None
            # float() reloads 17-digit output bit-exactly
            values = raw.where(~empty).map(_parse_float, na_action="ignore").astype(np.float64)
            bad = ~np.isfinite(values.to_numpy())
            if bad.any():
                row = int(np.argmax(bad))
                raise DatasetParseError(f"Invalid {column} value {raw.iloc[row]!r}", line=row + 2)
            return values.to_numpy(dtype=np.float64)

        if len(frame) == 0:
            return Dataset.empty(n_features)

        X = np.column_stack([_numeric(f"f{j}", allow_empty=False) for j in range(n_features)])
        y = _numeric("label", allow_empty=False)
        bad = (y != 0.0) & (y != 1.0)
        if bad.any():
            row = int(np.argmax(bad))
            raise DatasetParseError(f"Label must be 0 or 1, got {frame['label'].iloc[row]!r}", line=row + 2)

        position = _numeric("position", allow_empty=True)
        if position is not None:
            bad = (position != 1.0) & (position != 2.0)
            if bad.any():
                row = int(np.argmax(bad))
                raise DatasetParseError(f"Position must be 1 or 2, got {position[row]}", line=row + 2)
            position = position.astype(np.int64)

        b = _numeric("b", allow_empty=True)
        if b is not None:
            bad = (b < 0.0) | (b > 1.0)
            if bad.any():
                row = int(np.argmax(bad))
                raise DatasetParseError(f"b must lie in [0, 1], got {b[row]}", line=row + 2)

        return Dataset(X=X, y=y, b=b, position=position)

    # ------------------------------------------------------------------ #
    #  Checkpoints                                                         #
    # ------------------------------------------------------------------ #

    @staticmethod
    def _network_state(net: Network) -> NetworkState:
        return NetworkState(layers=[
            LayerState(
                weights=layer.weights.tolist(),
                biases=layer.biases.tolist(),
                activation=layer.activation.value,
                use_bias=layer.use_bias,
            )
            for layer in net.layers
        ])

    @staticmethod
    def _network(state: NetworkState) -> Network:
        return Network([
            DenseLayer(
                weights=np.array(layer.weights, dtype=np.float64),
                biases=np.array(layer.biases, dtype=np.float64),
                activation=Activation(layer.activation),
                use_bias=layer.use_bias,
            )
            for layer in state.layers
        ])

    @staticmethod
    def save_checkpoint(
        params: AnnParams,
        path: PathLike,
        train_config: Optional[TrainConfig] = None,
    ) -> Path:
        checkpoint = AnnCheckpoint(
            variant=params.variant,
            n_features=params.n_features,
            base=ArtifactService._network_state(params.base),
            prediction=ArtifactService._network_state(params.prediction),
            bias=ArtifactService._network_state(params.bias),
            bypass=None if params.bypass is None else ArtifactService._network_state(params.bypass),
            train_config=train_config,
        )
        # stdlib json writes floats with repr(), which round-trips float64 exactly
        return _write_json(checkpoint.model_dump(mode="json"), path)

    @staticmethod
    def load_checkpoint(path: PathLike) -> Tuple[AnnParams, Optional[TrainConfig]]:
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            payload = json.load(fh)
        try:
            checkpoint = AnnCheckpoint.model_validate(payload)
        except ValueError as exc:
            raise ConfigurationError(f"Invalid checkpoint {path}: {exc}") from exc

        params = AnnParams(
            base=ArtifactService._network(checkpoint.base),
            prediction=ArtifactService._network(checkpoint.prediction),
            bias=ArtifactService._network(checkpoint.bias),
            bypass=None if checkpoint.bypass is None else ArtifactService._network(checkpoint.bypass),
            variant=Variant(checkpoint.variant),
        )
        if params.n_features != checkpoint.n_features:
            raise ConfigurationError(f"Checkpoint {path} declares {checkpoint.n_features} features")
        return params, checkpoint.train_config

    # ------------------------------------------------------------------ #
    #  Simulation summaries                                                #
    # ------------------------------------------------------------------ #

    @staticmethod
    def simulation_summary(
        output: FeedbackLoopOutput,
        naive: Optional[Tuple[float, float]] = None,
        upper_bound: Optional[Tuple[float, float]] = None,
    ) -> Dict[str, Any]:
        all_days = output.all_days_ctr()
        summary: Dict[str, Any] = {
            "last_day": output.last_day,
            "b_table": [
                {"day": day, "position": pos, "ctr": ctr}
                for (day, pos), ctr in sorted(output.b_table.items())
            ],
            "last_day_position1_ctr": output.position1_ctr_last,
            "last_day_position2_ctr": output.position2_ctr_last,
            "all_days_position1_ctr": all_days[0],
            "all_days_position2_ctr": all_days[1],
            "history": [
                {"day": d.day, "position1_ctr": d.position1_ctr, "position2_ctr": d.position2_ctr}
                for d in output.history
            ],
            "fl_rows": len(output.topk_prev) + len(output.topk_last),
            "heldout_rows": len(output.heldout),
        }
        if naive is not None:
            summary["naive_avg_ctr"], summary["naive_mse"] = naive
        if upper_bound is not None:
            summary["upper_bound_auc"], summary["upper_bound_log_loss"] = upper_bound
        return summary

    @staticmethod
    def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
        return _write_json(payload, path)

    @staticmethod
    def read_json(path: PathLike) -> Dict[str, Any]:
        with Path(path).open(encoding="utf-8") as fh:
            return json.load(fh)

    @staticmethod
    def export_simulation(
        output: FeedbackLoopOutput,
        out_dir: PathLike,
        naive: Optional[Tuple[float, float]] = None,
        upper_bound: Optional[Tuple[float, float]] = None,
    ) -> List[Path]:
        """fl.csv, heldout.csv and simulation_summary.json for one simulation"""
        out_dir = Path(out_dir)
        written = [
            ArtifactService.export_dataset(output.fl_dataset(), out_dir / "fl.csv"),
            ArtifactService.export_dataset(output.heldout, out_dir / "heldout.csv"),
            _write_json(
                ArtifactService.simulation_summary(output, naive, upper_bound),
                out_dir / "simulation_summary.json",
            ),
        ]
        logger.info(f"Wrote simulation artifacts to {out_dir}")
        return written
