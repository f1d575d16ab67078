"""Per-cell log-conductivity model vectors with JSON persistence"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np

from errors import ParameterError
from geometry.mesh import Mesh


@dataclass
class ModelVector:
    """Cellwise log-conductivity ``m = log(sigma)``"""

    m: np.ndarray

    def __post_init__(self) -> None:
        self.m = np.asarray(self.m, dtype=float).ravel()
        if not np.all(np.isfinite(self.m)):
            raise ParameterError("model vector has non-finite entries")

    def __len__(self) -> int:
        return len(self.m)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.m)

    @property
    def resistivity(self) -> np.ndarray:
        return np.exp(-self.m)

    def shifted(self, delta: Union[float, np.ndarray]) -> "ModelVector":
        return ModelVector(self.m + delta)

    def to_json(self) -> str:
        """Convert to JSON format for storage"""
        return json.dumps({"m": self.m.tolist()})

    @classmethod
    def from_json(cls, json_str: str) -> "ModelVector":
        """Create ModelVector from JSON string"""
        data = json.loads(json_str)
        return cls(np.asarray(data["m"], dtype=float))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModelVector":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class ModelSettings:
    """Resistivities (ohm m) and checkerboard layout of the synthetic models"""

    background_resistivity: float = 3500.0
    anomaly_resistivity: float = 7000.0
    block_spacings: int = 4
    block_rows: int = 2

    @classmethod
    def from_dict(cls, config: dict[str, Any]) -> "ModelSettings":
        settings = cls(
            background_resistivity=float(config.get("background_resistivity", 3500.0)),
            anomaly_resistivity=float(config.get("anomaly_resistivity", 7000.0)),
            block_spacings=int(config.get("block_spacings", 4)),
            block_rows=int(config.get("block_rows", 2)),
        )
        settings.validate()
        return settings

    def validate(self) -> None:
        for name in ("background_resistivity", "anomaly_resistivity"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ParameterError(f"{name} must be positive, got {value}")
        if self.block_spacings < 1 or self.block_rows < 1:
            raise ParameterError("checkerboard blocks need positive width and row count")


def homogeneous_model(n_cells: int, resistivity: float) -> ModelVector:
    if resistivity <= 0.0:
        raise ParameterError(f"resistivity must be positive, got {resistivity}")
    return ModelVector(np.full(n_cells, -math.log(resistivity)))


def checkerboard_model(
    mesh: Mesh, electrode_positions: np.ndarray, settings: ModelSettings
) -> ModelVector:
    """Alternating square blocks under the electrode line.

    Blocks are ``block_spacings`` electrode spacings wide, start at the first
    electrode and reach ``block_rows`` blocks deep; the block touching the
    first electrode at the surface carries the anomaly resistivity. Cells are
    assigned by centroid; everything outside the blocks is background.
    """
    settings.validate()
    positions = np.asarray(electrode_positions, dtype=float)
    width = settings.block_spacings * (positions[-1] - positions[0]) / (len(positions) - 1)
    centroids = mesh.cell_centroids
    column = np.floor((centroids[:, 0] - positions[0]) / width)
    row = np.floor(centroids[:, 1] / width)
    inside = (
        (centroids[:, 0] >= positions[0])
        & (centroids[:, 0] <= positions[-1])
        & (row >= 0)
        & (row < settings.block_rows)
    )
    anomaly = inside & ((column + row) % 2 == 0)
    resistivity = np.where(anomaly, settings.anomaly_resistivity, settings.background_resistivity)
    return ModelVector(-np.log(resistivity))


def prolong_to_refined(model: ModelVector) -> ModelVector:
    """Cellwise values on a once uniformly refined mesh; children inherit the parent value"""
    return ModelVector(np.repeat(model.m, 4))
