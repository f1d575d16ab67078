"""Electrode configurations, geometric factors and pole-dipole survey layouts"""

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from errors import DegenerateConfigurationError, ParameterError
from geometry.mesh import electrode_positions

logger = logging.getLogger(__name__)

POLE_AT_INFINITY = -1
SPACINGS = (2, 4, 8)
MIN_ELECTRODES = 17

Point = Optional[Sequence[float]]


@dataclass(frozen=True)
class ElectrodeConfig:
    """One pole-dipole measurement; indices refer to ``Survey.electrode_positions``"""

    iA: int
    iB: int
    iM: int
    iN: int
    k: float

    def __post_init__(self) -> None:
        if self.iA in (self.iM, self.iN):
            raise ParameterError("transmitter electrode coincides with a receiver")
        if self.iM == self.iN:
            raise ParameterError("receiver electrodes coincide")
        if not math.isfinite(self.k) or self.k == 0.0:
            raise ParameterError(f"geometric factor must be finite and nonzero, got {self.k}")

    @property
    def pole_at_infinity(self) -> bool:
        return self.iB == POLE_AT_INFINITY


@dataclass(frozen=True, eq=False)
class Survey:
    """Ordered electrode configurations along the surface line"""

    electrode_positions: np.ndarray
    configs: tuple[ElectrodeConfig, ...]

    @property
    def M(self) -> int:
        return len(self.configs)

    @property
    def n_electrodes(self) -> int:
        return len(self.electrode_positions)

    @property
    def geometric_factors(self) -> np.ndarray:
        return np.array([config.k for config in self.configs])

    def used_electrodes(self) -> np.ndarray:
        """Sorted indices of every finite electrode referenced by a configuration"""
        used = {config.iA for config in self.configs}
        used.update(config.iM for config in self.configs)
        used.update(config.iN for config in self.configs)
        used.update(config.iB for config in self.configs if not config.pole_at_infinity)
        return np.array(sorted(used), dtype=np.int64)

    def save_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["index", "iA", "iB", "iM", "iN", "k"])
            for index, config in enumerate(self.configs):
                writer.writerow(
                    [index, config.iA, config.iB, config.iM, config.iN, repr(config.k)]
                )

    @classmethod
    def load_csv(cls, path: Union[str, Path], electrode_positions: np.ndarray) -> "Survey":
        configs = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                configs.append(
                    ElectrodeConfig(
                        iA=int(row["iA"]),
                        iB=int(row["iB"]),
                        iM=int(row["iM"]),
                        iN=int(row["iN"]),
                        k=float(row["k"]),
                    )
                )
        return cls(np.asarray(electrode_positions, dtype=float), tuple(configs))


def _distance(p: Sequence[float], q: Sequence[float]) -> float:
    distance = math.dist(p, q)
    if distance == 0.0:
        raise ParameterError(f"coincident electrodes at {tuple(p)}")
    return distance


def geometric_factor(xA: Point, xB: Point, xM: Point, xN: Point, dim: int = 2) -> float:
    """Factor turning a voltage difference into apparent resistivity.

    ``None`` for ``xB`` places the return electrode at infinity, where its
    terms vanish. ``xA``, ``xM`` and ``xN`` must be finite.
    """
    if xA is None or xM is None or xN is None:
        raise ParameterError("only the return electrode may be at infinity")
    if dim not in (2, 3):
        raise ParameterError(f"dimension must be 2 or 3, got {dim}")
    am = _distance(xA, xM)
    an = _distance(xA, xN)
    _distance(xM, xN)
    if dim == 2:
        denominator = -math.log(am) + math.log(an)
        if xB is not None:
            denominator += math.log(_distance(xB, xM)) - math.log(_distance(xB, xN))
        numerator = math.pi
    else:
        denominator = 1.0 / am - 1.0 / an
        if xB is not None:
            denominator += -1.0 / _distance(xB, xM) + 1.0 / _distance(xB, xN)
        numerator = 2.0 * math.pi
    if denominator == 0.0:
        raise DegenerateConfigurationError("receivers are equipotential for this source")
    return numerator / denominator


def pole_dipole_survey(
    n_electrodes: int, extent: Sequence[float], dim: int = 2
) -> Survey:
    """Pole-dipole configurations with receiver spacings 2, 4 and 8 electrodes.

    Per spacing ``s`` the forward triples ``(p, p + s, p + 2s)`` come first,
    then the reversed triples ``(p, p - s, p - 2s)``, giving
    ``M = 6 n_electrodes - 56`` configurations.
    """
    if n_electrodes < MIN_ELECTRODES:
        raise ParameterError(
            f"pole-dipole survey needs at least {MIN_ELECTRODES} electrodes, got {n_electrodes}"
        )
    positions = electrode_positions(n_electrodes, extent)
    points = [(float(x), 0.0) for x in positions]

    def config(a: int, m: int, n: int) -> ElectrodeConfig:
        k = geometric_factor(points[a], None, points[m], points[n], dim)
        return ElectrodeConfig(iA=a, iB=POLE_AT_INFINITY, iM=m, iN=n, k=k)

    configs = []
    for s in SPACINGS:
        configs.extend(config(p, p + s, p + 2 * s) for p in range(n_electrodes - 2 * s))
        configs.extend(config(p, p - s, p - 2 * s) for p in range(2 * s, n_electrodes))
    survey = Survey(positions, tuple(configs))
    logger.debug("pole-dipole survey: %d electrodes, M=%d", n_electrodes, survey.M)
    return survey
