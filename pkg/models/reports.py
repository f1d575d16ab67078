"""Run reports, benchmark rows and their CSV/JSON writers"""

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from errors import ErtError
from gauss_newton import GnReport
from models.model_vector import ModelVector

REPORT_COLUMNS = ["nele", "N", "M", "step", "n_iter", "t_H", "t_C", "t_chol", "t_norm"]
BENCH_COLUMNS = (
    ["nele", "N", "M", "MN", "algorithm", "step", "n_iter"]
    + ["misfit", "updated_misfit", "step_length"]
    + REPORT_COLUMNS[5:]
    + ["status"]
)
SPECTRUM_COLUMNS = ["index", "eigenvalue"]

PathLike = Union[str, Path]


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def report_rows(report: GnReport, n_electrodes: int) -> list[dict[str, Any]]:
    """One row per outer step in the layout of the iteration/timing tables"""
    return [
        {
            "nele": n_electrodes,
            "N": report.N,
            "M": report.M,
            "step": step.step,
            "n_iter": "" if step.minres_iters is None else step.minres_iters,
            "t_H": _cell(step.t_H),
            "t_C": _cell(step.t_C),
            "t_chol": _cell(step.t_chol),
            "t_norm": _cell(step.t_norm),
        }
        for step in report.steps
    ]


def write_csv(path: PathLike, columns: list[str], rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def write_report_csv(path: PathLike, report: GnReport, n_electrodes: int) -> None:
    write_csv(path, REPORT_COLUMNS, report_rows(report, n_electrodes))


def write_result_json(
    path: PathLike, model: ModelVector, report: GnReport, pretty: bool = True
) -> None:
    steps = [
        {
            "misfit": step.misfit,
            "minres_iters": step.minres_iters,
            "converged": step.converged,
            "t_H": step.t_H,
            "t_C": step.t_C,
            "t_chol": step.t_chol,
            "t_norm": step.t_norm,
        }
        for step in report.steps
    ]
    data = {
        "m": model.m.tolist(),
        "report": {
            "algorithm": report.algorithm,
            "final_misfit": report.final_misfit,
            "steps": steps,
        },
    }
    Path(path).write_text(json.dumps(data, indent=2 if pretty else None))


def write_spectrum_csv(path: PathLike, eigenvalues: np.ndarray) -> None:
    rows = [{"index": i, "eigenvalue": repr(float(v))} for i, v in enumerate(eigenvalues)]
    write_csv(path, SPECTRUM_COLUMNS, rows)


@dataclass
class RunManifest:
    """Record of one command run, written next to its outputs"""

    command: str
    version: str
    files: dict[str, str] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    started: float = field(default_factory=time.perf_counter)

    def add_file(self, role: str, path: PathLike) -> None:
        self.files[role] = str(path)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "version": self.version,
            "files": dict(self.files),
            "config": dict(self.config),
            "timings": dict(self.timings),
        }

    def to_json(self, pretty: bool = True) -> str:
        return json.dumps(self.to_dict(), indent=2 if pretty else None)

    @classmethod
    def from_json(cls, json_str: str) -> "RunManifest":
        data = json.loads(json_str)
        return cls(
            command=data["command"],
            version=data["version"],
            files=data.get("files", {}),
            config=data.get("config", {}),
            timings=data.get("timings", {}),
        )

    def write(self, path: PathLike, pretty: bool = True) -> None:
        missing = [p for p in self.files.values() if not Path(p).exists()]
        if missing:
            raise ErtError(f"manifest references missing files: {', '.join(missing)}")
        self.timings.setdefault("wall_clock", time.perf_counter() - self.started)
        Path(path).write_text(self.to_json(pretty))
