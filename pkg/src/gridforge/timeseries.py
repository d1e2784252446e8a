"""Recorded simulation output: uniform samples plus metadata and event notes.

The CSV form is exact: floats are written with repr-precision so re-parsing
reproduces the in-memory array bit for bit, and no wall-clock information is
embedded (identical scenarios produce identical files).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["TimeSeries"]

_MAGIC = "# gridforge-timeseries v1"


@dataclass
class TimeSeries:
    columns: list[str]
    data: np.ndarray
    meta: dict = field(default_factory=dict)
    events: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise ValueError("data shape does not match the column list")

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.column("t_s")

    def __len__(self) -> int:
        return self.data.shape[0]

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = [_MAGIC]
        for key in sorted(self.meta):
            lines.append(f"# meta {key}={self.meta[key]}")
        for ev in self.events:
            lines.append(f"# event {ev}")
        lines.append(",".join(self.columns))
        for row in self.data:
            lines.append(",".join(f"{v:.17g}" for v in row))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        meta: dict = {}
        events: list[str] = []
        header = None
        rows = []
        with open(path) as fh:
            first = fh.readline().rstrip("\n")
            if first != _MAGIC:
                raise ValueError(f"{path}: not a gridforge timeseries file")
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("# meta "):
                    key, _, value = line[len("# meta "):].partition("=")
                    meta[key] = value
                elif line.startswith("# event "):
                    events.append(line[len("# event "):])
                elif line.startswith("#"):
                    continue
                elif header is None:
                    header = line.split(",")
                else:
                    rows.append([float(v) for v in line.split(",")])
        if header is None:
            raise ValueError(f"{path}: missing column header")
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        return cls(columns=header, data=data, meta=meta, events=events)
