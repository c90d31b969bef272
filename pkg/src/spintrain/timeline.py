"""Time-series records of a propagation and their CSV serialisation.

CSV schema (fixed): time_ns, P_S, P_T0, P_Tp, P_Tm, trace_re, trace_im,
max_bond, krylov_warn.  Two-pair runs carry per-pair populations in
``populations`` (keys like "S.C"); the CSV columns then hold per-type sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Timeline", "CSV_COLUMNS"]

CSV_COLUMNS = (
    "time_ns",
    "P_S",
    "P_T0",
    "P_Tp",
    "P_Tm",
    "trace_re",
    "trace_im",
    "max_bond",
    "krylov_warn",
)

_CSV_KEYS = {"P_S": "S", "P_T0": "T0", "P_Tp": "T+", "P_Tm": "T-"}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class Timeline:
    """Populations, trace/norm and solver diagnostics on a uniform time grid."""

    times: np.ndarray
    populations: dict[str, np.ndarray]
    trace: np.ndarray
    max_bond: np.ndarray
    krylov_warn: np.ndarray
    stderr: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        diffs = np.diff(self.times)
        if len(diffs) and not np.allclose(diffs, diffs[0], rtol=1e-9, atol=1e-12):
            raise ValueError("timeline requires a uniform time grid")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def population(self, key: str) -> np.ndarray:
        """Population by electronic-state key; per-type sum over pairs when
        the per-pair resolution exists (e.g. "S" = "S.C" + "S.D")."""
        if key in self.populations:
            return self.populations[key]
        parts = [v for k, v in self.populations.items() if k.split(".")[0] == key]
        if not parts:
            raise KeyError(key)
        return np.sum(parts, axis=0)

    def csv_rows(self):
        for i, t in enumerate(self.times):
            row = [_fmt(t)]
            for col in ("P_S", "P_T0", "P_Tp", "P_Tm"):
                row.append(_fmt(self.population(_CSV_KEYS[col])[i]))
            tr = complex(self.trace[i])
            row.append(_fmt(tr.real))
            row.append(_fmt(tr.imag))
            row.append(str(int(self.max_bond[i])))
            row.append(str(int(self.krylov_warn[i])))
            yield row

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(",".join(CSV_COLUMNS) + "\n")
            for row in self.csv_rows():
                f.write(",".join(row) + "\n")

    def stderr_to_csv(self, path):
        keys = sorted(self.stderr)
        with open(path, "w", newline="") as f:
            f.write(",".join(["time_ns"] + [f"stderr_{k}" for k in keys]) + "\n")
            for i, t in enumerate(self.times):
                f.write(
                    ",".join([_fmt(t)] + [_fmt(self.stderr[k][i]) for k in keys]) + "\n"
                )
