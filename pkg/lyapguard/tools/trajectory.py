"""
Trajectory samples, logs and their CSV codec.

One CSV header row, columns in COLUMNS order, floats written with 17
significant digits so a log read back is bit-identical to the one written.
"""

import re
from dataclasses import dataclass, field
from typing import IO, Iterator, List, Optional, Union

import numpy as np
import pandas as pd

from lyapguard import logging
from lyapguard.tools import MalformedSampleError, SampleSource


def _names(prefix: str, count: int) -> List[str]:
    return [f"{prefix}_{i}" for i in range(1, count + 1)]


VECTOR_FIELDS = (
    ("eta", 3),
    ("eta_dot", 3),
    ("eta_d", 3),
    ("eta_d_ddot", 3),
    ("e", 3),
    ("e_dot", 3),
    ("E", 6),
    ("tau", 3),
    ("omega", 4),
    ("d", 3),
    ("v", 3),
    ("gamma", 3),
)

COLUMNS: List[str] = (
    ["t"]
    + [name for prefix, count in VECTOR_FIELDS for name in _names(prefix, count)]
    + ["V", "V_dot", "branch", "saturated", "assumption_flags"]
)

BRANCH_VALUES = ("outside", "boundary-layer")

FLOAT_FORMAT = "%.17g"


@dataclass
class TrajectorySample:
    """One logged instant of the closed loop."""

    t: float
    eta: np.ndarray
    eta_dot: np.ndarray
    eta_d: np.ndarray
    eta_d_ddot: np.ndarray
    E: np.ndarray
    tau: np.ndarray
    omega: np.ndarray
    d: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    V: float
    V_dot: float
    branch: str
    saturated: bool = False
    assumption_flags: int = 0

    @property
    def e(self) -> np.ndarray:
        return self.E[:3]

    @property
    def e_dot(self) -> np.ndarray:
        return self.E[3:]

    def to_row(self) -> dict:
        row = {"t": float(self.t)}
        for prefix, count in VECTOR_FIELDS:
            values = np.asarray(getattr(self, prefix), dtype=float).reshape(count)
            row.update(zip(_names(prefix, count), (float(x) for x in values)))
        row["V"] = float(self.V)
        row["V_dot"] = float(self.V_dot)
        row["branch"] = str(self.branch)
        row["saturated"] = int(bool(self.saturated))
        row["assumption_flags"] = int(self.assumption_flags)
        return row

    @staticmethod
    def from_row(row: dict, row_number: int) -> "TrajectorySample":
        """Decodes one CSV record of strings.

        Raises:
            MalformedSampleError: On missing, non-numeric or non-finite fields.
        """

        def number(name: str) -> float:
            text = row.get(name)
            if text is None or str(text).strip() == "":
                raise MalformedSampleError(row_number, f"missing value for column '{name}'")
            try:
                value = float(text)
            except (TypeError, ValueError):
                raise MalformedSampleError(row_number, f"column '{name}' is not a number: {text!r}")
            if not np.isfinite(value):
                raise MalformedSampleError(row_number, f"column '{name}' is not finite: {text!r}")
            return value

        def vector(prefix: str, count: int) -> np.ndarray:
            return np.array([number(name) for name in _names(prefix, count)])

        branch = str(row.get("branch", "")).strip()
        if branch not in BRANCH_VALUES:
            raise MalformedSampleError(row_number, f"unknown branch {branch!r}")
        saturated = number("saturated")
        flags = number("assumption_flags")
        if saturated not in (0.0, 1.0) or flags < 0 or flags != int(flags):
            raise MalformedSampleError(row_number, "saturated/assumption_flags must be integers")

        E = vector("E", 6)
        if not (np.array_equal(E[:3], vector("e", 3)) and np.array_equal(E[3:], vector("e_dot", 3))):
            raise MalformedSampleError(row_number, "E does not match (e, e_dot)")
        return TrajectorySample(
            t=number("t"),
            eta=vector("eta", 3),
            eta_dot=vector("eta_dot", 3),
            eta_d=vector("eta_d", 3),
            eta_d_ddot=vector("eta_d_ddot", 3),
            E=E,
            tau=vector("tau", 3),
            omega=vector("omega", 4),
            d=vector("d", 3),
            v=vector("v", 3),
            gamma=vector("gamma", 3),
            V=number("V"),
            V_dot=number("V_dot"),
            branch=branch,
            saturated=bool(saturated),
            assumption_flags=int(flags),
        )


@dataclass
class TrajectoryLog:
    """Ordered samples of one run."""

    samples: List[TrajectorySample] = field(default_factory=list)

    def append(self, sample: TrajectorySample) -> None:
        if self.samples and not sample.t > self.samples[-1].t:
            raise ValueError(
                f"log times must be strictly increasing: {sample.t} after {self.samples[-1].t}"
            )
        self.samples.append(sample)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[TrajectorySample]:
        return iter(self.samples)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([s.to_row() for s in self.samples], columns=COLUMNS)

    def to_csv(self, target: Union[str, IO[str], None] = None) -> Optional[str]:
        """Writes the log as CSV to a path or text stream, or returns the text when target is None."""
        return self.to_dataframe().to_csv(
            target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )

    @staticmethod
    def from_csv(source: Union[str, IO[str]]) -> "TrajectoryLog":
        return TrajectoryLog(samples=list(CsvSampleSource(source).samples()))


_BAD_LINE = re.compile(r"Expected \d+ fields in line (\d+)")


class CsvSampleSource(SampleSource):
    """Reads samples from a trajectory CSV file or text stream, chunk by chunk.

    Args:
        source: File path or readable text stream (for example stdin).
        chunksize (int): Rows decoded per pandas chunk.
    """

    def __init__(self, source: Union[str, IO[str]], chunksize: int = 256):
        self.source = source
        self.chunksize = chunksize

    def describe(self) -> str:
        if isinstance(self.source, str):
            return f"csv:{self.source}"
        return f"csv-stream:{getattr(self.source, 'name', type(self.source).__name__)}"

    def samples(self) -> Iterator[TrajectorySample]:
        try:
            reader = pd.read_csv(
                self.source,
                dtype=str,
                keep_default_na=False,
                chunksize=self.chunksize,
            )
        except pd.errors.EmptyDataError:
            logging.info(f"Empty trajectory input: {self.describe()}")
            return
        row_number = 0
        try:
            for chunk in reader:
                missing = [c for c in COLUMNS if c not in chunk.columns]
                if missing:
                    raise MalformedSampleError(0, f"header is missing columns {missing}")
                for record in chunk.to_dict(orient="records"):
                    row_number += 1
                    yield TrajectorySample.from_row(record, row_number)
        except pd.errors.ParserError as e:
            match = _BAD_LINE.search(str(e))
            bad_row = int(match.group(1)) - 1 if match else row_number + 1
            logging.error(f"Malformed CSV in {self.describe()}: {e}")
            raise MalformedSampleError(bad_row, "wrong number of fields")


class LogSampleSource(SampleSource):
    """Samples of an in-memory log."""

    def __init__(self, log: TrajectoryLog):
        self.log = log

    def describe(self) -> str:
        return f"log:{len(self.log)} samples"

    def samples(self) -> Iterator[TrajectorySample]:
        yield from self.log
