"""Longitudinal datasets: containers, CSV ingestion and the two simulators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when a dataset or data file violates the longitudinal layout."""


@dataclass(frozen=True)
class IndividualSeries:
    id: str
    times: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).copy()
        responses = np.asarray(self.responses, dtype=float).copy()
        if times.ndim != 1 or times.shape != responses.shape:
            raise DataError(f"individual {self.id!r}: times and responses must be 1-D of equal length")
        if times.size == 0:
            raise DataError(f"individual {self.id!r}: no observations")
        if not np.all(np.isfinite(responses)) or not np.all(np.isfinite(times)):
            raise DataError(f"individual {self.id!r}: non-finite value")
        if np.any(np.diff(times) <= 0):
            raise DataError(f"individual {self.id!r}: times must be strictly increasing")
        times.flags.writeable = False
        responses.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "responses", responses)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class LongitudinalDataset:
    """Immutable collection of per-individual series.

    The flat views (``y``, ``t``, ``offsets``) concatenate individuals in
    order; observations of individual ``i`` live in
    ``y[offsets[i]:offsets[i + 1]]``.
    """

    individuals: tuple
    label: str = ""
    y: np.ndarray = field(init=False, repr=False, compare=False)
    t: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        individuals = tuple(self.individuals)
        if not individuals:
            raise DataError("dataset has no individuals")
        ids = [ind.id for ind in individuals]
        if len(set(ids)) != len(ids):
            raise DataError("individual ids must be unique")
        object.__setattr__(self, "individuals", individuals)
        sizes = np.array([len(ind) for ind in individuals])
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        y = np.concatenate([ind.responses for ind in individuals])
        t = np.concatenate([ind.times for ind in individuals])
        for arr in (offsets, y, t):
            arr.flags.writeable = False
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)

    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    @property
    def n_observations(self) -> int:
        return int(self.offsets[-1])

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def ids(self) -> list[str]:
        return [ind.id for ind in self.individuals]

    def __eq__(self, other):
        if not isinstance(other, LongitudinalDataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.y, other.y)
        )

    def __hash__(self):
        return hash((tuple(self.ids), self.y.tobytes(), self.t.tobytes()))

    @classmethod
    def from_arrays(cls, ids: Sequence, times: Sequence, y: Sequence, label: str = "") -> "LongitudinalDataset":
        """Group flat (id, time, y) columns into individuals, keeping first-seen id order."""
        groups: dict[str, list[tuple[float, float]]] = {}
        for i, tt, yy in zip(ids, times, y):
            groups.setdefault(str(i), []).append((float(tt), float(yy)))
        individuals = []
        for key, rows in groups.items():
            rows.sort(key=lambda r: r[0])
            tt = np.array([r[0] for r in rows])
            if np.any(np.diff(tt) == 0):
                dup = tt[:-1][np.diff(tt) == 0][0]
                raise DataError(f"duplicate time {dup:g} for individual {key!r}")
            individuals.append(IndividualSeries(key, tt, np.array([r[1] for r in rows])))
        if not individuals:
            raise DataError("empty dataset")
        return cls(tuple(individuals), label)


CANONICAL_COLUMNS = {"id": "id", "time": "time", "y": "y"}


def load_csv(path, mapping: Mapping | None = None, label: str | None = None) -> LongitudinalDataset:
    """Read a long-format CSV (one row per observation) into a dataset.

    ``mapping`` renames the source columns onto the canonical ``id``,
    ``time`` and ``y`` keys. Extra keys:

    - ``raw_tonnes``: when true, ``y`` is replaced by ``log(y)``;
    - ``time_origin``: subtracted from every time value (e.g. 1970).
    - ``layout = "wide"``: one ``time`` column and one response column per
      individual; all non-time columns are individuals unless ``columns``
      lists them explicitly.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    mapping = dict(mapping or {})
    raw = bool(mapping.pop("raw_tonnes", False))
    origin = float(mapping.pop("time_origin", 0.0))
    layout = mapping.pop("layout", "long")
    columns = mapping.pop("columns", None)
    cols = {**CANONICAL_COLUMNS, **mapping}

    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        rows = list(enumerate(reader, start=2))

    def col_index(name):
        try:
            return header.index(name)
        except ValueError:
            raise DataError(f"{path}: column {name!r} not in header {header}") from None

    def parse(value, lineno, what):
        try:
            out = float(value)
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse {what} {value!r}") from None
        if raw:
            if what == "y":
                if out <= 0:
                    raise DataError(f"{path}:{lineno}: non-positive tonnage {value!r}")
                out = math.log(out)
        return out

    ids, times, ys = [], [], []
    if layout == "wide":
        it = col_index(cols["time"])
        indiv = columns or [h for k, h in enumerate(header) if k != it]
        idx = [col_index(h) for h in indiv]
        for lineno, row in rows:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            tt = float(parse(row[it], lineno, "time")) - origin
            for name, k in zip(indiv, idx):
                if row[k].strip() == "":
                    continue
                ids.append(name)
                times.append(tt)
                ys.append(parse(row[k], lineno, "y"))
    elif layout == "long":
        ii, it, iy = col_index(cols["id"]), col_index(cols["time"]), col_index(cols["y"])
        for lineno, row in rows:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) <= max(ii, it, iy):
                raise DataError(f"{path}:{lineno}: too few fields")
            ids.append(row[ii].strip())
            times.append(parse(row[it], lineno, "time") - origin)
            ys.append(parse(row[iy], lineno, "y"))
    else:
        raise DataError(f"unknown layout {layout!r}")
    if not ids:
        raise DataError(f"{path}: empty dataset")
    return LongitudinalDataset.from_arrays(ids, times, ys, label=label if label is not None else path.stem)


def write_csv(dataset: LongitudinalDataset, path) -> None:
    """Write the canonical ``id,time,y`` format; floats use ``repr`` so reading back is exact."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "time", "y"])
        for ind in dataset.individuals:
            for tt, yy in zip(ind.times, ind.responses):
                writer.writerow([ind.id, repr(float(tt)), repr(float(yy))])


STUDY1_TRUTH = {"beta0": 2.0, "sigma": 0.5, "sigma0": 1.5}
STUDY2_TRUTH = {"beta0": 2.0, "sigma1": 0.5, "sigma": 2.0, "rho": 0.8, "sigma_w": 1.5}


def simulate_study1(seed: int, n_individuals: int = 5, n_times: int = 10, **truth) -> LongitudinalDataset:
    """Balanced random-intercept data: y_it = beta0 + b0_i + eps, t = 0..n_times-1."""
    p = {**STUDY1_TRUTH, **truth}
    rng = np.random.default_rng(seed)
    times = np.arange(n_times, dtype=float)
    individuals = []
    for i in range(n_individuals):
        b0 = rng.normal(0.0, p["sigma0"])
        y = p["beta0"] + b0 + rng.normal(0.0, p["sigma"], size=n_times)
        individuals.append(IndividualSeries(str(i + 1), times, y))
    return LongitudinalDataset(tuple(individuals), f"study1-seed{seed}")


def simulate_study2(
    seed: int,
    n_individuals: int = 10,
    n_range: tuple[int, int] = (10, 70),
    horizon: float = 20.0,
    resolution: float = 0.01,
    **truth,
) -> LongitudinalDataset:
    """Unbalanced random-slope data with a latent AR(1) mean component.

    Each individual gets ``n_i ~ U{10..70}`` distinct times drawn on the
    grid ``{0, 0.01, ..., 20}`` without replacement. The latent chain runs
    over consecutive observations (lag-one coefficient ``rho``). Parameter
    overrides go through ``truth`` (e.g. ``rho=0, sigma_w=0``).
    """
    p = {**STUDY2_TRUTH, **truth}
    rng = np.random.default_rng(seed)
    grid_size = int(round(horizon / resolution)) + 1
    rho, sw = p["rho"], p["sigma_w"]
    individuals = []
    for i in range(n_individuals):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        times = np.sort(rng.choice(grid_size, size=n, replace=False)) * resolution
        b1 = rng.normal(0.0, p["sigma1"])
        w = np.empty(n)
        w[0] = rng.normal(0.0, sw / math.sqrt(1.0 - rho**2))
        for j in range(1, n):
            w[j] = rng.normal(rho * w[j - 1], sw)
        y = p["beta0"] + times * b1 + w + rng.normal(0.0, p["sigma"], size=n)
        individuals.append(IndividualSeries(str(i + 1), times, y))
    return LongitudinalDataset(tuple(individuals), f"study2-seed{seed}")
