"""Multilevel two-way functional data: container, CSV/JSON I/O and stacking.

Indices are 0-based in the Python API. Condition labels in the CSV files are
1-based (``1..J``).
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConditionIndexError, IntegrityError, ShapeError

RESPONSES_FILE = "responses.csv"
COVARIATES_FILE = "covariates.csv"
GRID_FILE = "grid.json"


@dataclass(eq=False)
class FunctionalDataset:
    """Observed surfaces ``y_ij`` for subjects ``i`` under conditions ``j``.

    Responses are stored as a ``(J', T*F)`` array whose rows follow ``pairs``:
    subject-major, conditions ascending within each subject.
    """

    subject_ids: list
    covariates: np.ndarray
    time_grid: np.ndarray
    freq_grid: np.ndarray
    n_conditions: int
    pairs: np.ndarray
    responses: np.ndarray
    covariate_names: list = field(default=None)

    def __post_init__(self):
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        self.freq_grid = np.asarray(self.freq_grid, dtype=float)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.responses = np.asarray(self.responses, dtype=float)
        self.subject_ids = [str(s) for s in self.subject_ids]
        if self.covariate_names is None:
            self.covariate_names = [f"x{k + 1}" for k in range(self.covariates.shape[1])]
        self._validate()

    def _validate(self):
        n, J = self.n_subjects, self.n_conditions
        if self.covariates.shape[0] != n:
            raise IntegrityError(f"{self.covariates.shape[0]} covariate rows for {n} subjects")
        if len(self.covariate_names) != self.n_covariates:
            raise IntegrityError("covariate_names length does not match covariate columns")
        if len(set(self.subject_ids)) != n:
            raise IntegrityError("duplicate subject ids")
        if self.responses.shape != (len(self.pairs), self.T * self.F):
            raise ShapeError(
                f"responses have shape {self.responses.shape}, expected ({len(self.pairs)}, {self.T * self.F})"
            )
        subj, cond = self.pairs[:, 0], self.pairs[:, 1]
        if np.any((cond < 0) | (cond >= J)):
            raise ConditionIndexError(f"condition outside 1..{J}")
        if np.any((subj < 0) | (subj >= n)):
            raise IntegrityError("pair refers to an unknown subject")
        key = subj * J + cond
        if np.any(np.diff(key) <= 0):
            raise IntegrityError("pairs must be sorted subject-major with unique ascending conditions")
        if len(np.unique(subj)) != n:
            raise IntegrityError("every subject needs at least one observed condition")
        if len(np.unique(cond)) != J:
            raise IntegrityError("every condition must be observed by some subject")
        if not np.all(np.isfinite(self.responses)):
            raise IntegrityError("responses contain non-finite values")
        if not np.all(np.isfinite(self.covariates)):
            raise IntegrityError("covariates contain non-finite values")

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    @property
    def T(self):
        return len(self.time_grid)

    @property
    def F(self):
        return len(self.freq_grid)

    @property
    def n_pairs(self):
        """``J'``, the total number of observed (subject, condition) pairs."""
        return len(self.pairs)

    @property
    def pair_subject(self):
        return self.pairs[:, 0]

    @property
    def pair_condition(self):
        return self.pairs[:, 1]

    @property
    def observed(self):
        return [self.pairs[self.pairs[:, 0] == i, 1] for i in range(self.n_subjects)]

    @property
    def condition_counts(self):
        return np.bincount(self.pairs[:, 0], minlength=self.n_subjects)

    @property
    def design(self):
        """``Z = BlockDiag(1_{J_1}, ..., 1_{J_n})`` of shape ``(J', n)``."""
        z = np.zeros((self.n_pairs, self.n_subjects))
        z[np.arange(self.n_pairs), self.pairs[:, 0]] = 1.0
        return z

    def pair_index(self, i, j):
        hit = np.flatnonzero((self.pairs[:, 0] == i) & (self.pairs[:, 1] == j))
        if len(hit) == 0:
            raise KeyError((i, j))
        return int(hit[0])

    def response(self, i, j):
        return self.responses[self.pair_index(i, j)]

    def surface(self, i, j):
        """Response of pair ``(i, j)`` reshaped to ``(T, F)``."""
        return self.response(i, j).reshape(self.F, self.T).T


def from_mapping(subject_ids, covariates, time_grid, freq_grid, responses, n_conditions=None, covariate_names=None):
    """Build a dataset from ``{(i, j): vector}`` with 0-based indices."""
    keys = sorted(responses)
    if n_conditions is None:
        n_conditions = max(j for _, j in keys) + 1
    pairs = np.array(keys, dtype=np.int64).reshape(-1, 2)
    data = np.array([np.asarray(responses[k], dtype=float) for k in keys])
    return FunctionalDataset(list(subject_ids), covariates, time_grid, freq_grid, n_conditions, pairs, data,
                             covariate_names)


def stack_by_basis_index(ds, projected, l):
    """Stack projected coefficient ``l`` across observed pairs.

    ``projected`` is either a ``(J', K)`` array aligned with ``ds.pairs`` or a
    mapping ``(i, j) -> length-K vector``. Returns ``(y_l, Z)``.
    """
    if isinstance(projected, dict):
        y_l = np.array([projected[(int(i), int(j))][l] for i, j in ds.pairs])
    else:
        y_l = np.asarray(projected)[:, l].copy()
    return y_l, ds.design


def _read_grid(grid_spec):
    if isinstance(grid_spec, (str, Path)):
        with open(grid_spec) as fh:
            grid_spec = json.load(fh)
    return np.asarray(grid_spec["time"], dtype=float), np.asarray(grid_spec["freq"], dtype=float)


def load_dataset(responses_path, covariates_path, grid_spec, n_conditions=None):
    """Read the CSV/JSON dataset format.

    ``grid_spec`` is a ``{"time": [...], "freq": [...]}`` mapping or a path
    to a JSON file of that shape.
    """
    time_grid, freq_grid = _read_grid(grid_spec)
    tf = len(time_grid) * len(freq_grid)

    with open(covariates_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    subject_ids = [r[0] for r in body]
    if len(set(subject_ids)) != len(subject_ids):
        raise IntegrityError("duplicate subject ids in covariates file")
    covariates = np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(len(body), -1)
    index = {s: k for k, s in enumerate(subject_ids)}

    responses = {}
    max_cond = 0
    with open(responses_path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            sid, cond = row[0], int(row[1])
            if sid not in index:
                raise IntegrityError(f"subject '{sid}' has responses but no covariate row")
            values = np.array([float(v) for v in row[2:]])
            if len(values) != tf:
                raise ShapeError(f"response for ({sid}, {cond}) has length {len(values)}, expected {tf}")
            if cond < 1 or (n_conditions is not None and cond > n_conditions):
                raise ConditionIndexError(f"condition {cond} outside 1..{n_conditions}")
            key = (index[sid], cond - 1)
            if key in responses:
                if not np.array_equal(responses[key], values):
                    raise IntegrityError(f"conflicting duplicate rows for ({sid}, {cond})")
                continue
            responses[key] = values
            max_cond = max(max_cond, cond)
    J = n_conditions if n_conditions is not None else max_cond
    return from_mapping(subject_ids, covariates, time_grid, freq_grid, responses, J, header[1:])


def save_dataset(ds, directory):
    """Write ``responses.csv``, ``covariates.csv`` and ``grid.json`` into ``directory``.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tf = ds.T * ds.F
    with open(directory / RESPONSES_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "condition"] + [f"v{k + 1}" for k in range(tf)])
        for (i, j), row in zip(ds.pairs, ds.responses):
            w.writerow([ds.subject_ids[i], int(j) + 1] + [repr(float(v)) for v in row])
    with open(directory / COVARIATES_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id"] + list(ds.covariate_names))
        for sid, row in zip(ds.subject_ids, ds.covariates):
            w.writerow([sid] + [repr(float(v)) for v in row])
    with open(directory / GRID_FILE, "w") as fh:
        json.dump({"time": [float(v) for v in ds.time_grid], "freq": [float(v) for v in ds.freq_grid],
                   "n_conditions": int(ds.n_conditions)}, fh)
    return directory


def load_dataset_dir(directory):
    directory = Path(directory)
    with open(directory / GRID_FILE) as fh:
        grid = json.load(fh)
    return load_dataset(directory / RESPONSES_FILE, directory / COVARIATES_FILE, grid,
                        n_conditions=grid.get("n_conditions"))
