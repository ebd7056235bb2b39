"""Synthetic Gaussian teacher-student data plus CSV ingestion.

Sampling is a pure function of (generator, sizes, seed): all randomness
flows through keyed counter-based streams, so concurrent sampling of
distinct realizations reproduces serial execution bit for bit.
"""

from __future__ import annotations

import csv

import numpy as np

from . import rng
from .core import Batch, DataRealization, GeneratorSpec


class DatasetParseError(ValueError):
    """A CSV row failed to parse; the message names the offending line."""


def sample_realization(
    gen: GeneratorSpec, n_train: int, n_test: int, seed: int
) -> DataRealization:
    """Draw one train/test realization.

    Inputs are i.i.d. standard Gaussian in d dimensions; targets are
    teacher.x plus Gaussian noise of scale `noise_std`. The test set is
    fresh per realization (it stands in for the data distribution).
    Ids are unique across the realization: train 0..n_train-1, test
    n_train..n_train+n_test-1.
    """
    if n_train < 2:
        raise ValueError("n_train must be >= 2")
    if n_test < 1:
        raise ValueError("n_test must be >= 1")

    def draw(purpose: str, n: int) -> Batch:
        x = rng.stream(seed, purpose, "inputs").standard_normal((n, gen.d))
        noise = rng.stream(seed, purpose, "noise").standard_normal(n)
        targets = x @ gen.teacher + gen.noise_std * noise
        ids = np.arange(n, dtype=np.int64)
        return x, targets, ids

    x_tr, y_tr, ids_tr = draw("train", n_train)
    x_te, y_te, ids_te = draw("test", n_test)
    train = Batch(x_tr, y_tr, ids_tr)
    test = Batch(x_te, y_te, ids_te + n_train)
    return DataRealization(train=train, test=test, seed=int(seed), generator=gen)


def partition(b: Batch, k: int, seed: int) -> list[Batch]:
    """Split `b` into k equal disjoint batches after a seeded shuffle.

    k must divide |b| exactly; there is no remainder handling.
    """
    n = len(b)
    if k < 1 or n % k != 0:
        raise ValueError(f"k={k} must divide batch size {n}")
    perm = rng.stream(seed, "partition").permutation(n)
    size = n // k
    return [b.subset(perm[i * size : (i + 1) * size]) for i in range(k)]


def load_dataset(path: str) -> Batch:
    """Read a CSV dataset with header x_1,...,x_d,y into a Batch.

    Ids are assigned sequentially from 0 in row order. Ragged or
    non-numeric rows raise DatasetParseError naming the line.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(f"{path}: missing header row") from None
        d = len(header) - 1
        expected = [f"x_{i}" for i in range(1, d + 1)] + ["y"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise DatasetParseError(
                f"{path}: header must be x_1,...,x_d,y (got {','.join(header)})"
            )
        inputs, targets = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DatasetParseError(
                    f"{path}: line {lineno}: expected {d + 1} fields, got {len(row)}"
                )
            try:
                values = [float(field) for field in row]
            except ValueError:
                raise DatasetParseError(
                    f"{path}: line {lineno}: non-numeric field"
                ) from None
            inputs.append(values[:d])
            targets.append(values[d])
    if not inputs:
        raise ValueError(f"{path}: dataset is empty (batches must be nonempty)")
    return Batch(
        np.asarray(inputs, dtype=np.float64),
        np.asarray(targets, dtype=np.float64),
        np.arange(len(inputs), dtype=np.int64),
    )
