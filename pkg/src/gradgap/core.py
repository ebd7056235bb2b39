"""Shared domain types and the batch-overlap arithmetic behind the
covariance scaling law.

Parameter vectors are flat 1-D float64 arrays. Batches carry explicit
64-bit example ids so that set overlap between two batches is well
defined even if two sampled inputs happen to collide numerically, and
they are ordered so that batch averages are evaluated in a fixed order
(bit-reproducible sums). All types are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

ParamVector = np.ndarray


def as_param_vector(values, name: str = "parameter vector") -> np.ndarray:
    """Coerce to a finite, contiguous 1-D float64 array of length >= 1."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a 1-D sequence of length >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Example:
    """One data point: a real input vector and a scalar target."""

    input: np.ndarray
    target: float

    def __post_init__(self):
        object.__setattr__(self, "input", _frozen(as_param_vector(self.input, "input")))
        object.__setattr__(self, "target", float(self.target))
        if not np.isfinite(self.target):
            raise ValueError("target must be finite")


@dataclass(frozen=True)
class Batch:
    """An ordered collection of examples with unique 64-bit ids.

    Stored columnar (inputs as an (n, d) matrix) so batch-level kernels
    can run without per-example Python overhead.
    """

    inputs: np.ndarray
    targets: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] < 1 or inputs.shape[1] < 1:
            raise ValueError("batch inputs must be a nonempty (n, d) matrix")
        n = inputs.shape[0]
        if targets.shape != (n,) or ids.shape != (n,):
            raise ValueError("batch inputs, targets and ids must have matching length")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("batch has non-finite entries")
        if np.unique(ids).size != n:
            raise ValueError("batch ids must be unique")
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "targets", _frozen(targets))
        object.__setattr__(self, "ids", _frozen(ids))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def id_set(self) -> frozenset:
        return frozenset(int(i) for i in self.ids)

    def example(self, i: int) -> Example:
        return Example(input=self.inputs[i], target=float(self.targets[i]))

    def __iter__(self) -> Iterator[Example]:
        return (self.example(i) for i in range(len(self)))

    def subset(self, indices) -> "Batch":
        idx = np.asarray(indices, dtype=np.intp)
        return Batch(self.inputs[idx], self.targets[idx], self.ids[idx])

    @staticmethod
    def from_examples(examples: Sequence[Example], ids: Sequence[int]) -> "Batch":
        inputs = np.stack([ex.input for ex in examples])
        targets = np.array([ex.target for ex in examples])
        return Batch(inputs, targets, np.asarray(ids, dtype=np.int64))


def concat_batches(batches: Sequence[Batch]) -> Batch:
    """Concatenate batches in order; ids must stay globally unique."""
    if not batches:
        raise ValueError("need at least one batch")
    return Batch(
        np.concatenate([b.inputs for b in batches]),
        np.concatenate([b.targets for b in batches]),
        np.concatenate([b.ids for b in batches]),
    )


@dataclass(frozen=True)
class GeneratorSpec:
    """Teacher-student data generator: x ~ N(0, I_d), y = teacher.x + noise_std * xi."""

    d: int
    teacher: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("input dimension d must be >= 1")
        teacher = as_param_vector(self.teacher, "teacher")
        if teacher.size != self.d:
            raise ValueError(f"teacher length {teacher.size} != d={self.d}")
        object.__setattr__(self, "teacher", _frozen(teacher))
        object.__setattr__(self, "noise_std", float(self.noise_std))
        if not (np.isfinite(self.noise_std) and self.noise_std >= 0):
            raise ValueError("noise_std must be finite and >= 0")

    @staticmethod
    def basis_teacher(d: int, noise_std: float = 0.0) -> "GeneratorSpec":
        """Default teacher: the first basis vector."""
        teacher = np.zeros(d)
        teacher[0] = 1.0
        return GeneratorSpec(d=d, teacher=teacher, noise_std=noise_std)


@dataclass(frozen=True)
class DataRealization:
    """One sampled train/test split plus the seed that produced it."""

    train: Batch
    test: Batch
    seed: int
    generator: GeneratorSpec

    def __post_init__(self):
        if self.train.id_set & self.test.id_set:
            raise ValueError("train and test id sets must be disjoint")


def overlap_factor(a: Batch, b: Batch) -> float:
    """|A intersect B| / (|A| * |B|), computed on id sets.

    This is the factor by which the single-example gradient covariance
    scales into the cross-covariance of the two batch-gradient
    estimators. Always in [0, 1]; equals 1/|A| when the batches
    coincide.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("overlap_factor requires nonempty batches")
    shared = len(a.id_set & b.id_set)
    return shared / (len(a) * len(b))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment run needs, resolved and validated.

    `theta0` is the fixed parameter point at which ensemble statistics
    are evaluated; when omitted it defaults to teacher + e1 for the
    linear model and to the model's seeded initialization otherwise.
    """

    model: "object"  # models.ModelSpec; typed loosely to avoid an import cycle
    generator: GeneratorSpec
    learning_rate: float
    train_size: int
    test_size: int
    batch_size: int
    ensemble_size: int
    seed: int
    out_dir: str = "out"
    steps: int = 10
    theta0: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.train_size < 2:
            raise ValueError("train_size must be >= 2")
        if self.test_size < 1:
            raise ValueError("test_size must be >= 1")
        if self.batch_size < 1 or self.train_size % self.batch_size != 0:
            raise ValueError("batch_size must divide train_size")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", _frozen(as_param_vector(self.theta0, "theta0")))

    def initial_params(self) -> np.ndarray:
        from . import models  # local import: models depends on core

        if self.theta0 is not None:
            if self.theta0.size != self.model.param_count:
                raise ValueError(
                    f"theta0 length {self.theta0.size} != model parameter count "
                    f"{self.model.param_count}"
                )
            return np.array(self.theta0)
        if self.model.kind == models.LINEAR_QUADRATIC:
            theta = np.array(self.generator.teacher)
            theta[0] += 1.0
            return theta
        return self.model.init_params()

    _FIELD_NAMES = (
        "model",
        "generator",
        "learning_rate",
        "train_size",
        "test_size",
        "batch_size",
        "ensemble_size",
        "seed",
        "out_dir",
        "steps",
        "theta0",
    )

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        """Build a config from a parsed JSON document.

        Unknown keys (at any level) are an error: silent defaulting
        would corrupt verification claims.
        """
        from . import models

        if not isinstance(doc, dict):
            raise ValueError("config document must be a JSON object")
        unknown = set(doc) - set(ExperimentConfig._FIELD_NAMES)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("model", "generator", "learning_rate", "train_size", "seed"):
            if key not in doc:
                raise ValueError(f"config is missing required key {key!r}")

        model_doc = dict(doc["model"])
        unknown = set(model_doc) - {"kind", "d", "hidden", "seed"}
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        model = models.ModelSpec(
            kind=model_doc.get("kind", models.LINEAR_QUADRATIC),
            d=int(model_doc["d"]),
            hidden=model_doc.get("hidden"),
            seed=int(model_doc.get("seed", 0)),
        )

        gen_doc = dict(doc["generator"])
        unknown = set(gen_doc) - {"d", "teacher", "noise_std"}
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        d = int(gen_doc["d"])
        if "teacher" in gen_doc:
            generator = GeneratorSpec(
                d=d,
                teacher=np.asarray(gen_doc["teacher"], dtype=np.float64),
                noise_std=float(gen_doc.get("noise_std", 0.0)),
            )
        else:
            generator = GeneratorSpec.basis_teacher(d, float(gen_doc.get("noise_std", 0.0)))

        train_size = int(doc["train_size"])
        theta0 = doc.get("theta0")
        return ExperimentConfig(
            model=model,
            generator=generator,
            learning_rate=float(doc["learning_rate"]),
            train_size=train_size,
            test_size=int(doc.get("test_size", train_size)),
            batch_size=int(doc.get("batch_size", max(train_size // 2, 1))),
            ensemble_size=int(doc.get("ensemble_size", 1000)),
            seed=int(doc["seed"]),
            out_dir=str(doc.get("out_dir", "out")),
            steps=int(doc.get("steps", 10)),
            theta0=None if theta0 is None else np.asarray(theta0, dtype=np.float64),
        )

    def to_dict(self) -> dict:
        """Round-trippable plain-JSON form (embedded in every report)."""
        model = {"kind": self.model.kind, "d": self.model.d, "seed": self.model.seed}
        if self.model.hidden is not None:
            model["hidden"] = self.model.hidden
        return {
            "model": model,
            "generator": {
                "d": self.generator.d,
                "teacher": [float(v) for v in self.generator.teacher],
                "noise_std": self.generator.noise_std,
            },
            "learning_rate": self.learning_rate,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "batch_size": self.batch_size,
            "ensemble_size": self.ensemble_size,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "steps": self.steps,
            "theta0": None if self.theta0 is None else [float(v) for v in self.theta0],
        }
