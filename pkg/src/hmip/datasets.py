"""Labeled dataset generation, the four-way split, and text persistence."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .milp import SolveConfig
from .problems import relaxation_bound, solve_master


class TooManyDiscards(RuntimeError):
    pass


class InsufficientSamples(ValueError):
    pass


@dataclass
class LabeledSample:
    theta_id: int
    theta: np.ndarray
    x_star: np.ndarray
    y_star: np.ndarray
    z: float
    l: float                  # LP-relaxation bound on z
    label_gap: float


@dataclass
class Dataset:
    family_kind: str
    seed: int
    samples: list

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_eval: int
    n_calib: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_eval, self.n_calib, self.n_test) <= 0:
            raise ValueError("split sizes must be positive")

    @property
    def total(self):
        return self.n_train + self.n_eval + self.n_calib + self.n_test


DESK_SPLIT = SplitSpec(500, 50, 50, 100)


def generate_dataset(family, total: int, seed: int,
                     solve_config: SolveConfig | None = None,
                     max_discard_frac: float = 0.05) -> Dataset:
    """Sample parameters and label each with the exact master solution and
    the relaxation bound. Instances that hit the solve limit are discarded
    (more than `max_discard_frac` discards aborts)."""
    solve_config = solve_config or SolveConfig()
    rng = np.random.default_rng(seed)
    samples = []
    discards = 0
    theta_id = 0
    while len(samples) < total:
        theta = family.sample_theta(rng)
        x, y, z, gap, status = solve_master(family, theta, solve_config)
        if status != "optimal":
            discards += 1
            if discards > max_discard_frac * total:
                raise TooManyDiscards(
                    f"{discards} labeling solves hit the limit")
            continue
        l = relaxation_bound(family, theta)
        samples.append(LabeledSample(theta_id, theta, x, y, z, l, gap))
        theta_id += 1
    return Dataset(family.kind, seed, samples)


def split_dataset(dataset: Dataset, spec: SplitSpec):
    """Deterministic shuffle, then contiguous train/eval/calib/test slices."""
    if spec.total > len(dataset):
        raise InsufficientSamples(
            f"need {spec.total} samples, have {len(dataset)}")
    order = np.random.default_rng(spec.seed).permutation(len(dataset))
    cuts = np.cumsum([spec.n_train, spec.n_eval, spec.n_calib, spec.n_test])
    parts = []
    start = 0
    for end in cuts:
        idx = order[start:end]
        parts.append(Dataset(dataset.family_kind, spec.seed,
                             [dataset.samples[i] for i in idx]))
        start = end
    return tuple(parts)


def _fmt(arr):
    return " ".join(f"{v:.17g}" for v in np.asarray(arr, dtype=float).ravel())


def dataset_to_text(dataset: Dataset) -> str:
    out = io.StringIO()
    out.write(f"family {dataset.family_kind}\n")
    out.write(f"seed {dataset.seed}\n")
    out.write(f"count {len(dataset.samples)}\n")
    for s in dataset.samples:
        out.write(f"sample {s.theta_id} {s.z:.17g} {s.l:.17g} "
                  f"{s.label_gap:.17g}\n")
        out.write("theta " + _fmt(s.theta) + "\n")
        out.write("x_star " + _fmt(s.x_star) + "\n")
        out.write("y_star " + _fmt(s.y_star) + "\n")
    return out.getvalue()


def dataset_from_text(text: str) -> Dataset:
    lines = text.splitlines()
    family_kind = lines[0].split()[1]
    seed = int(lines[1].split()[1])
    count = int(lines[2].split()[1])
    samples = []
    i = 3
    for _ in range(count):
        _, tid, z, l, gap = lines[i].split()
        theta = np.array([float(v) for v in lines[i + 1].split()[1:]])
        x = np.array([float(v) for v in lines[i + 2].split()[1:]])
        y = np.array([float(v) for v in lines[i + 3].split()[1:]])
        samples.append(LabeledSample(int(tid), theta, x, y, float(z),
                                     float(l), float(gap)))
        i += 4
    return Dataset(family_kind, seed, samples)
