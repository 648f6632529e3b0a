"""Synthetic stand-in datasets for the two tasks, plus CSV ingestion.

Patch task: an 11x11 grid holding one pseudo-Voigt peak at a random
sub-pixel center; the label is the (x, y) center.  Set task: 8-slot particle
sets whose per-class feature clouds sit at simplex-like vertices scaled by a
separation knob; the label is the class.  Generators are pure functions of
(n, seed, params).  Values are stored as float32 so CSV round-trips written
with 9 significant digits are bit-exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch_ir import PATCH_REGRESSION, SET_CLASSIFICATION
from .errors import DomainError, EmptyDataset, ParseError, SchemaError

PATCH_SIZE = 11
SET_SLOTS = 8
SET_FEATURES = 3
N_CLASSES = 5

CENTER_LOW, CENTER_HIGH = 3.0, 8.0
ETA_RANGE = (0.3, 0.7)
FWHM_RANGE = (1.5, 3.0)
AMPLITUDE_RANGE = (0.5, 1.5)

# Five well-spread unit directions in feature space: two poles plus three
# equatorial vectors at 120 degrees.
CLASS_DIRECTIONS = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0],
    [-0.5, math.sqrt(3.0) / 2.0, 0.0],
    [-0.5, -math.sqrt(3.0) / 2.0, 0.0],
])

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class PatchSample:
    patch: np.ndarray           # (11, 11) float32, nonnegative
    center: tuple[float, float]  # (x, y) pixels in [0, 11)


@dataclass(frozen=True)
class SetSample:
    particles: np.ndarray  # (8, 3) float32, zero rows are padding
    label: int
    valid_count: int


@dataclass
class Dataset:
    """Stacked arrays ready for training; x keeps the generator's float32."""

    task: str
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


def pseudo_voigt_patch(cx: float, cy: float, eta: float, fwhm: float,
                       amplitude: float = 1.0) -> np.ndarray:
    """Peak-normalized Gaussian/Lorentzian mixture on the 11x11 pixel grid."""
    ys, xs = np.mgrid[0:PATCH_SIZE, 0:PATCH_SIZE]
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    gamma = fwhm / 2.0
    gauss = np.exp(-r2 / (2.0 * sigma**2))
    lorentz = gamma**2 / (r2 + gamma**2)
    return amplitude * ((1.0 - eta) * gauss + eta * lorentz)


def gen_bragg(n: int, seed: int, noise_level: float) -> list[PatchSample]:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if noise_level < 0:
        raise DomainError(f"noise_level must be >= 0, got {noise_level}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        cx, cy = rng.uniform(CENTER_LOW, CENTER_HIGH, size=2)
        eta = rng.uniform(*ETA_RANGE)
        fwhm = rng.uniform(*FWHM_RANGE)
        amp = rng.uniform(*AMPLITUDE_RANGE)
        patch = pseudo_voigt_patch(cx, cy, eta, fwhm, amp)
        if noise_level > 0:
            patch = patch + noise_level * rng.standard_normal(patch.shape)
        patch = np.clip(patch, 0.0, None).astype(np.float32)
        samples.append(PatchSample(patch, (float(cx), float(cy))))
    return samples


def gen_jets(n: int, seed: int, separation: float) -> list[SetSample]:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if separation < 0:
        raise DomainError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)
    means = CLASS_DIRECTIONS * separation
    samples = []
    for _ in range(n):
        label = int(rng.integers(N_CLASSES))
        valid = int(rng.integers(4, SET_SLOTS + 1))
        particles = np.zeros((SET_SLOTS, SET_FEATURES))
        particles[:valid] = means[label] + rng.standard_normal((valid, SET_FEATURES))
        particles = particles[rng.permutation(SET_SLOTS)]
        samples.append(SetSample(particles.astype(np.float32), label, valid))
    return samples


def patches_to_dataset(samples: list[PatchSample]) -> Dataset:
    x = np.stack([s.patch for s in samples])[:, None, :, :]
    y = np.array([s.center for s in samples], dtype=np.float64)
    return Dataset(PATCH_REGRESSION, x, y)


def sets_to_dataset(samples: list[SetSample]) -> Dataset:
    x = np.stack([s.particles for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return Dataset(SET_CLASSIFICATION, x, y)


def split_dataset(ds: Dataset, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic disjoint 0.8/0.1/0.1 split."""
    if len(ds) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(SPLIT_FRACTIONS[0] * len(ds))
    n_val = int(SPLIT_FRACTIONS[1] * len(ds))
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(Dataset(ds.task, ds.x[idx], ds.y[idx]) for idx in parts)


@dataclass
class Standardization:
    """Per-feature affine computed on the train split.

    For sets the statistics come from valid (non-zero) particle rows only,
    and padding rows stay exactly zero after the transform so pooled
    embeddings are not polluted by slot count.
    """

    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {"mean": self.mean.ravel().tolist(), "std": self.std.ravel().tolist()}


def fit_standardization(train: Dataset) -> Standardization:
    if train.task == PATCH_REGRESSION:
        mean = train.x.mean(axis=0)
        std = np.maximum(train.x.std(axis=0), 1e-8)
        return Standardization(mean, std)
    rows = train.x.reshape(-1, SET_FEATURES)
    valid = ~np.all(rows == 0.0, axis=1)
    mean = rows[valid].mean(axis=0)
    std = np.maximum(rows[valid].std(axis=0), 1e-8)
    return Standardization(mean, std)


def apply_standardization(ds: Dataset, stats: Standardization) -> Dataset:
    if ds.task == PATCH_REGRESSION:
        x = ((ds.x - stats.mean) / stats.std).astype(np.float32)
        return Dataset(ds.task, x, ds.y)
    x = (ds.x - stats.mean) / stats.std
    padding = np.all(ds.x == 0.0, axis=2)
    x[padding] = 0.0
    return Dataset(ds.task, x.astype(np.float32), ds.y)


# --------------------------------------------------------------------------
# CSV schemas: patches = 121 intensity columns + cx + cy;
#              sets    = 24 feature columns + label + valid_count.
# --------------------------------------------------------------------------

PATCH_HEADER = [f"p{i:03d}" for i in range(PATCH_SIZE * PATCH_SIZE)] + ["cx", "cy"]
SET_HEADER = [f"f{i:02d}" for i in range(SET_SLOTS * SET_FEATURES)] + ["label", "valid_count"]


def _fmt(value: float) -> str:
    return f"{float(value):.9g}"


def save_patches(path: str | Path, samples: list[PatchSample]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATCH_HEADER)
        for s in samples:
            row = [_fmt(v) for v in s.patch.ravel()] + [_fmt(s.center[0]), _fmt(s.center[1])]
            writer.writerow(row)


def load_patches(path: str | Path) -> list[PatchSample]:
    rows = _read_csv(path, PATCH_HEADER)
    samples = []
    for lineno, row in rows:
        values = _parse_floats(lineno, row)
        patch = np.array(values[:-2], dtype=np.float32).reshape(PATCH_SIZE, PATCH_SIZE)
        cx, cy = values[-2], values[-1]
        if not (0.0 <= cx < PATCH_SIZE and 0.0 <= cy < PATCH_SIZE):
            raise ParseError(lineno, f"center ({cx}, {cy}) outside the patch")
        samples.append(PatchSample(patch, (cx, cy)))
    return samples


def save_sets(path: str | Path, samples: list[SetSample]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SET_HEADER)
        for s in samples:
            row = [_fmt(v) for v in s.particles.ravel()]
            row += [str(int(s.label)), str(int(s.valid_count))]
            writer.writerow(row)


def load_sets(path: str | Path) -> list[SetSample]:
    rows = _read_csv(path, SET_HEADER)
    samples = []
    for lineno, row in rows:
        values = _parse_floats(lineno, row[:-2])
        try:
            label, valid = int(row[-2]), int(row[-1])
        except ValueError as err:
            raise ParseError(lineno, f"bad label/valid_count: {err}") from None
        if not 0 <= label < N_CLASSES:
            raise ParseError(lineno, f"label {label} outside 0..{N_CLASSES - 1}")
        if not 0 <= valid <= SET_SLOTS:
            raise ParseError(lineno, f"valid_count {valid} outside 0..{SET_SLOTS}")
        particles = np.array(values, dtype=np.float32).reshape(SET_SLOTS, SET_FEATURES)
        samples.append(SetSample(particles, label, valid))
    return samples


def _read_csv(path: str | Path, header: list[str]) -> list[tuple[int, list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: empty file")
    if rows[0] != header:
        raise SchemaError(
            f"{path}: header mismatch, expected {len(header)} named columns")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(lineno, f"expected {len(header)} columns, got {len(row)}")
        out.append((lineno, row))
    return out


def _parse_floats(lineno: int, row: list[str]) -> list[float]:
    try:
        values = [float(v) for v in row]
    except ValueError as err:
        raise ParseError(lineno, str(err)) from None
    if not all(math.isfinite(v) for v in values):
        raise ParseError(lineno, "non-finite value")
    return values


def manifest(kind: str, n: int, seed: int, params: dict,
             stats: Standardization | None = None) -> dict:
    out = {"kind": kind, "n": n, "seed": seed, "params": params}
    if stats is not None:
        out["standardization"] = stats.to_json()
    return out
