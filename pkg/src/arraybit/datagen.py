"""Deterministic synthetic arrays: a sum of randomly placed Gaussian bumps
over the cell grid, with a sparsity threshold that empties faint cells."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunkstore import ArraySchema, ChunkStore, write_raw
from .errors import InputError

_PD_RETRIES = 8


@dataclass(frozen=True)
class SumGaussSpec:
    """Parameters of the generated field; same spec + seed is bit-identical."""

    shape: tuple
    gaussians: int
    seed: int
    threshold: float = 1e-4
    cov_min: float = 0.5
    cov_max: float | None = None  # default: max(shape) / 4

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(e) for e in self.shape))
        if self.gaussians < 1:
            raise InputError("need at least one gaussian")
        if any(e < 1 for e in self.shape):
            raise InputError("extents must be >= 1")

    @property
    def ndim(self) -> int:
        return len(self.shape)


def gaussian_params(spec: SumGaussSpec) -> tuple:
    """Sample means and bounded symmetric positive definite covariances."""
    rng = np.random.default_rng(spec.seed)
    d = spec.ndim
    hi = spec.cov_max if spec.cov_max is not None else max(spec.shape) / 4.0
    lo = min(spec.cov_min, hi)
    mus = np.empty((spec.gaussians, d))
    sigmas = np.empty((spec.gaussians, d, d))
    for i in range(spec.gaussians):
        mus[i] = rng.uniform(0, np.array(spec.shape) - 1)
        for _ in range(_PD_RETRIES):
            a = rng.uniform(-1.0, 1.0, size=(d, d))
            sigma = a @ a.T + 0.1 * np.eye(d)
            evals, evecs = np.linalg.eigh(sigma)
            evals = np.clip(evals, lo, hi)
            sigma = (evecs * evals) @ evecs.T
            sigma = (sigma + sigma.T) / 2.0
            if np.linalg.det(sigma) > 0 and (np.linalg.eigvalsh(sigma) > 0).all():
                break
        else:
            raise InputError("could not sample a positive definite covariance")
        sigmas[i] = sigma
    return mus, sigmas


def field_values(mus: np.ndarray, sigmas: np.ndarray, shape: tuple) -> np.ndarray:
    """Evaluate the density sum on the whole grid.

    The quadratic form is expanded over broadcast per-axis offsets, so peak
    memory stays at a few grid-sized arrays even in five dimensions.
    """
    d = len(shape)
    out = np.zeros(shape)
    axes = [
        np.arange(shape[k]).reshape([-1 if j == k else 1 for j in range(d)])
        for k in range(d)
    ]
    for mu, sigma in zip(mus, sigmas):
        inv = np.linalg.inv(sigma)
        norm = (2.0 * np.pi) ** (-d / 2.0) * np.linalg.det(sigma) ** -0.5
        q = np.zeros(shape)
        diffs = [axes[k] - mu[k] for k in range(d)]
        for j in range(d):
            q = q + inv[j, j] * diffs[j] * diffs[j]
            for k in range(j + 1, d):
                q = q + 2.0 * inv[j, k] * diffs[j] * diffs[k]
        out += norm * np.exp(-q / 2.0)
    return out


def generate_dense(spec: SumGaussSpec) -> np.ndarray:
    """The field with sub-threshold cells emptied to NaN."""
    mus, sigmas = gaussian_params(spec)
    vals = field_values(mus, sigmas, spec.shape)
    if spec.threshold > 0:
        vals[vals < spec.threshold] = np.nan
    return vals


def generate_store(spec: SumGaussSpec, chunk_shape) -> ChunkStore:
    """Generate and chunk in one step; all-empty tiles are dropped."""
    schema = ArraySchema(
        tuple((f"d{i}", e) for i, e in enumerate(spec.shape)),
        (("a", "float64"),),
        tuple(chunk_shape),
    )
    return ChunkStore.from_dense(schema, {"a": generate_dense(spec)})


def generate(spec: SumGaussSpec, header_path, chunk_shape=None) -> None:
    """Write the generated array in the raw ingestion format."""
    chunk_shape = tuple(chunk_shape) if chunk_shape else tuple(
        min(64, e) for e in spec.shape
    )
    schema = ArraySchema(
        tuple((f"d{i}", e) for i, e in enumerate(spec.shape)),
        (("a", "float64"),),
        chunk_shape,
    )
    write_raw(header_path, schema, {"a": generate_dense(spec)})
