"""Anomaly scores: min-Mahalanobis over mixture components, and the EGBAD baseline."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .bigan import BiGANModel
from .nn import BCE_EPS, DimensionError, binary_cross_entropy

METHOD_MAHALANOBIS = "igmm-mahalanobis"
METHOD_EGBAD = "egbad"


class GaussianComponent:
    """Mean and covariance with a cached lower Cholesky factor."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(cov, dtype=np.float64)
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise DimensionError(f"covariance must be {d}x{d}, got {self.cov.shape}")
        self.chol = np.linalg.cholesky(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.size


class MultimodalModel:
    def __init__(self, components: Sequence[GaussianComponent]):
        self.components = list(components)
        if not self.components:
            raise ValueError("multimodal model needs at least one component")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise DimensionError("components have different dimensions")

    @classmethod
    def from_igmm(cls, result) -> "MultimodalModel":
        return cls([GaussianComponent(c.mean, c.cov) for c in result.components])

    @property
    def dim(self) -> int:
        return self.components[0].dim


def mahalanobis(z, c: GaussianComponent):
    """sqrt((z-mu)^T Sigma^-1 (z-mu)) via a triangular solve; accepts (d,) or (n, d)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != c.dim:
        raise DimensionError(f"point has dimension {z.shape[-1]}, component has {c.dim}")
    single = z.ndim == 1
    u = solve_triangular(c.chol, np.atleast_2d(z - c.mean).T, lower=True, check_finite=False)
    dist = np.sqrt((u * u).sum(axis=0))
    return float(dist[0]) if single else dist


def nearest_component(z, model: MultimodalModel) -> tuple[np.ndarray, np.ndarray]:
    """(min distance, index of the nearest component) per row; ties pick the smaller index."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    dists = np.stack([mahalanobis(z, c) for c in model.components], axis=1)
    idx = np.argmin(dists, axis=1)
    return dists[np.arange(z.shape[0]), idx], idx


def min_mahalanobis_score(z, model: MultimodalModel):
    z = np.asarray(z, dtype=np.float64)
    best, _ = nearest_component(z, model)
    return float(best[0]) if z.ndim == 1 else best


def egbad_parts(x, model: BiGANModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample reconstruction norm and discriminator BCE against target 1."""
    flat = model._flat(x)
    z = model.encode(flat)
    xhat = model.generate(z, flat=True)
    recon = np.linalg.norm(flat - xhat, axis=1)
    p = model.discriminate(flat, z)
    disc = binary_cross_entropy(p, np.ones_like(p), BCE_EPS)
    return recon, np.atleast_1d(disc)


def egbad_score(x, model: BiGANModel, alpha_w: float = 0.9):
    """alpha_w * ||x - G(E(x))||_2 + (1 - alpha_w) * BCE(D(x, E(x)), 1)."""
    if not 0.0 <= alpha_w <= 1.0:
        raise ValueError("alpha_w must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == model.config.data_shape or x.shape == (model.config.data_dim,)
    recon, disc = egbad_parts(x[None] if single else x, model)
    score = alpha_w * recon + (1.0 - alpha_w) * disc
    return float(score[0]) if single else score


@dataclass
class ScoreRecord:
    sample_id: int | str
    score: float
    method: str
    seconds: float
    component: int = -1


class ScoringError(RuntimeError):
    pass


def score_dataset(samples, method: str, bigan: BiGANModel, multimodal: MultimodalModel | None = None,
                  alpha_w: float = 0.9, ids: Sequence | None = None, workers: int | None = None) -> list[ScoreRecord]:
    """Score each sample on its own, timing it with a monotonic clock.

    Mahalanobis scoring runs E then the component solves; EGBAD runs E, G and D.
    Records come back in input order.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0] if samples.size else 0
    if n == 0:
        return []
    ids = list(range(n)) if ids is None else list(ids)
    if method == METHOD_MAHALANOBIS and multimodal is None:
        raise ValueError("mahalanobis scoring needs a multimodal model")
    if method not in (METHOD_MAHALANOBIS, METHOD_EGBAD):
        raise ValueError(f"unknown scoring method {method!r}")

    def one(i: int) -> ScoreRecord:
        x = samples[i:i + 1]
        try:
            t0 = time.perf_counter()
            if method == METHOD_MAHALANOBIS:
                z = bigan.encode(x)
                dist, comp = nearest_component(z, multimodal)
                score, component = float(dist[0]), int(comp[0])
            else:
                score, component = float(egbad_score(x, bigan, alpha_w)[0]), -1
            elapsed = time.perf_counter() - t0
        except Exception as exc:
            raise ScoringError(f"sample {ids[i]}: {exc}") from exc
        return ScoreRecord(ids[i], score, method, elapsed, component)

    workers = workers or 1
    if workers == 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n)))


def batch_scores(samples, method: str, bigan: BiGANModel, multimodal: MultimodalModel | None = None,
                 alpha_w: float = 0.9) -> np.ndarray:
    """Vectorized scores without per-sample timing."""
    if method == METHOD_MAHALANOBIS:
        return nearest_component(bigan.encode(samples), multimodal)[0]
    return egbad_score(samples, bigan, alpha_w)
