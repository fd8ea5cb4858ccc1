"""Flatten sequences, reduce with PCA, and embed with exact t-SNE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from ..seqvol import VolumeSequence

log = logging.getLogger(__name__)

_MACHINE_EPS = np.finfo(np.float64).eps


def flatten_for_projection(dataset: Sequence[VolumeSequence]) -> np.ndarray:
    """One row per sequence in ``.vseq`` payload order (T-major, W fastest)."""
    if not dataset:
        raise ValidationError("dataset is empty")
    dims = {s.dims for s in dataset}
    if len(dims) != 1:
        raise ValidationError(f"cannot stack sequences with different dims: {sorted(dims)}")
    return np.stack([s.data.reshape(-1) for s in dataset])


def pca_reduce(X, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project mean-centered rows onto the top-``k`` principal axes.

    Returns ``(scores, explained_variance_ratio, components)``. ``k`` is capped
    at ``min(n - 1, p)``. Each component is sign-flipped so its
    largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if n < 2:
        raise ValidationError("PCA needs at least 2 rows")
    cap = min(n - 1, p)
    if k > cap:
        log.warning("PCA: requested %d components, using %d (n=%d, p=%d)", k, cap, n, p)
        k = cap
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:k]
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    flip[flip == 0] = 1.0
    comps = comps * flip[:, None]
    var = s**2
    total = var.sum()
    ratios = var[:k] / total if total > 0 else np.zeros(k)
    return Xc @ comps.T, ratios, comps


def _sq_distances(Y):
    sq = np.sum(Y * Y, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * Y @ Y.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def conditional_affinities(D, perplexity: float, tol: float = 1e-5, max_steps: int = 200):
    """Row-wise Gaussian affinities whose entropy (nats) matches
    ``log(perplexity)``; returns ``(P, betas, entropies)``."""
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    entropies = np.zeros(n)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_steps):
            w = np.exp(-d * beta)
            sw = w.sum()
            H = np.log(sw) + beta * np.dot(d, w) / sw
            if abs(H - target) <= tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        P[i, np.arange(n) != i] = w / sw
        betas[i] = beta
        entropies[i] = H
    return P, betas, entropies


def tsne_gradient(P, Y):
    """KL(P||Q) and its gradient for a Student-t embedding ``Y``."""
    num = 1.0 / (1.0 + _sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    W = (P - Q) * num
    grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
    kl = float(np.sum(P * np.log(np.maximum(P, 1e-12) / Q)))
    return kl, grad


@dataclass
class TSNEResult:
    embedding: np.ndarray
    kl_divergence: float
    params: dict = field(default_factory=dict)


def tsne_embed(
    Y,
    out_dim: int = 3,
    perplexity: float = 30.0,
    seed: int = 0,
    n_iter: int = 1000,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    learning_rate: float = 200.0,
    momentum: tuple[float, float] = (0.5, 0.8),
    init=None,
) -> TSNEResult:
    """Exact t-SNE with early exaggeration, momentum switch and adaptive gains."""
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    if perplexity <= 0 or n <= 3 * perplexity:
        raise ValidationError(f"perplexity {perplexity} infeasible for {n} points (need n > 3 * perplexity)")
    Pc, _, _ = conditional_affinities(_sq_distances(Y), perplexity)
    P = np.maximum((Pc + Pc.T) / (2.0 * n), 1e-12)
    np.fill_diagonal(P, 0.0)

    if init is None:
        emb = np.random.default_rng(seed).standard_normal((n, out_dim)) * 1e-4
    else:
        emb = np.array(init, dtype=np.float64)
    update = np.zeros_like(emb)
    gains = np.ones_like(emb)
    kl = float("nan")
    for it in range(n_iter):
        early = it < exaggeration_iters
        mom = momentum[0] if early else momentum[1]
        kl, grad = tsne_gradient(P * exaggeration if early else P, emb)
        same_sign = (grad > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = mom * update - learning_rate * gains * grad
        emb = emb + update
        emb = emb - emb.mean(axis=0)
    params = dict(
        perplexity=perplexity,
        n_iter=n_iter,
        exaggeration=exaggeration,
        exaggeration_iters=exaggeration_iters,
        learning_rate=learning_rate,
        momentum=list(momentum),
        seed=seed,
    )
    return TSNEResult(emb, kl, params)


@dataclass
class ProjectionResult:
    ids: list[str]
    sources: list[str]
    coords: np.ndarray
    explained_variance_ratio: np.ndarray
    tsne_params: dict


def project_sequences(
    real: Sequence[VolumeSequence],
    synthetic: Sequence[VolumeSequence] = (),
    pca_dims: int = 100,
    perplexity: float = 30.0,
    n_iter: int = 1000,
    seed: int = 0,
) -> ProjectionResult:
    """PCA to ``pca_dims`` and t-SNE to 3D for real and synthetic sequences together."""
    seqs = list(real) + list(synthetic)
    X = flatten_for_projection(seqs)
    scores, ratios, _ = pca_reduce(X, pca_dims)
    res = tsne_embed(scores, 3, perplexity, seed, n_iter)
    sources = ["real"] * len(real) + ["synthetic"] * len(synthetic)
    return ProjectionResult([s.subject_id for s in seqs], sources, res.embedding, ratios, res.params)
