"""Modality-invariant branch: spectral filtering on the interaction graph.

A conversation of N utterances becomes a 3N-node graph: one node per
(modality, utterance) pair, laid out in t, a, v blocks. Within a modality,
utterances within a sliding window are connected (including self loops);
across modalities, the three copies of an utterance are connected. The
normalized Laplacian's eigenbasis defines exponential low/high-pass
filters. The graph depends only on (N, window), never on parameters, so
decompositions are cached and stay off the differentiation tape.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .linalg import symmetric_eig

__all__ = [
    "SharedGraph",
    "FrequencyViews",
    "GraphCache",
    "build_shared_graph",
    "normalize_and_decompose",
    "lowpass_response",
    "highpass_response",
    "spectral_filter",
    "shared_fuse",
    "info_nce",
]

EIGENVALUE_CLAMP_TOL = 1e-9


@dataclass
class SharedGraph:
    n_nodes: int
    adjacency: np.ndarray
    normalized: np.ndarray
    laplacian: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray


@dataclass
class FrequencyViews:
    x_low: Tensor
    x_high: Tensor
    tau_low: float
    tau_high: float


def build_shared_graph(n_utt, window):
    """Binary 3N x 3N adjacency: windowed intra-modal + same-utterance cross-modal."""
    if n_utt < 1 or window < 1:
        raise ValueError(f"need n_utt >= 1 and window >= 1, got ({n_utt}, {window})")
    n = 3 * n_utt
    a = np.zeros((n, n))
    idx = np.arange(n_utt)
    intra = (np.abs(idx[:, None] - idx[None, :]) < window).astype(float)
    for m in range(3):
        for mp in range(3):
            block = intra if m == mp else np.eye(n_utt)
            a[m * n_utt : (m + 1) * n_utt, mp * n_utt : (mp + 1) * n_utt] = block
    return a


def normalize_and_decompose(adjacency, *, size_cap=1500):
    """Symmetric normalization, Laplacian, and its eigendecomposition.

    Eigenvalues are clamped into [0, 2] when they stray by at most 1e-9;
    anything further out is a genuine error and is left visible.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    degrees = a.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(degrees)
    normalized = a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    laplacian = np.eye(a.shape[0]) - normalized
    eigvecs, eigvals = symmetric_eig(laplacian, size_cap=size_cap)
    clamped = eigvals.copy()
    low = (clamped < 0.0) & (clamped >= -EIGENVALUE_CLAMP_TOL)
    high = (clamped > 2.0) & (clamped <= 2.0 + EIGENVALUE_CLAMP_TOL)
    clamped[low] = 0.0
    clamped[high] = 2.0
    return SharedGraph(
        n_nodes=a.shape[0],
        adjacency=a,
        normalized=normalized,
        laplacian=laplacian,
        eigvecs=eigvecs,
        eigvals=clamped,
    )


def lowpass_response(lam, tau):
    """g_l(lambda) = exp(-tau * lambda); g_l(0) = 1 exactly."""
    return np.exp(-tau * np.asarray(lam, dtype=np.float64))


def highpass_response(lam, tau):
    """g_h(lambda) = 1 - exp(-tau * lambda); g_h(0) = 0 exactly."""
    return 1.0 - np.exp(-tau * np.asarray(lam, dtype=np.float64))


def spectral_filter(graph, x, tau_low, tau_high):
    """Low- and high-frequency views of node features x (3N, d).

    The filter matrices U g(Lambda) U^T are constants; the op is linear and
    differentiable in x only.
    """
    if tau_low <= 0 or tau_high <= 0:
        raise ValueError("tau_low and tau_high must be > 0")
    u = graph.eigvecs
    f_low = u @ np.diag(lowpass_response(graph.eigvals, tau_low)) @ u.T
    f_high = u @ np.diag(highpass_response(graph.eigvals, tau_high)) @ u.T
    x_low = ad.matmul(ad.constant(f_low), x)
    x_high = ad.matmul(ad.constant(f_high), x)
    return FrequencyViews(x_low=x_low, x_high=x_high, tau_low=tau_low, tau_high=tau_high)


def _modality_blocks(x, n_utt):
    return [ad.slice2d(x, m * n_utt, (m + 1) * n_utt, 0, x.shape[1]) for m in range(3)]


def shared_fuse(views, n_utt, weight, bias):
    """Per utterance, linear map of the six concatenated frequency blocks."""
    low_blocks = _modality_blocks(views.x_low, n_utt)
    high_blocks = _modality_blocks(views.x_high, n_utt)
    stacked = ad.concat(low_blocks + high_blocks)
    return ad.add(ad.matmul(stacked, ad.transpose(weight)), bias)


def _project_normalize(x, weight, bias):
    z = ad.add(ad.matmul(x, ad.transpose(weight)), bias)
    norms = ad.sqrt(ad.clamp_min(ad.row_sum(ad.mul(z, z)), ad.COSINE_EPS**2))
    return ad.div(z, norms)


def info_nce(x_low, x_high, w_low, b_low, w_high, b_high, temperature):
    """Bidirectional InfoNCE between projected low/high views of the same nodes.

    Batch = all rows; positives are matching row indices, negatives the
    rest of the batch. Similarity is cosine (rows are normalized before the
    dot-product matrix).
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    b = x_low.shape[0]
    z_low = _project_normalize(x_low, w_low, b_low)
    z_high = _project_normalize(x_high, w_high, b_high)
    sim = ad.scale(ad.matmul(z_low, ad.transpose(z_high)), 1.0 / temperature)
    eye = ad.constant(np.eye(b))

    def direction(s):
        log_probs = ad.log(ad.softmax_rows(s))
        return ad.scale(ad.total_sum(ad.mul(log_probs, eye)), -1.0 / b)

    return ad.add(direction(sim), direction(ad.transpose(sim)))


class GraphCache:
    """Decompositions keyed by (n_utt, window); concurrent reads, locked insert."""

    def __init__(self, size_cap=1500):
        self._size_cap = size_cap
        self._cache = {}
        self._lock = threading.Lock()

    def get(self, n_utt, window):
        key = (n_utt, window)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        graph = normalize_and_decompose(build_shared_graph(n_utt, window), size_cap=self._size_cap)
        with self._lock:
            return self._cache.setdefault(key, graph)
