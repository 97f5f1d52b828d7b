"""Modality-specific branch: speaker-aware dual hypergraph filtering.

Speaker embeddings are injected into the private codes, a speaker-aware
graph is built per modality block (intra-speaker edges within a window,
cross-speaker edges between nearby turns), and its dual hypergraph is
filtered with a Jacobi-polynomial bank fused by attention. Each original
edge becomes a dual vertex; each original node becomes a hyperedge over
its incident edges' duals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .disentangle import MODALITIES, mlp_apply
from .linalg import symmetric_eig

__all__ = [
    "DualHypergraph",
    "inject_speaker",
    "build_speaker_graph",
    "dual_transform",
    "hypergraph_laplacian",
    "largest_laplacian_eigenvalue",
    "rescale_laplacian",
    "jacobi_recurrence_coefficients",
    "jacobi_poly_scalar",
    "jacobi_matrix_polys",
    "jacobi_filter_bank",
    "attention_fuse",
    "project_back",
    "private_fuse",
    "loss_cons",
    "loss_rec_prt",
    "loss_prt",
]

logger = logging.getLogger(__name__)

PSD_TOL = 1e-9


def inject_speaker(x_prt_nodes, speakers, w_spk):
    """Add the speaker embedding to every modality copy of each utterance.

    x_prt_nodes is the (3N, d) private stack; w_spk maps one-hot speaker
    ids (K) to embeddings (d).
    """
    speakers = np.asarray(speakers, dtype=int)
    k = w_spk.shape[1]
    if speakers.min() < 0 or speakers.max() >= k:
        raise ValueError(f"speaker id out of range [0, {k})")
    onehot = np.zeros((speakers.size, k))
    onehot[np.arange(speakers.size), speakers] = 1.0
    emb = ad.matmul(ad.constant(onehot), ad.transpose(w_spk))
    tiled = ad.concat_rows([emb, emb, emb])
    return ad.add(x_prt_nodes, tiled)


def build_speaker_graph(speakers, w_same, w_cross):
    """Edge list over 3N nodes; per-modality intra-speaker and cross-speaker edges.

    For i < j within one modality block: an edge when the speakers match and
    j - i <= w_same, or when they differ and j - i <= w_cross. No self
    loops; N = 1 yields no edges (callers bypass the hypergraph then).
    """
    speakers = np.asarray(speakers, dtype=int)
    n = speakers.size
    edges = []
    reach = max(w_same, w_cross)
    for m in range(3):
        base = m * n
        for i in range(n):
            for j in range(i + 1, min(i + reach + 1, n)):
                gap = j - i
                if speakers[i] == speakers[j]:
                    if gap <= w_same:
                        edges.append((base + i, base + j))
                elif gap <= w_cross:
                    edges.append((base + i, base + j))
    return edges


@dataclass
class DualHypergraph:
    """Dual of a speaker graph: M dual vertices (edges) x 3N hyperedges (nodes)."""

    edges: list
    n_nodes: int
    incidence: np.ndarray  # (M, 3N) binary
    x_star: Tensor  # (M, d) dual-vertex features
    edge_weights: np.ndarray  # diagonal of W_e*, one weight per hyperedge (node)
    vertex_degrees: np.ndarray  # diagonal of D_v*, per dual vertex
    node_degrees: np.ndarray  # diagonal of D_e*, per original node

    @property
    def n_dual_vertices(self):
        return len(self.edges)


def dual_transform(edges, x_tilde, n_nodes):
    """Dual hypergraph of an edge list; dual features average edge endpoints."""
    m = len(edges)
    if m < 1:
        raise ValueError("dual_transform requires at least one edge")
    incidence = np.zeros((m, n_nodes))
    avg = np.zeros((m, n_nodes))
    for e, (p, q) in enumerate(edges):
        incidence[e, p] = 1.0
        incidence[e, q] = 1.0
        avg[e, p] = 0.5
        avg[e, q] = 0.5
    x_star = ad.matmul(ad.constant(avg), x_tilde)
    edge_weights = np.ones(n_nodes)
    vertex_degrees = incidence @ edge_weights
    node_degrees = incidence.sum(axis=0)
    return DualHypergraph(
        edges=list(edges),
        n_nodes=n_nodes,
        incidence=incidence,
        x_star=x_star,
        edge_weights=edge_weights,
        vertex_degrees=vertex_degrees,
        node_degrees=node_degrees,
    )


def hypergraph_laplacian(hg):
    """Normalized hypergraph Laplacian over dual vertices, (M, M) symmetric PSD.

    Columns of zero-degree original nodes are dropped first; a zero dual
    degree after the drop means a malformed graph.
    """
    keep = hg.node_degrees > 0
    h = hg.incidence[:, keep]
    w = hg.edge_weights[keep]
    d_e = hg.node_degrees[keep]
    d_v = hg.vertex_degrees
    if np.any(d_v <= 0):
        raise ValueError("zero-degree dual vertex: malformed hypergraph")
    d_v_inv_sqrt = 1.0 / np.sqrt(d_v)
    core = (h * w / d_e) @ h.T
    lap = np.eye(hg.n_dual_vertices) - d_v_inv_sqrt[:, None] * core * d_v_inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def largest_laplacian_eigenvalue(l_star, *, size_cap=1500):
    """lambda_max of L*; the bound 2 past the eig cap, 1.0 when degenerate."""
    m = l_star.shape[0]
    if m > size_cap:
        return 2.0
    _, lam = symmetric_eig(l_star, size_cap=size_cap)
    lam_max = float(lam[-1])
    if lam_max <= PSD_TOL:
        # routine for single-edge blocks (e.g. two-utterance conversations)
        logger.debug("degenerate hypergraph Laplacian (lambda_max <= 0); falling back to 1.0")
        return 1.0
    return lam_max


def rescale_laplacian(l_star, lam_max):
    """Affine map of the spectrum into [-1, 1] for Jacobi filtering."""
    m = l_star.shape[0]
    return (2.0 / lam_max) * l_star - np.eye(m)


def jacobi_recurrence_coefficients(r, alpha, beta):
    """(c_x, c_1, c_prev) with P_r = (c_x*x + c_1)*P_{r-1} - c_prev*P_{r-2}."""
    if r < 2:
        raise ValueError("recurrence coefficients defined for r >= 2")
    s = alpha + beta
    a1 = 2.0 * r * (r + s) * (2.0 * r + s - 2.0)
    a2 = (2.0 * r + s - 1.0) * (alpha * alpha - beta * beta)
    a3 = (2.0 * r + s - 1.0) * (2.0 * r + s) * (2.0 * r + s - 2.0)
    a4 = 2.0 * (r + alpha - 1.0) * (r + beta - 1.0) * (2.0 * r + s)
    return a3 / a1, a2 / a1, a4 / a1


def jacobi_poly_scalar(r, alpha, beta, x):
    """P_r^(alpha, beta)(x) by the three-term recurrence (scalar path)."""
    p_prev = 1.0
    if r == 0:
        return p_prev
    p = 0.5 * ((alpha - beta) + (alpha + beta + 2.0) * x)
    for k in range(2, r + 1):
        c_x, c_1, c_prev = jacobi_recurrence_coefficients(k, alpha, beta)
        p, p_prev = (c_x * x + c_1) * p - c_prev * p_prev, p
    return p


def jacobi_matrix_polys(l_tilde, x_star, order, alpha, beta):
    """[P_r(l_tilde) @ x_star for r in 0..order] via repeated mat-vec products."""
    lt = ad.constant(np.asarray(l_tilde, dtype=np.float64))
    polys = [x_star]
    if order >= 1:
        first = ad.add(
            ad.scale(x_star, 0.5 * (alpha - beta)),
            ad.scale(ad.matmul(lt, x_star), 0.5 * (alpha + beta + 2.0)),
        )
        polys.append(first)
    for r in range(2, order + 1):
        c_x, c_1, c_prev = jacobi_recurrence_coefficients(r, alpha, beta)
        nxt = ad.sub(
            ad.add(ad.scale(ad.matmul(lt, polys[-1]), c_x), ad.scale(polys[-1], c_1)),
            ad.scale(polys[-2], c_prev),
        )
        polys.append(nxt)
    return polys


def jacobi_filter_bank(l_tilde, x_star, weights, alpha, beta):
    """Z_r = P_r(l_tilde) @ x_star @ W_r for each order; weights sets the order."""
    polys = jacobi_matrix_polys(l_tilde, x_star, len(weights) - 1, alpha, beta)
    return [ad.matmul(p, ad.transpose(w)) for p, w in zip(polys, weights)]


def attention_fuse(z_list, w_att, b_att, att_vec):
    """Per-dual-vertex softmax over filter orders, then tanh of the blend."""
    scores = [
        ad.matmul(ad.tanh(ad.add(ad.matmul(z, ad.transpose(w_att)), b_att)), att_vec)
        for z in z_list
    ]
    eta = ad.softmax_rows(ad.concat(scores))
    blended = None
    for r, z in enumerate(z_list):
        weighted = ad.mul(ad.slice2d(eta, 0, eta.shape[0], r, r + 1), z)
        blended = weighted if blended is None else ad.add(blended, weighted)
    return ad.tanh(blended)


def project_back(s_star, hg):
    """Map dual-vertex features back to nodes: rows average incident duals.

    Zero-degree nodes receive zero rows.
    """
    degrees = hg.node_degrees
    inv = np.zeros_like(degrees)
    nz = degrees > 0
    inv[nz] = 1.0 / degrees[nz]
    projector = inv[:, None] * hg.incidence.T
    return ad.matmul(ad.constant(projector), s_star)


def private_fuse(s_bar, n_utt, weight, bias):
    """Per utterance, linear map of the three concatenated modality rows."""
    d = s_bar.shape[1]
    blocks = [ad.slice2d(s_bar, m * n_utt, (m + 1) * n_utt, 0, d) for m in range(3)]
    return ad.add(ad.matmul(ad.concat(blocks), ad.transpose(weight)), bias)


def loss_cons(h_prt, speakers):
    """Mean squared distance between same-speaker utterance representations."""
    speakers = np.asarray(speakers, dtype=int)
    n = speakers.size
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if speakers[i] == speakers[j]]
    if not pairs:
        return ad.constant(0.0)
    diff_sel = np.zeros((len(pairs), n))
    for row, (i, j) in enumerate(pairs):
        diff_sel[row, i] = 1.0
        diff_sel[row, j] = -1.0
    diffs = ad.matmul(ad.constant(diff_sel), h_prt)
    return ad.scale(ad.sum_sq(diffs), 1.0 / len(pairs))


def loss_rec_prt(x_tilde, s_bar, decoders):
    """Mean squared error of per-modality decoders recovering x_tilde from s_bar."""
    n3, d = x_tilde.shape
    n = n3 // 3
    total = None
    for mi, m in enumerate(MODALITIES):
        target = ad.slice2d(x_tilde, mi * n, (mi + 1) * n, 0, d)
        source = ad.slice2d(s_bar, mi * n, (mi + 1) * n, 0, d)
        term = ad.sum_sq(ad.sub(target, mlp_apply(decoders[m], source)))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / n3)


def loss_prt(l_rec_prt, l_cons, beta):
    return ad.add(l_rec_prt, ad.scale(l_cons, beta))
