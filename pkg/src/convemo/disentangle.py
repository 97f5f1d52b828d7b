"""Shared/private feature disentanglement and its four-term objective.

One encoder is shared across all three modalities (weight identity, not
copies); each modality also has a private encoder and a decoder that eats
the concatenated shared+private code. Reconstruction targets the projected
input features, so all decoders share one output dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "MODALITIES",
    "Mlp",
    "mlp_apply",
    "DisentangledFeatures",
    "disentangle_forward",
    "reconstruct",
    "loss_rec",
    "loss_cyc",
    "mine_triplets",
    "loss_mar",
    "loss_ort",
    "loss_dec",
]

MODALITIES = ("t", "a", "v")


class Mlp(NamedTuple):
    """Single-hidden-layer map: x -> W2 tanh(W1 x + b1) + b2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def mlp_apply(mlp, x):
    h = ad.tanh(ad.add(ad.matmul(x, ad.transpose(mlp.w1)), mlp.b1))
    return ad.add(ad.matmul(h, ad.transpose(mlp.w2)), mlp.b2)


@dataclass
class DisentangledFeatures:
    """Per-modality shared (x_com) and private (x_prt) codes, each (N, d)."""

    x_com: dict
    x_prt: dict

    @property
    def n_utterances(self):
        return self.x_com[MODALITIES[0]].shape[0]

    def stacked_com(self):
        """All shared codes as a (3N, d) matrix in t, a, v block order."""
        return ad.concat_rows([self.x_com[m] for m in MODALITIES])

    def stacked_prt(self):
        return ad.concat_rows([self.x_prt[m] for m in MODALITIES])


def disentangle_forward(projected, e_com, e_prt):
    """Encode projected features into shared and private codes.

    The same e_com weights are applied to every modality, so identical
    projected inputs produce identical shared codes.
    """
    x_com = {m: mlp_apply(e_com, projected[m]) for m in MODALITIES}
    x_prt = {m: mlp_apply(e_prt[m], projected[m]) for m in MODALITIES}
    return DisentangledFeatures(x_com=x_com, x_prt=x_prt)


def reconstruct(dis, decoders):
    """Decode [x_com || x_prt] back to the projected-feature space, per modality."""
    return {
        m: mlp_apply(decoders[m], ad.concat([dis.x_com[m], dis.x_prt[m]]))
        for m in MODALITIES
    }


def loss_rec(projected, recons):
    """Mean squared reconstruction error over all 3N (modality, utterance) terms."""
    n = projected[MODALITIES[0]].shape[0]
    total = None
    for m in MODALITIES:
        term = ad.sum_sq(ad.sub(projected[m], recons[m]))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / (3 * n))


def loss_cyc(dis, recons, e_prt):
    """Cycle consistency: re-encoding the reconstruction recovers the private code."""
    n = dis.n_utterances
    total = None
    for m in MODALITIES:
        cycled = mlp_apply(e_prt[m], recons[m])
        term = ad.sum_sq(ad.sub(dis.x_prt[m], cycled))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / (3 * n))


def mine_triplets(labels, rng, per_anchor=2):
    """Sample (anchor, positive, negative) node triples over the 3N layout.

    Node q encodes modality q // N and utterance q % N. A positive shares
    the anchor's label but lives in a different modality; a negative is any
    node with a different label. Anchors lacking either candidate set are
    skipped; returns [] when nothing is mineable.
    """
    labels = np.asarray(labels, dtype=int)
    n = labels.size
    node_labels = np.tile(labels, 3)
    node_modality = np.repeat(np.arange(3), n)

    triplets = []
    for anchor in range(3 * n):
        pos_mask = (node_labels == node_labels[anchor]) & (node_modality != node_modality[anchor])
        neg_mask = node_labels != node_labels[anchor]
        positives = np.flatnonzero(pos_mask)
        negatives = np.flatnonzero(neg_mask)
        if positives.size == 0 or negatives.size == 0:
            continue
        drawn = {}
        for _ in range(per_anchor):
            p = int(positives[rng.integers(positives.size)])
            q = int(negatives[rng.integers(negatives.size)])
            drawn[(p, q)] = None
        for p, q in drawn:
            triplets.append((anchor, p, q))
    return triplets


def loss_mar(x_com_nodes, triplets, margin):
    """Triplet margin loss with cosine similarity; 0 for an empty triplet set."""
    if not triplets:
        return ad.constant(0.0)
    n_nodes = x_com_nodes.shape[0]
    t = len(triplets)
    sel_a = np.zeros((t, n_nodes))
    sel_p = np.zeros((t, n_nodes))
    sel_n = np.zeros((t, n_nodes))
    for row, (a, p, q) in enumerate(triplets):
        sel_a[row, a] = 1.0
        sel_p[row, p] = 1.0
        sel_n[row, q] = 1.0
    anchors = ad.matmul(ad.constant(sel_a), x_com_nodes)
    positives = ad.matmul(ad.constant(sel_p), x_com_nodes)
    negatives = ad.matmul(ad.constant(sel_n), x_com_nodes)
    c_pos = ad.rowwise_cosine(anchors, positives)
    c_neg = ad.rowwise_cosine(anchors, negatives)
    hinge = ad.relu(ad.add_scalar(ad.sub(c_neg, c_pos), float(margin)))
    return ad.mean(hinge)


def loss_ort(dis):
    """Mean absolute cosine between shared and private codes; in [0, 1]."""
    cols = [ad.absolute(ad.rowwise_cosine(dis.x_com[m], dis.x_prt[m])) for m in MODALITIES]
    return ad.mean(ad.concat_rows(cols))


def loss_dec(l_rec, l_cyc, l_mar, l_ort, gamma1, gamma2):
    weighted = ad.add(ad.scale(l_mar, gamma1), ad.scale(l_ort, gamma2))
    return ad.add(ad.add(l_rec, l_cyc), weighted)
