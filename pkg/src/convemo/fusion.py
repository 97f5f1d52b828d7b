"""Token fusion of the two branch outputs and emotion classification.

Each utterance becomes a 5-token sequence: a learnable fusion token, the
projected shared representation, and the three projected private modality
rows, each private/shared token offset by its type embedding. A small
post-norm transformer encoder mixes the tokens; the encoded fusion token
feeds a two-layer classifier.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "TransformerLayer",
    "build_tokens",
    "layer_norm",
    "multi_head_attention",
    "transformer_encode",
    "classify",
    "predicted_labels",
    "loss_cls",
    "loss_total",
]

LAYER_NORM_EPS = 1e-5


class TransformerLayer(NamedTuple):
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor


def build_tokens(z_fus, z_com, z_t, z_a, z_v, e_com, e_t, e_a, e_v):
    """Assemble one utterance's 5 x d_f token sequence.

    All inputs are (1, d_f) rows; type embeddings distinguish the shared
    token from the three private ones.
    """
    return ad.concat_rows(
        [
            z_fus,
            ad.add(z_com, e_com),
            ad.add(z_t, e_t),
            ad.add(z_a, e_a),
            ad.add(z_v, e_v),
        ]
    )


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    mu = ad.row_mean(x)
    centered = ad.sub(x, mu)
    var = ad.row_mean(ad.mul(centered, centered))
    normed = ad.div(centered, ad.sqrt(ad.add_scalar(var, eps)))
    return ad.add(ad.mul(normed, gamma), beta)


def multi_head_attention(x, layer, n_heads):
    """softmax(QK^T / sqrt(d_head)) V per head, heads concatenated, projected."""
    d_f = x.shape[1]
    d_head = d_f // n_heads
    q = ad.matmul(x, ad.transpose(layer.w_q))
    k = ad.matmul(x, ad.transpose(layer.w_k))
    v = ad.matmul(x, ad.transpose(layer.w_v))
    n_rows = x.shape[0]
    heads = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = ad.slice2d(q, 0, n_rows, lo, hi)
        kh = ad.slice2d(k, 0, n_rows, lo, hi)
        vh = ad.slice2d(v, 0, n_rows, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(d_head))
        heads.append(ad.matmul(ad.softmax_rows(scores), vh))
    merged = ad.concat(heads)
    return ad.add(ad.matmul(merged, ad.transpose(layer.w_o)), layer.b_o)


def transformer_encode(tokens, layers, n_heads):
    """Post-norm encoder: residual attention then residual feed-forward per layer."""
    x = tokens
    for layer in layers:
        attn = multi_head_attention(x, layer, n_heads)
        x = layer_norm(ad.add(x, attn), layer.ln1_gamma, layer.ln1_beta)
        hidden = ad.relu(ad.add(ad.matmul(x, ad.transpose(layer.ff_w1)), layer.ff_b1))
        ff = ad.add(ad.matmul(hidden, ad.transpose(layer.ff_w2)), layer.ff_b2)
        x = layer_norm(ad.add(x, ff), layer.ln2_gamma, layer.ln2_beta)
    return x


def classify(u, w1, b1, w2, b2):
    """Class probabilities from fused representations u (N, d_f)."""
    hidden = ad.relu(ad.add(ad.matmul(u, ad.transpose(w1)), b1))
    logits = ad.add(ad.matmul(hidden, ad.transpose(w2)), b2)
    return ad.softmax_rows(logits)


def predicted_labels(probs):
    """Argmax per row; ties break to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=-1)


def loss_cls(probs, labels):
    """Mean cross-entropy against integer labels.

    The target probability is selected before the log so confident one-hot
    rows (zeros off-target) stay finite.
    """
    labels = np.asarray(labels, dtype=int)
    n, c = probs.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.row_sum(ad.mul(probs, ad.constant(onehot)))
    return ad.scale(ad.total_sum(ad.log(picked)), -1.0 / n)


def loss_total(l_cls, l_dec, l_cl, l_prt, lambda1, lambda2, lambda3):
    reg = ad.add(ad.add(ad.scale(l_dec, lambda1), ad.scale(l_cl, lambda2)), ad.scale(l_prt, lambda3))
    return ad.add(l_cls, reg)
