"""Parameter registry and the end-to-end model forward pass.

Every learnable tensor lives in a :class:`ParamStore` under a stable name,
created in a fixed order from one seeded generator, so runs and
checkpoints are reproducible. ``EmotionModel.forward`` wires projections,
disentanglement, both graph branches, and the fusion classifier for one
conversation, honoring the ablation switches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import disentangle as dis_mod
from . import fusion as fus
from . import hypergraph_branch as hyp
from . import spectral_branch as spectral
from .autodiff import Tensor
from .config import TrainConfig
from .disentangle import MODALITIES, Mlp

__all__ = ["ParamStore", "EmotionModel", "ForwardPass", "build_params"]


class ParamStore:
    """Name -> parameter tensor registry with deterministic iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, shape, rng, fan_in):
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        scale = 1.0 / np.sqrt(fan_in)
        t = Tensor(rng.uniform(-scale, scale, size=shape), is_param=True, name=name)
        self._params[name] = t
        return t

    def add_constant_init(self, name, shape, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.full(shape, float(value)), is_param=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def items(self):
        return self._params.items()

    @property
    def total_size(self):
        return sum(t.size for t in self._params.values())

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def state(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} != {t.data.shape}")
            t.data = arr.copy()


def build_params(config, dims, n_classes, n_speakers, rng):
    """All learnable tensors, in a fixed creation order."""
    d = config.latent_dim
    d_f = config.d_fusion
    store = ParamStore()

    # input projections and disentangler
    for m, d_m in zip(MODALITIES, dims):
        store.add(f"proj.{m}.w", (d, d_m), rng, fan_in=d_m)
        store.add(f"proj.{m}.b", (d,), rng, fan_in=d_m)
    for prefix, fan in (("enc_com", d),):
        store.add(f"{prefix}.w1", (d, d), rng, fan_in=fan)
        store.add(f"{prefix}.b1", (d,), rng, fan_in=fan)
        store.add(f"{prefix}.w2", (d, d), rng, fan_in=d)
        store.add(f"{prefix}.b2", (d,), rng, fan_in=d)
    for m in MODALITIES:
        store.add(f"enc_prt.{m}.w1", (d, d), rng, fan_in=d)
        store.add(f"enc_prt.{m}.b1", (d,), rng, fan_in=d)
        store.add(f"enc_prt.{m}.w2", (d, d), rng, fan_in=d)
        store.add(f"enc_prt.{m}.b2", (d,), rng, fan_in=d)
    for m in MODALITIES:
        store.add(f"dec.{m}.w1", (d, 2 * d), rng, fan_in=2 * d)
        store.add(f"dec.{m}.b1", (d,), rng, fan_in=2 * d)
        store.add(f"dec.{m}.w2", (d, d), rng, fan_in=d)
        store.add(f"dec.{m}.b2", (d,), rng, fan_in=d)

    # shared spectral branch
    store.add("shared_fuse.w", (d, 6 * d), rng, fan_in=6 * d)
    store.add("shared_fuse.b", (d,), rng, fan_in=6 * d)
    store.add("nce_low.w", (config.proj_dim, d), rng, fan_in=d)
    store.add("nce_low.b", (config.proj_dim,), rng, fan_in=d)
    store.add("nce_high.w", (config.proj_dim, d), rng, fan_in=d)
    store.add("nce_high.b", (config.proj_dim,), rng, fan_in=d)

    # private hypergraph branch
    store.add("spk.w", (d, n_speakers), rng, fan_in=n_speakers)
    for r in range(config.jacobi_order_R + 1):
        store.add(f"jacobi.w{r}", (d, d), rng, fan_in=d)
    store.add("att.w", (d, d), rng, fan_in=d)
    store.add("att.b", (d,), rng, fan_in=d)
    store.add("att.a", (d, 1), rng, fan_in=d)
    store.add("private_fuse.w", (d, 3 * d), rng, fan_in=3 * d)
    store.add("private_fuse.b", (d,), rng, fan_in=3 * d)
    for m in MODALITIES:
        store.add(f"dec_prt.{m}.w1", (d, d), rng, fan_in=d)
        store.add(f"dec_prt.{m}.b1", (d,), rng, fan_in=d)
        store.add(f"dec_prt.{m}.w2", (d, d), rng, fan_in=d)
        store.add(f"dec_prt.{m}.b2", (d,), rng, fan_in=d)

    # fusion transformer
    for name in ("com", *MODALITIES):
        store.add(f"fuse_proj.{name}.w", (d_f, d), rng, fan_in=d)
        store.add(f"fuse_proj.{name}.b", (d_f,), rng, fan_in=d)
    store.add("fusion_token", (1, d_f), rng, fan_in=d_f)
    for name in ("com", *MODALITIES):
        store.add(f"type_emb.{name}", (1, d_f), rng, fan_in=d_f)
    for i in range(config.n_layers):
        store.add(f"layer{i}.w_q", (d_f, d_f), rng, fan_in=d_f)
        store.add(f"layer{i}.w_k", (d_f, d_f), rng, fan_in=d_f)
        store.add(f"layer{i}.w_v", (d_f, d_f), rng, fan_in=d_f)
        store.add(f"layer{i}.w_o", (d_f, d_f), rng, fan_in=d_f)
        store.add(f"layer{i}.b_o", (d_f,), rng, fan_in=d_f)
        store.add(f"layer{i}.ff.w1", (4 * d_f, d_f), rng, fan_in=d_f)
        store.add(f"layer{i}.ff.b1", (4 * d_f,), rng, fan_in=d_f)
        store.add(f"layer{i}.ff.w2", (d_f, 4 * d_f), rng, fan_in=4 * d_f)
        store.add(f"layer{i}.ff.b2", (d_f,), rng, fan_in=4 * d_f)
        # layer norms start as the identity transform
        store.add_constant_init(f"layer{i}.ln1.gamma", (d_f,), 1.0)
        store.add_constant_init(f"layer{i}.ln1.beta", (d_f,), 0.0)
        store.add_constant_init(f"layer{i}.ln2.gamma", (d_f,), 1.0)
        store.add_constant_init(f"layer{i}.ln2.beta", (d_f,), 0.0)

    # classifier and the no-transformer fallback fusion
    store.add("cls.w1", (d_f, d_f), rng, fan_in=d_f)
    store.add("cls.b1", (d_f,), rng, fan_in=d_f)
    store.add("cls.w2", (n_classes, d_f), rng, fan_in=d_f)
    store.add("cls.b2", (n_classes,), rng, fan_in=d_f)
    store.add("flat_fuse.w", (d_f, 4 * d), rng, fan_in=4 * d)
    store.add("flat_fuse.b", (d_f,), rng, fan_in=4 * d)
    return store


@dataclass
class ForwardPass:
    probs: Tensor  # (N, C)
    total: Tensor  # scalar
    losses: dict  # name -> scalar Tensor


LOSS_NAMES = ("cls", "rec", "cyc", "mar", "ort", "dec", "cl", "rec_prt", "cons", "prt", "total")


class EmotionModel:
    """Full pipeline bound to a dataset signature (dims, classes, speakers)."""

    def __init__(self, config, dims, n_classes, n_speakers, params=None):
        self.config = config.validate()
        self.dims = tuple(dims)
        self.n_classes = n_classes
        self.n_speakers = n_speakers
        if params is None:
            rng = np.random.default_rng(config.seed)
            params = build_params(config, self.dims, n_classes, n_speakers, rng)
        self.params = params
        self.graph_cache = spectral.GraphCache(size_cap=config.eig_size_cap)

    @classmethod
    def for_dataset(cls, config, dataset):
        return cls(config, dataset.dims, dataset.num_classes, dataset.num_speakers)

    def _mlp(self, prefix):
        p = self.params
        return Mlp(p[f"{prefix}.w1"], p[f"{prefix}.b1"], p[f"{prefix}.w2"], p[f"{prefix}.b2"])

    def _transformer_layers(self):
        p = self.params
        layers = []
        for i in range(self.config.n_layers):
            layers.append(
                fus.TransformerLayer(
                    w_q=p[f"layer{i}.w_q"],
                    w_k=p[f"layer{i}.w_k"],
                    w_v=p[f"layer{i}.w_v"],
                    w_o=p[f"layer{i}.w_o"],
                    b_o=p[f"layer{i}.b_o"],
                    ff_w1=p[f"layer{i}.ff.w1"],
                    ff_b1=p[f"layer{i}.ff.b1"],
                    ff_w2=p[f"layer{i}.ff.w2"],
                    ff_b2=p[f"layer{i}.ff.b2"],
                    ln1_gamma=p[f"layer{i}.ln1.gamma"],
                    ln1_beta=p[f"layer{i}.ln1.beta"],
                    ln2_gamma=p[f"layer{i}.ln2.gamma"],
                    ln2_beta=p[f"layer{i}.ln2.beta"],
                )
            )
        return layers

    def forward(self, conversation, triplet_seed=0):
        """One conversation through the full (possibly ablated) pipeline."""
        cfg = self.config
        p = self.params
        n = len(conversation)
        speakers = conversation.speakers
        labels = conversation.labels
        d = cfg.latent_dim
        zero = ad.constant(0.0)

        projected = {}
        for m in MODALITIES:
            phi = ad.constant(conversation.feature_matrix(m))
            projected[m] = ad.add(ad.matmul(phi, ad.transpose(p[f"proj.{m}.w"])), p[f"proj.{m}.b"])

        # disentanglement
        if cfg.disable_decoupler:
            x_com = dict(projected)
            x_prt = dict(projected)
            l_rec = l_cyc = l_mar = l_ort = l_dec = zero
        else:
            dis = dis_mod.disentangle_forward(projected, self._mlp("enc_com"), {m: self._mlp(f"enc_prt.{m}") for m in MODALITIES})
            recons = dis_mod.reconstruct(dis, {m: self._mlp(f"dec.{m}") for m in MODALITIES})
            l_rec = dis_mod.loss_rec(projected, recons)
            l_cyc = dis_mod.loss_cyc(dis, recons, {m: self._mlp(f"enc_prt.{m}") for m in MODALITIES})
            rng = np.random.default_rng([cfg.seed, int(triplet_seed), 0x7E1])
            triplets = dis_mod.mine_triplets(labels, rng, cfg.triplets_per_anchor)
            x_com_nodes = dis.stacked_com()
            l_mar = dis_mod.loss_mar(x_com_nodes, triplets, cfg.alpha)
            l_ort = dis_mod.loss_ort(dis)
            l_dec = dis_mod.loss_dec(l_rec, l_cyc, l_mar, l_ort, cfg.gamma1, cfg.gamma2)
            x_com = dis.x_com
            x_prt = dis.x_prt

        # shared spectral branch
        if cfg.disable_shared_branch:
            h_com = ad.scale(ad.add(ad.add(x_com["t"], x_com["a"]), x_com["v"]), 1.0 / 3.0)
            l_cl = zero
        else:
            graph = self.graph_cache.get(n, cfg.window_k)
            x_nodes = ad.concat_rows([x_com[m] for m in MODALITIES])
            views = spectral.spectral_filter(graph, x_nodes, cfg.tau_low, cfg.tau_high)
            h_com = spectral.shared_fuse(views, n, p["shared_fuse.w"], p["shared_fuse.b"])
            l_cl = spectral.info_nce(
                views.x_low,
                views.x_high,
                p["nce_low.w"],
                p["nce_low.b"],
                p["nce_high.w"],
                p["nce_high.b"],
                cfg.nce_temperature,
            )

        # private hypergraph branch
        x_prt_nodes = ad.concat_rows([x_prt[m] for m in MODALITIES])
        x_tilde = hyp.inject_speaker(x_prt_nodes, speakers, p["spk.w"])
        if cfg.disable_private_branch:
            s_bar = x_tilde
            l_cons = l_rec_prt = l_prt = zero
        else:
            edges = hyp.build_speaker_graph(speakers, cfg.w_same, cfg.w_cross)
            if not edges:
                s_bar = x_tilde
            else:
                hg = hyp.dual_transform(edges, x_tilde, 3 * n)
                l_star = hyp.hypergraph_laplacian(hg)
                lam_max = hyp.largest_laplacian_eigenvalue(l_star, size_cap=cfg.eig_size_cap)
                l_tilde = hyp.rescale_laplacian(l_star, lam_max)
                weights = [p[f"jacobi.w{r}"] for r in range(cfg.jacobi_order_R + 1)]
                z_list = hyp.jacobi_filter_bank(l_tilde, hg.x_star, weights, cfg.jacobi_alpha, cfg.jacobi_beta)
                s_star = hyp.attention_fuse(z_list, p["att.w"], p["att.b"], p["att.a"])
                s_bar = hyp.project_back(s_star, hg)
            h_prt = hyp.private_fuse(s_bar, n, p["private_fuse.w"], p["private_fuse.b"])
            l_cons = hyp.loss_cons(h_prt, speakers)
            l_rec_prt = hyp.loss_rec_prt(x_tilde, s_bar, {m: self._mlp(f"dec_prt.{m}") for m in MODALITIES})
            l_prt = hyp.loss_prt(l_rec_prt, l_cons, cfg.beta_cons)

        # fusion and classification
        s_blocks = {m: ad.slice2d(s_bar, mi * n, (mi + 1) * n, 0, d) for mi, m in enumerate(MODALITIES)}
        if cfg.disable_transformer_fusion:
            flat = ad.concat([h_com] + [s_blocks[m] for m in MODALITIES])
            u = ad.add(ad.matmul(flat, ad.transpose(p["flat_fuse.w"])), p["flat_fuse.b"])
        else:
            z_com = ad.add(ad.matmul(h_com, ad.transpose(p["fuse_proj.com.w"])), p["fuse_proj.com.b"])
            z_mod = {
                m: ad.add(ad.matmul(s_blocks[m], ad.transpose(p[f"fuse_proj.{m}.w"])), p[f"fuse_proj.{m}.b"])
                for m in MODALITIES
            }
            layers = self._transformer_layers()
            d_f = cfg.d_fusion
            u_rows = []
            for i in range(n):
                tokens = fus.build_tokens(
                    p["fusion_token"],
                    ad.slice2d(z_com, i, i + 1, 0, d_f),
                    ad.slice2d(z_mod["t"], i, i + 1, 0, d_f),
                    ad.slice2d(z_mod["a"], i, i + 1, 0, d_f),
                    ad.slice2d(z_mod["v"], i, i + 1, 0, d_f),
                    p["type_emb.com"],
                    p["type_emb.t"],
                    p["type_emb.a"],
                    p["type_emb.v"],
                )
                encoded = fus.transformer_encode(tokens, layers, cfg.n_heads)
                u_rows.append(ad.slice2d(encoded, 0, 1, 0, d_f))
            u = ad.concat_rows(u_rows)

        probs = fus.classify(u, p["cls.w1"], p["cls.b1"], p["cls.w2"], p["cls.b2"])
        l_cls = fus.loss_cls(probs, labels)
        total = fus.loss_total(l_cls, l_dec, l_cl, l_prt, cfg.lambda1, cfg.lambda2, cfg.lambda3)
        losses = {
            "cls": l_cls,
            "rec": l_rec,
            "cyc": l_cyc,
            "mar": l_mar,
            "ort": l_ort,
            "dec": l_dec,
            "cl": l_cl,
            "rec_prt": l_rec_prt,
            "cons": l_cons,
            "prt": l_prt,
            "total": total,
        }
        return ForwardPass(probs=probs, total=total, losses=losses)

    def dataset_loss(self, dataset):
        """Mean of per-conversation total losses; deterministic triplet seeds."""
        total = None
        for ci, conv in enumerate(dataset.conversations):
            result = self.forward(conv, triplet_seed=ci)
            total = result.total if total is None else ad.add(total, result.total)
        return ad.scale(total, 1.0 / len(dataset.conversations))

    def predict(self, conversation):
        """(labels, probs) for one conversation; runs tape-free."""
        result = self.forward(conversation)
        probs = result.probs.numpy()
        return fus.predicted_labels(probs), probs
