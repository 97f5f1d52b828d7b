import numpy as np
import pytest
from scipy.special import eval_jacobi

from convemo import autodiff as ad
from convemo.autodiff import Tensor, finite_diff_check
from convemo.disentangle import MODALITIES
from convemo.hypergraph_branch import (
    attention_fuse,
    build_speaker_graph,
    dual_transform,
    hypergraph_laplacian,
    inject_speaker,
    jacobi_filter_bank,
    jacobi_matrix_polys,
    jacobi_poly_scalar,
    largest_laplacian_eigenvalue,
    loss_cons,
    loss_prt,
    loss_rec_prt,
    private_fuse,
    project_back,
    rescale_laplacian,
)


def random_speaker_graph(rng):
    n = int(rng.integers(2, 9))
    speakers = rng.integers(0, int(rng.integers(1, 4)) + 1, size=n)
    w_same = int(rng.integers(1, 4))
    w_cross = int(rng.integers(0, 3))
    return speakers, build_speaker_graph(speakers, w_same, w_cross), n


class TestSpeakerInjection:
    def test_zero_embedding_identity(self):
        rng = np.random.default_rng(0)
        x = ad.constant(rng.normal(size=(6, 4)))
        out = inject_speaker(x, [0, 1], Tensor(np.zeros((4, 2))))
        np.testing.assert_array_equal(out.data, x.data)

    def test_single_speaker_common_shift(self):
        rng = np.random.default_rng(1)
        x = ad.constant(np.zeros((6, 4)))
        w = Tensor(rng.normal(size=(4, 2)))
        out = inject_speaker(x, [0, 0], w)
        np.testing.assert_allclose(out.data, np.tile(w.data[:, 0], (6, 1)))

    def test_two_speakers_differ_by_column_difference(self):
        rng = np.random.default_rng(2)
        x = ad.constant(np.zeros((6, 4)))
        w = Tensor(rng.normal(size=(4, 2)))
        out = inject_speaker(x, [0, 1], w)
        np.testing.assert_allclose(out.data[0] - out.data[1], w.data[:, 0] - w.data[:, 1])
        # the shift repeats identically across the three modality copies
        np.testing.assert_allclose(out.data[0], out.data[2])
        np.testing.assert_allclose(out.data[0], out.data[4])

    def test_out_of_range_speaker(self):
        with pytest.raises(ValueError, match="speaker"):
            inject_speaker(ad.constant(np.zeros((3, 2))), [5], Tensor(np.zeros((2, 2))))


class TestSpeakerGraph:
    def test_single_utterance_no_edges(self):
        assert build_speaker_graph([0], 3, 1) == []

    def test_three_utterance_enumeration(self):
        # speakers [0, 1, 0], w_same=2, w_cross=1: per modality the
        # intra-speaker edge (0, 2) plus cross edges (0, 1) and (1, 2)
        edges = build_speaker_graph([0, 1, 0], 2, 1)
        assert len(edges) == 9
        per_modality = {(p % 3, q % 3) for p, q in edges}
        assert per_modality == {(0, 1), (1, 2), (0, 2)}
        for m in range(3):
            block = [(p, q) for p, q in edges if p // 3 == m]
            assert sorted(block) == [(3 * m, 3 * m + 1), (3 * m, 3 * m + 2), (3 * m + 1, 3 * m + 2)]

    def test_same_speaker_only_intra_edges(self):
        edges = build_speaker_graph([0, 0, 0, 0], 1, 5)
        # adjacent same-speaker pairs only; window w_same=1
        assert len(edges) == 9
        assert all(q - p == 1 for p, q in edges)

    def test_no_self_loops(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            _, edges, _ = random_speaker_graph(rng)
            assert all(p != q for p, q in edges)


class TestDualTransform:
    def path_fixture(self, d=3):
        rng = np.random.default_rng(4)
        x = ad.constant(rng.normal(size=(3, d)))
        hg = dual_transform([(0, 1), (1, 2)], x, 3)
        return x, hg

    def test_path_incidence_and_degrees(self):
        _, hg = self.path_fixture()
        np.testing.assert_array_equal(hg.incidence, [[1, 1, 0], [0, 1, 1]])
        np.testing.assert_array_equal(hg.node_degrees, [1, 2, 1])
        np.testing.assert_array_equal(hg.vertex_degrees, [2, 2])

    def test_dual_features_average_endpoints(self):
        x, hg = self.path_fixture()
        np.testing.assert_allclose(hg.x_star.data[0], 0.5 * (x.data[0] + x.data[1]))
        np.testing.assert_allclose(hg.x_star.data[1], 0.5 * (x.data[1] + x.data[2]))

    def test_equal_endpoints_pass_through(self):
        x = ad.constant(np.tile([1.0, 2.0], (2, 1)))
        hg = dual_transform([(0, 1)], x, 2)
        np.testing.assert_allclose(hg.x_star.data[0], [1.0, 2.0])

    def test_row_count_equals_edges(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            _, edges, n = random_speaker_graph(rng)
            if not edges:
                continue
            hg = dual_transform(edges, ad.constant(rng.normal(size=(3 * n, 2))), 3 * n)
            assert hg.x_star.shape == (len(edges), 2)

    def test_empty_edges_rejected(self):
        with pytest.raises(ValueError):
            dual_transform([], ad.constant(np.zeros((3, 2))), 3)


class TestHypergraphLaplacian:
    def dense_oracle(self, hg):
        # direct evaluation of the defining formula
        keep = hg.node_degrees > 0
        h = hg.incidence[:, keep]
        w = np.diag(hg.edge_weights[keep])
        d_e = np.diag(hg.node_degrees[keep])
        d_v = np.diag(hg.vertex_degrees)
        m = h.shape[0]
        inv_sqrt = np.linalg.inv(np.sqrt(d_v))
        return np.eye(m) - inv_sqrt @ h @ w @ np.linalg.inv(d_e) @ h.T @ inv_sqrt

    def test_single_edge_is_zero(self):
        hg = dual_transform([(0, 1)], ad.constant(np.zeros((2, 2))), 2)
        lap = hypergraph_laplacian(hg)
        np.testing.assert_allclose(lap, [[0.0]], atol=1e-15)

    def test_path_fixture_matches_oracle(self):
        hg = dual_transform([(0, 1), (1, 2)], ad.constant(np.zeros((3, 2))), 3)
        lap = hypergraph_laplacian(hg)
        np.testing.assert_allclose(lap, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)
        np.testing.assert_allclose(lap, self.dense_oracle(hg), atol=1e-12)
        lam = np.linalg.eigvalsh(lap)
        assert lam.min() >= -1e-9 and lam.max() <= 2.0 + 1e-9

    @pytest.mark.parametrize("seed", range(8))
    def test_random_graphs_match_oracle_and_psd(self, seed):
        rng = np.random.default_rng(100 + seed)
        _, edges, n = random_speaker_graph(rng)
        if not edges:
            pytest.skip("empty graph drawn")
        hg = dual_transform(edges, ad.constant(rng.normal(size=(3 * n, 2))), 3 * n)
        lap = hypergraph_laplacian(hg)
        np.testing.assert_allclose(lap, self.dense_oracle(hg), atol=1e-12)
        np.testing.assert_allclose(lap, lap.T, atol=0)
        lam = np.linalg.eigvalsh(lap)
        assert lam.min() >= -1e-9
        assert lam.max() <= 2.0 + 1e-9

    def test_scaled_kernel_vector(self):
        # L* annihilates D_v^(1/2) 1 under identity hyperedge weights
        rng = np.random.default_rng(6)
        _, edges, n = random_speaker_graph(rng)
        hg = dual_transform(edges, ad.constant(rng.normal(size=(3 * n, 2))), 3 * n)
        lap = hypergraph_laplacian(hg)
        v = np.sqrt(hg.vertex_degrees)
        np.testing.assert_allclose(lap @ v, np.zeros(len(hg.edges)), atol=1e-12)


class TestJacobi:
    def test_scalar_p2_legendre(self):
        assert jacobi_poly_scalar(2, 0.0, 0.0, 0.5) == (3 * 0.25 - 1) / 2
        assert jacobi_poly_scalar(2, 0.0, 0.0, 0.5) == -0.125

    def test_scalar_low_orders(self):
        assert jacobi_poly_scalar(0, 0.3, 0.7, 0.2) == 1.0
        x = 0.37
        a, b = 0.5, 1.5
        assert jacobi_poly_scalar(1, a, b, x) == pytest.approx(0.5 * ((a - b) + (a + b + 2) * x))

    @pytest.mark.parametrize("alpha,beta", [(0.0, 0.0), (0.5, 0.5), (1.0, 0.0), (0.25, 1.5)])
    def test_scalar_against_scipy(self, alpha, beta):
        rng = np.random.default_rng(7)
        for x in rng.uniform(-1, 1, size=6):
            for r in range(6):
                expected = eval_jacobi(r, alpha, beta, x)
                assert jacobi_poly_scalar(r, alpha, beta, x) == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_first_order_legendre_is_rescaled_laplacian(self):
        rng = np.random.default_rng(8)
        edges = build_speaker_graph([0, 1, 0, 1], 3, 1)
        hg = dual_transform(edges, ad.constant(rng.normal(size=(12, 3))), 12)
        lap = hypergraph_laplacian(hg)
        lt = rescale_laplacian(lap, largest_laplacian_eigenvalue(lap))
        polys = jacobi_matrix_polys(lt, hg.x_star, 1, 0.0, 0.0)
        np.testing.assert_allclose(polys[1].data, lt @ hg.x_star.data, atol=1e-12)

    def test_matrix_recurrence_matches_scalar_on_eigenvectors(self):
        rng = np.random.default_rng(9)
        edges = build_speaker_graph([0, 1, 0, 1, 0], 3, 1)
        hg = dual_transform(edges, ad.constant(rng.normal(size=(15, 3))), 15)
        lap = hypergraph_laplacian(hg)
        lam_max = largest_laplacian_eigenvalue(lap)
        lt = rescale_laplacian(lap, lam_max)
        mu, vecs = np.linalg.eigh(lt)
        for col in range(vecs.shape[1]):
            v = vecs[:, col : col + 1]
            polys = jacobi_matrix_polys(lt, ad.constant(v), 5, 0.0, 0.0)
            for r in range(6):
                expected = jacobi_poly_scalar(r, 0.0, 0.0, float(mu[col])) * v
                assert np.max(np.abs(polys[r].data - expected)) <= 1e-8

    def test_degenerate_laplacian_fallback(self, caplog):
        hg = dual_transform([(0, 1)], ad.constant(np.zeros((2, 2))), 2)
        lap = hypergraph_laplacian(hg)
        with caplog.at_level("DEBUG", logger="convemo.hypergraph_branch"):
            lam = largest_laplacian_eigenvalue(lap)
        assert lam == 1.0
        assert any("degenerate" in rec.message for rec in caplog.records)

    def test_rescaled_spectrum_in_unit_interval(self):
        rng = np.random.default_rng(10)
        _, edges, n = random_speaker_graph(rng)
        hg = dual_transform(edges, ad.constant(rng.normal(size=(3 * n, 2))), 3 * n)
        lap = hypergraph_laplacian(hg)
        lt = rescale_laplacian(lap, largest_laplacian_eigenvalue(lap))
        lam = np.linalg.eigvalsh(lt)
        assert lam.min() >= -1.0 - 1e-9 and lam.max() <= 1.0 + 1e-9


class TestAttentionFuse:
    def _att_params(self, rng, d):
        return (
            Tensor(rng.normal(size=(d, d))),
            Tensor(rng.normal(size=d)),
            Tensor(rng.normal(size=(d, 1))),
        )

    def test_single_filter_is_tanh(self):
        rng = np.random.default_rng(11)
        z0 = ad.constant(rng.normal(size=(4, 3)))
        w, b, a = self._att_params(rng, 3)
        out = attention_fuse([z0], w, b, a)
        np.testing.assert_allclose(out.data, np.tanh(z0.data), atol=1e-15)

    def test_identical_filters_collapse(self):
        rng = np.random.default_rng(12)
        z = ad.constant(rng.normal(size=(4, 3)))
        w, b, a = self._att_params(rng, 3)
        out = attention_fuse([z, z, z], w, b, a)
        np.testing.assert_allclose(out.data, np.tanh(z.data), atol=1e-12)

    def test_attention_weights_sum_to_one(self):
        rng = np.random.default_rng(13)
        z_list = [ad.constant(rng.normal(size=(5, 3))) for _ in range(4)]
        w, b, a = self._att_params(rng, 3)
        scores = [ad.matmul(ad.tanh(ad.add(ad.matmul(z, ad.transpose(w)), b)), a) for z in z_list]
        eta = ad.softmax_rows(ad.concat(scores)).data
        np.testing.assert_allclose(eta.sum(axis=1), np.ones(5), atol=1e-12)
        assert (eta >= 0).all()


class TestProjectBack:
    def test_path_rows(self):
        rng = np.random.default_rng(14)
        hg = dual_transform([(0, 1), (1, 2)], ad.constant(rng.normal(size=(3, 2))), 3)
        s_star = ad.constant(rng.normal(size=(2, 2)))
        out = project_back(s_star, hg)
        np.testing.assert_allclose(out.data[0], s_star.data[0])  # degree 1
        np.testing.assert_allclose(out.data[1], 0.5 * (s_star.data[0] + s_star.data[1]))
        np.testing.assert_allclose(out.data[2], s_star.data[1])

    def test_zero_input_zero_output(self):
        hg = dual_transform([(0, 1)], ad.constant(np.zeros((2, 2))), 2)
        out = project_back(ad.constant(np.zeros((1, 2))), hg)
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_isolated_node_gets_zero_row(self):
        # node 2 has no incident edges
        rng = np.random.default_rng(15)
        hg = dual_transform([(0, 1)], ad.constant(rng.normal(size=(3, 2))), 3)
        out = project_back(ad.constant(rng.normal(size=(1, 2))), hg)
        np.testing.assert_array_equal(out.data[2], [0.0, 0.0])


class TestPrivateFuse:
    def test_zero_input_zero_bias(self):
        rng = np.random.default_rng(16)
        out = private_fuse(ad.constant(np.zeros((6, 3))), 2, Tensor(rng.normal(size=(4, 9))), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape(self):
        rng = np.random.default_rng(17)
        out = private_fuse(ad.constant(rng.normal(size=(9, 3))), 3, Tensor(rng.normal(size=(5, 9))), Tensor(rng.normal(size=5)))
        assert out.shape == (3, 5)

    def test_relabeling_equivariance(self):
        # endpoint-relabeled edges + permuted rows => permuted outputs
        n, d = 4, 3
        rng = np.random.default_rng(18)
        speakers = [0, 1, 0, 1]
        edges = build_speaker_graph(speakers, 3, 1)
        x = rng.normal(size=(3 * n, d))
        w = Tensor(rng.normal(size=(d, 3 * d)))
        b = Tensor(rng.normal(size=d))

        def run(edge_list, features):
            hg = dual_transform(edge_list, ad.constant(features), 3 * n)
            lap = hypergraph_laplacian(hg)
            lt = rescale_laplacian(lap, largest_laplacian_eigenvalue(lap))
            polys = jacobi_matrix_polys(lt, hg.x_star, 2, 0.0, 0.0)
            s_star = attention_fuse(polys, Tensor(np.eye(d)), Tensor(np.zeros(d)), Tensor(np.ones((d, 1))))
            s_bar = project_back(s_star, hg)
            return private_fuse(s_bar, n, w, b)

        base = run(edges, x)

        perm_utt = np.array([3, 1, 0, 2])  # new_index -> old_index
        old_to_new = np.argsort(perm_utt)
        node_old_to_new = np.concatenate([old_to_new + m * n for m in range(3)])
        relabeled = [(min(node_old_to_new[p], node_old_to_new[q]), max(node_old_to_new[p], node_old_to_new[q])) for p, q in edges]
        x_perm = np.concatenate([x[m * n : (m + 1) * n][perm_utt] for m in range(3)])
        permuted = run(relabeled, x_perm)

        np.testing.assert_allclose(permuted.data, base.data[perm_utt], atol=1e-10)


class TestPrivateLosses:
    def test_cons_identical_rows_zero(self):
        h = ad.constant(np.tile([1.0, 2.0], (4, 1)))
        assert loss_cons(h, [0, 0, 0, 0]).item() == 0.0

    def test_cons_single_pair_unit_distance(self):
        h = ad.constant(np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert loss_cons(h, [1, 1]).item() == pytest.approx(1.0)

    def test_cons_distinct_speakers_zero(self):
        rng = np.random.default_rng(19)
        h = ad.constant(rng.normal(size=(3, 2)))
        assert loss_cons(h, [0, 1, 2]).item() == 0.0

    def test_rec_prt_perfect_reconstruction(self):
        from convemo.disentangle import mlp_apply

        rng = np.random.default_rng(20)
        d, n = 3, 2
        decoders = {
            m: __import__("convemo.disentangle", fromlist=["Mlp"]).Mlp(
                Tensor(rng.normal(size=(d, d))),
                Tensor(rng.normal(size=d)),
                Tensor(rng.normal(size=(d, d))),
                Tensor(rng.normal(size=d)),
            )
            for m in MODALITIES
        }
        s_bar = ad.constant(rng.normal(size=(3 * n, d)))
        decoded = np.concatenate(
            [mlp_apply(decoders[m], ad.slice2d(s_bar, i * n, (i + 1) * n, 0, d)).data for i, m in enumerate(MODALITIES)]
        )
        assert loss_rec_prt(ad.constant(decoded), s_bar, decoders).item() == pytest.approx(0.0, abs=1e-28)
        unit = np.zeros_like(decoded)
        unit[:, 0] = 1.0
        assert loss_rec_prt(ad.constant(decoded + unit), s_bar, decoders).item() == pytest.approx(1.0)

    def test_loss_prt_combination(self):
        z = ad.constant(0.0)
        assert loss_prt(z, z, 0.5).item() == 0.0
        assert loss_prt(ad.constant(1.0), ad.constant(2.0), 0.5).item() == pytest.approx(2.0)
        assert loss_prt(ad.constant(0.7), ad.constant(9.0), 0.0).item() == pytest.approx(0.7)


def test_branch_gradients_match_finite_differences():
    from convemo.disentangle import Mlp

    rng = np.random.default_rng(21)
    n, d, k = 3, 4, 2
    speakers = [0, 1, 0]
    x_prt = Tensor(rng.uniform(-1, 1, size=(3 * n, d)), is_param=True)
    w_spk = Tensor(rng.uniform(-0.5, 0.5, size=(d, k)), is_param=True)
    jac_w = [Tensor(rng.uniform(-0.5, 0.5, size=(d, d)), is_param=True) for _ in range(3)]
    att_w = Tensor(rng.uniform(-0.5, 0.5, size=(d, d)), is_param=True)
    att_b = Tensor(rng.uniform(-0.5, 0.5, size=d), is_param=True)
    att_a = Tensor(rng.uniform(-0.5, 0.5, size=(d, 1)), is_param=True)
    fuse_w = Tensor(rng.uniform(-0.5, 0.5, size=(d, 3 * d)), is_param=True)
    fuse_b = Tensor(rng.uniform(-0.5, 0.5, size=d), is_param=True)
    decoders = {
        m: Mlp(
            Tensor(rng.uniform(-0.5, 0.5, size=(d, d)), is_param=True),
            Tensor(rng.uniform(-0.5, 0.5, size=d), is_param=True),
            Tensor(rng.uniform(-0.5, 0.5, size=(d, d)), is_param=True),
            Tensor(rng.uniform(-0.5, 0.5, size=d), is_param=True),
        )
        for m in MODALITIES
    }

    edges = build_speaker_graph(speakers, 3, 1)

    def loss_fn():
        x_tilde = inject_speaker(x_prt, speakers, w_spk)
        hg = dual_transform(edges, x_tilde, 3 * n)
        lap = hypergraph_laplacian(hg)
        lt = rescale_laplacian(lap, largest_laplacian_eigenvalue(lap))
        z_list = jacobi_filter_bank(lt, hg.x_star, jac_w, 0.0, 0.0)
        s_star = attention_fuse(z_list, att_w, att_b, att_a)
        s_bar = project_back(s_star, hg)
        h_prt = private_fuse(s_bar, n, fuse_w, fuse_b)
        l_c = loss_cons(h_prt, speakers)
        l_r = loss_rec_prt(x_tilde, s_bar, decoders)
        return loss_prt(l_r, l_c, 0.3)

    params = [x_prt, w_spk, *jac_w, att_w, att_b, att_a, fuse_w, fuse_b]
    for m in MODALITIES:
        params.extend(decoders[m])
    assert finite_diff_check(loss_fn, params, n_samples=80, seed=3) < 1e-5
