import numpy as np
import pytest

from faceclust.data import SyntheticSpec, generate
from faceclust.graph import UsageError, build_knn
from faceclust.model import (ClassifierParams, EncoderParams, FaceT, ModelConfig, Variant, distance_head,
                             linkage_forward, relation_encode)
from faceclust.numcore import ConfigError, NumericError, Tensor, backward, grad_check, tsum


# -- naive reference, one head and one row at a time ------------------------------
def ref_attention(q, k, v, p):
    out = []
    for x in q:
        heads = []
        for i in range(p.heads):
            wq, wk, wv = (w.astype(np.float64) for w in p.head(i))
            qi = x @ wq
            scores = np.array([qi @ (y @ wk) for y in k]) / np.sqrt(wq.shape[1])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            heads.append(sum(wj * (y @ wv) for wj, y in zip(w, v)))
        out.append(np.concatenate(heads) @ p.wo.data.astype(np.float64))
    return np.array(out)


def ref_norm(x, n):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + n.epsilon) * n.gamma.data + n.beta.data


def ref_stack(x, enc):
    for attn, norm in enc.layers:
        x = ref_norm(ref_attention(x, x, x, attn) + x, norm)
    return x


def ref_encode(f_q, context, enc):
    refined = ref_stack(np.asarray(context, np.float64), enc)
    read = ref_attention(np.asarray(f_q, np.float64)[None], refined, refined, enc.cross)[0]
    return ref_norm(read + f_q, enc.final_norm)


def ref_link(g_q, cands, enc, cls):
    refined = ref_stack(np.asarray(cands, np.float64), enc)
    out = []
    for c in refined:
        e = np.concatenate([g_q, c])
        h = e @ cls.hidden.weight.data + cls.hidden.bias.data
        h = np.where(h > 0, h, cls.slope.data[0] * h)
        z = h @ cls.out.weight.data + cls.out.bias.data
        out.append(np.exp(z[0]) / np.exp(z).sum())
    return np.array(out)


def tiny_model(variant="full", dim=8, heads=2, head_dim=4, depth=1, seed=0, dtype=np.float64):
    cfg = ModelConfig(dim=dim, heads=heads, head_dim=head_dim, depth=depth, dropout=0.0, variant=variant)
    return FaceT.init(cfg, np.random.default_rng(seed), dtype)


def unit(rng, *shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


class TestRelationEncode:
    def test_zero_output_projection(self):
        model = tiny_model()
        model.re.cross.wo.data[:] = 0.0
        rng = np.random.default_rng(1)
        f_q = unit(rng, 8)
        g = relation_encode(f_q, unit(rng, 1, 8), model.re).data
        np.testing.assert_allclose(g, ref_norm(f_q, model.re.final_norm), atol=1e-10)

    def test_context_permutation(self):
        model = tiny_model(depth=2, seed=2)
        rng = np.random.default_rng(2)
        f_q, ctx = unit(rng, 8), unit(rng, 5, 8)
        a = relation_encode(f_q, ctx, model.re).data
        b = relation_encode(f_q, ctx[rng.permutation(5)], model.re).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    @pytest.mark.parametrize("depth,heads", [(1, 1), (2, 2), (3, 4)])
    def test_matches_reference(self, depth, heads):
        model = tiny_model(depth=depth, heads=heads, seed=depth)
        rng = np.random.default_rng(3)
        f_q, ctx = unit(rng, 8), unit(rng, 4, 8)
        np.testing.assert_allclose(relation_encode(f_q, ctx, model.re).data, ref_encode(f_q, ctx, model.re),
                                   atol=1e-5)
        assert relation_encode(f_q, ctx, model.re).shape == (8,)

    def test_batched_equals_single(self):
        model = tiny_model(dtype=np.float32)
        rng = np.random.default_rng(4)
        f_q, ctx = unit(rng, 3, 8).astype(np.float32), unit(rng, 3, 5, 8).astype(np.float32)
        batch = relation_encode(f_q, ctx, model.re).data
        for i in range(3):
            np.testing.assert_allclose(batch[i], relation_encode(f_q[i], ctx[i], model.re).data, atol=1e-6)

    def test_errors(self):
        model = tiny_model()
        with pytest.raises(UsageError):
            relation_encode(np.ones(8), np.ones((0, 8)), model.re)
        with pytest.raises(ConfigError):
            relation_encode(np.ones(8), np.ones((2, 7)), model.re)


class TestLinkageForward:
    def test_zero_output_layer_gives_half(self):
        model = tiny_model()
        model.cls.out.weight.data[:] = 0.0
        rng = np.random.default_rng(5)
        p = linkage_forward(unit(rng, 8), unit(rng, 6, 8), model.lp, model.cls).data
        np.testing.assert_allclose(p, 0.5, atol=1e-12)

    def test_candidate_permutation_equivariance(self):
        model = tiny_model(depth=2, seed=6)
        rng = np.random.default_rng(6)
        g, cands = unit(rng, 8), unit(rng, 7, 8)
        perm = rng.permutation(7)
        a = linkage_forward(g, cands, model.lp, model.cls).data
        b = linkage_forward(g, cands[perm], model.lp, model.cls).data
        np.testing.assert_allclose(a[perm], b, atol=1e-6)

    def test_matches_reference_tiny(self):
        model = tiny_model(dim=4, heads=1, head_dim=4, seed=7)
        rng = np.random.default_rng(7)
        g, cands = unit(rng, 4), unit(rng, 3, 4)
        np.testing.assert_allclose(linkage_forward(g, cands, model.lp, model.cls).data,
                                   ref_link(g, cands, model.lp, model.cls), atol=1e-5)

    def test_probabilities_valid(self):
        model = tiny_model(dtype=np.float32, seed=8)
        rng = np.random.default_rng(8)
        p = linkage_forward(unit(rng, 4, 8).astype(np.float32), unit(rng, 4, 9, 8).astype(np.float32),
                            model.lp, model.cls).data
        assert p.shape == (4, 9) and np.all((p >= 0) & (p <= 1))

    def test_empty_candidates(self):
        model = tiny_model()
        with pytest.raises(UsageError):
            linkage_forward(np.ones(8), np.ones((0, 8)), model.lp, model.cls)


class TestDistanceHead:
    def test_identical(self):
        p, e = distance_head(np.array([0.3, -1.2, 2.0]), np.array([0.3, -1.2, 2.0]))
        assert (float(p.data), float(e.data)) == pytest.approx((1.0, 0.0), abs=1e-7)

    def test_antipodal(self):
        p, e = distance_head(np.array([1.0, 0.0]), np.array([-3.0, 0.0]))
        assert (float(p.data), float(e.data)) == pytest.approx((0.0, 1.0), abs=1e-7)

    def test_orthogonal(self):
        p, e = distance_head(np.array([0.0, 2.0]), np.array([5.0, 0.0]))
        assert (float(p.data), float(e.data)) == pytest.approx((0.5, 0.5), abs=1e-7)

    def test_symmetric(self):
        rng = np.random.default_rng(9)
        a, b = rng.standard_normal((10, 6)), rng.standard_normal((10, 6))
        np.testing.assert_array_equal(distance_head(a, b)[0].data, distance_head(b, a)[0].data)

    def test_zero_norm(self):
        with pytest.raises(NumericError):
            distance_head(np.zeros(3), np.ones(3))


@pytest.fixture(scope="module")
def small_world():
    store = generate(SyntheticSpec(identities=8, min_samples=6, max_samples=8, dim=16, seed=5))
    return store, build_knn(store, 6, 3)


class TestFaceT:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_predict_shape_and_determinism(self, small_world, variant):
        store, graph = small_world
        model = FaceT.init(ModelConfig(dim=16, heads=2, head_dim=4, variant=variant), np.random.default_rng(0))
        p1, p2 = model.predict(store, graph), model.predict(store, graph)
        assert p1.shape == (store.n, 6)
        assert p1.tobytes() == p2.tobytes()
        assert np.all((p1 >= 0) & (p1 <= 1))
        rows = model.predict_query(store, graph, 3)
        assert len(rows) == 6 and [k for _, k, _ in rows] == graph.candidates_of(3).tolist()
        np.testing.assert_allclose([p for *_, p in rows], p1[3], atol=1e-6)

    def test_naive_is_clipped_cosine(self, small_world):
        store, graph = small_world
        model = FaceT.init(ModelConfig(dim=16, variant="naive"), np.random.default_rng(0))
        np.testing.assert_array_equal(model.predict(store, graph), np.clip(graph.hop1_sim, 0, 1))
        assert model.parameters() == {}

    def test_query_out_of_range(self, small_world):
        store, graph = small_world
        model = FaceT.init(ModelConfig(dim=16), np.random.default_rng(0))
        with pytest.raises(UsageError):
            model.predict_query(store, graph, store.n)

    def test_weight_decay_targets_matrices(self):
        model = tiny_model()
        decayed = model.decayed()
        assert "re.layer0.attn.wq" in decayed and "cls.hidden.weight" in decayed
        assert not any(k.endswith(("gamma", "beta", "bias", "slope")) for k in decayed)

    def test_checkpoint_roundtrip(self, small_world, tmp_path):
        store, graph = small_world
        model = FaceT.init(ModelConfig(dim=16, heads=2, head_dim=4, variant="only_lp", hidden=24),
                           np.random.default_rng(3))
        model.save(tmp_path / "m.fctw")
        back = FaceT.load(tmp_path / "m.fctw")
        assert back.config == model.config
        assert back.predict(store, graph).tobytes() == model.predict(store, graph).tobytes()


def test_full_model_gradient_check():
    """D=8, h=2, head dim 4, d_e=1, 3 candidates, 2 context rows, float64."""
    model = tiny_model()
    rng = np.random.default_rng(10)
    feats = unit(rng, 4, 8)
    # node 0 queries candidates 1..3; every node's context is two other nodes
    context = np.array([[1, 2], [0, 3], [3, 0], [2, 1]])
    labels = np.array([[1.0, 0.0, 1.0]])

    def loss():
        p = model.link_probs(feats, context, np.array([0]), np.array([[1, 2, 3]]))
        return tsum((p - labels) * (p - labels))

    params = list(model.parameters().values())
    assert grad_check(loss, params) <= 1e-3


def test_gradient_reaches_every_parameter():
    model = tiny_model()
    rng = np.random.default_rng(11)
    feats = unit(rng, 4, 8)
    context = np.array([[1, 2], [0, 3], [3, 0], [2, 1]])
    p = model.link_probs(feats, context, np.array([0, 1]), np.array([[1, 2, 3], [0, 2, 3]]))
    backward(tsum(p * Tensor(rng.standard_normal(p.shape))))
    for name, t in model.parameters().items():
        assert t.grad is not None and np.any(t.grad != 0), name
