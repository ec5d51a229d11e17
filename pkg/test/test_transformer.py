import math

import numpy as np
import pytest

from objtx.core.models.models import Mode, Shot, SourceClass
from objtx.core.numerics.gradcheck import check_gradients
from objtx.core.numerics.tensor import Tensor
from objtx.core.tracks.track_model import count_tokens
from objtx.core.transformer.embedding import (
    Corruption,
    assign_instance_slots,
    assign_shot_slots,
    batch_tokens,
    embed_tokens,
    prepare_span,
    temporal_embedding,
    temporal_features,
)
from objtx.core.transformer.encoder import attention, encode, encode_batch
from objtx.core.transformer.heads import head_compat, head_fusion, head_mask, head_task
from objtx.core.transformer.model import cls_vectors, encode_spans
from objtx.utils.errors import CapacityError, DataError, DimensionError, UsageError
from test.helpers import make_span, make_track, small_span

ATOL = 1e-10


@pytest.fixture
def tokens(eval_params, eval_config, float64):
    return embed_tokens(prepare_span(small_span(n_tracks=3, dets=4), eval_config), eval_params, eval_config)


class TestEmbedding:
    def test_cls_comes_first(self, tokens, eval_params):
        assert tokens.n_tokens == count_tokens(small_span(n_tracks=3, dets=4)) == 13
        assert tokens.provenance[0] is None
        np.testing.assert_array_equal(tokens.embeddings.data[0], eval_params["embed.E_cls"].data)
        assert tokens.attention_mask.all()

    def test_empty_span_is_cls_only(self, eval_params, eval_config, float64):
        tokens = embed_tokens(make_span([]), eval_params, eval_config)
        assert tokens.n_tokens == 1
        assert tokens.components == {}

    def test_components_add_up(self, tokens, eval_params):
        parts = sum(tokens.components.values()) + eval_params["embed.b"].data
        np.testing.assert_allclose(tokens.embeddings.data[1:], parts, atol=ATOL)
        assert set(tokens.components) == {"feat", "spatial", "temporal", "instance", "shot"}

    def test_eval_slots_follow_first_appearance(self):
        span = small_span(n_tracks=3)
        slots = assign_instance_slots(span.tracks, 8, Mode.EVAL, None)
        # track 2 starts at 4 s, before track 1 (18 s)
        assert slots == {0: 0, 2: 1, 1: 2}

    def test_train_slots_are_random_injections(self):
        span = small_span(n_tracks=3)
        draws = [assign_instance_slots(span.tracks, 8, Mode.TRAIN, np.random.default_rng(s)) for s in range(20)]
        for slots in draws:
            assert len(set(slots.values())) == 3
            assert all(0 <= v < 8 for v in slots.values())
        assert len({tuple(sorted(d.items())) for d in draws}) > 1

    def test_train_slots_group_tokens_by_track(self, eval_params, eval_config, float64):
        span = prepare_span(small_span(n_tracks=3, dets=4), eval_config)
        for seed in range(100):
            tokens = embed_tokens(span, eval_params, eval_config, np.random.default_rng(seed), Mode.TRAIN)
            slots_of = {}
            for ref, slot in zip(tokens.provenance[1:], tokens.instance_slots):
                slots_of.setdefault(ref.track_id, set()).add(int(slot))
            assert all(len(slots) == 1 for slots in slots_of.values())
            assert len(set.union(*slots_of.values())) == len(slots_of) == 3

    def test_tied_instance_rows_make_slot_draws_irrelevant(self, eval_params, eval_config, float64):
        params = eval_params.copy()
        table = params["embed.E_instance"].data
        params.registry.replace("embed.E_instance", np.tile(table[0], (table.shape[0], 1)))
        span = prepare_span(small_span(n_tracks=3, dets=4), eval_config)
        draws = [embed_tokens(span, params, eval_config, np.random.default_rng(s), Mode.TRAIN) for s in range(10)]
        assert len({tuple(t.instance_slots) for t in draws}) > 1
        first = encode(draws[0], params).data
        for tokens in draws[1:]:
            np.testing.assert_allclose(encode(tokens, params).data, first, atol=ATOL)

    def test_train_slots_need_rng(self):
        with pytest.raises(UsageError):
            assign_instance_slots(small_span().tracks, 8, Mode.TRAIN, None)

    def test_too_many_instances(self, eval_params, eval_config, float64):
        tracks = [make_track(i, [float(i), i + 0.5], cell=i % 9) for i in range(9)]
        with pytest.raises(CapacityError):
            embed_tokens(make_span(tracks), eval_params, eval_config)

    def test_too_many_shots(self):
        shots = [Shot(shot_id=i, start=6.0 * i, end=6.0 * (i + 1)) for i in range(5)]
        with pytest.raises(CapacityError):
            assign_shot_slots(make_span([], shots), 4)

    def test_shot_slots_by_relative_order(self):
        shots = [Shot(shot_id=7, start=10.0, end=30.0), Shot(shot_id=3, start=0.0, end=10.0)]
        assert assign_shot_slots(make_span([], shots), 4) == {3: 0, 7: 1}

    def test_unknown_shot(self, eval_params, eval_config, float64):
        span = make_span([make_track(0, [1.0, 2.0], shot_id=5)])
        with pytest.raises(DataError):
            embed_tokens(span, eval_params, eval_config)

    def test_temporal_features(self):
        np.testing.assert_allclose(temporal_features(0.0, 0.0, 60.0), [0.0, 1.0, -0.5])
        np.testing.assert_allclose(temporal_features(30.0, 0.0, 60.0), [0.5, 0.5, 0.0])
        with pytest.raises(UsageError):
            temporal_features(61.0, 0.0, 60.0)

    def test_temporal_embedding_with_selector_rows(self, float64):
        W_pos = Tensor(np.eye(3, 5))
        np.testing.assert_allclose(temporal_embedding(40.0, 10.0, 60.0, W_pos).data, [0.5, 0.5, 0.0, 0.0, 0.0])
        assert temporal_embedding(10.0, 10.0, 60.0, W_pos).shape == (5,)
        with pytest.raises(UsageError):
            temporal_embedding(5.0, 10.0, 60.0, W_pos)

    def test_masked_but_kept_token(self, tokens, eval_params, eval_config):
        span = prepare_span(small_span(n_tracks=3, dets=4), eval_config)
        kept = Corruption(masked=frozenset({(0, 1)}), learned=frozenset(), replaced={})
        masked = embed_tokens(span, eval_params, eval_config, corruption=kept)
        assert masked.masked_positions() == [2]
        np.testing.assert_array_equal(masked.embeddings.data, tokens.embeddings.data)

    def test_learned_mask_vector(self, tokens, eval_params, eval_config):
        span = prepare_span(small_span(n_tracks=3, dets=4), eval_config)
        learned = Corruption(masked=frozenset({(1, 0)}), learned=frozenset({(1, 0)}), replaced={})
        masked = embed_tokens(span, eval_params, eval_config, corruption=learned)
        pos = masked.positions_of(1)[0]
        expected = eval_params["embed.z_mask"].data @ eval_params["embed.W_feat"].data
        np.testing.assert_allclose(masked.components["feat"][pos - 1], expected, atol=ATOL)
        others = [i for i in range(1, masked.n_tokens) if i != pos]
        np.testing.assert_allclose(masked.embeddings.data[others], tokens.embeddings.data[others], atol=ATOL)

    def test_replaced_feature(self, tokens, eval_params, eval_config):
        span = prepare_span(small_span(n_tracks=3, dets=4), eval_config)
        z = np.ones(eval_config.D_z)
        swapped = embed_tokens(span, eval_params, eval_config, corruption=Corruption(frozenset({(2, 3)}), frozenset(), {(2, 3): z}))
        pos = swapped.positions_of(2)[3]
        np.testing.assert_allclose(swapped.components["feat"][pos - 1], z @ eval_params["embed.W_feat"].data, atol=ATOL)

    def test_prepare_drops_objects_and_truncates(self, eval_config):
        span = small_span(n_tracks=2, dets=4)
        obj = make_track(5, [20.0, 21.0], shot_id=1, cell=6, role=None, source=SourceClass.OBJECT)
        span = span.model_copy(update={"tracks": span.tracks + [obj]})
        assert [t.track_id for t in prepare_span(span, eval_config).tracks] == [0, 1]
        capped = prepare_span(span, eval_config.model_copy(update={"token_cap": 6}))
        assert count_tokens(capped) <= 6


class TestEncoder:
    def test_permutation_equivariance(self, tokens, eval_params):
        hidden = encode(tokens, eval_params).data
        order = list(np.random.default_rng(1).permutation(np.arange(1, tokens.n_tokens)))
        permuted = encode(tokens.permuted(order), eval_params).data
        np.testing.assert_allclose(permuted[0], hidden[0], atol=ATOL)
        np.testing.assert_allclose(permuted[1:], hidden[order], atol=ATOL)

    def test_padding_independence(self, tokens, eval_params):
        hidden = encode(tokens, eval_params).data
        padded = encode(tokens.padded(tokens.n_tokens + 5), eval_params).data
        np.testing.assert_allclose(padded[: tokens.n_tokens], hidden, atol=ATOL)

    def test_batch_matches_single(self, tokens, eval_params, eval_config):
        short = embed_tokens(prepare_span(small_span(n_tracks=1, dets=2), eval_config), eval_params, eval_config)
        batch = encode_batch(batch_tokens([short, tokens]), eval_params).data
        np.testing.assert_allclose(batch[0, : short.n_tokens], encode(short, eval_params).data, atol=ATOL)
        np.testing.assert_allclose(batch[1], encode(tokens, eval_params).data, atol=ATOL)

    def test_eval_is_deterministic(self, tokens, params, model_config, float64):
        first = encode(tokens, params, model_config, Mode.EVAL).data
        second = encode(tokens, params, model_config, Mode.EVAL).data
        np.testing.assert_array_equal(first, second)

    def test_train_dropout_uses_rng(self, tokens, params, model_config, float64):
        a = encode(tokens, params, model_config, Mode.TRAIN, np.random.default_rng(0)).data
        b = encode(tokens, params, model_config, Mode.TRAIN, np.random.default_rng(1)).data
        c = encode(tokens, params, model_config, Mode.TRAIN, np.random.default_rng(0)).data
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, c)

    def test_attention_rejects_bad_shapes(self, float64):
        q = Tensor(np.ones((2, 4)))
        with pytest.raises(DimensionError):
            attention(q, Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(DimensionError):
            attention(q, q, q, mask=np.array([True, True, True]))
        with pytest.raises(UsageError):
            attention(q, q, q, mask=np.array([False, False]))

    def test_attention_to_a_single_key_returns_its_value(self, float64):
        rng = np.random.default_rng(3)
        Q, K, V = (Tensor(rng.standard_normal(shape)) for shape in ((2, 4), (3, 4), (3, 5)))
        out = attention(Q, K, V, mask=np.array([False, True, False])).data
        np.testing.assert_allclose(out, np.tile(V.data[1], (2, 1)), atol=ATOL)

    def test_attention_over_identical_keys_is_the_value_mean(self, float64):
        rng = np.random.default_rng(4)
        Q, V = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((5, 2)))
        K = Tensor(np.tile(rng.standard_normal(4), (5, 1)))
        np.testing.assert_allclose(attention(Q, K, V).data, np.tile(V.data.mean(axis=0), (3, 1)), atol=ATOL)

    def test_attention_by_hand(self, float64):
        V = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = attention(Tensor(np.eye(2)), Tensor(np.eye(2)), Tensor(V)).data
        # each query scores its own key 1/sqrt(2) and the other 0
        p = math.exp(1.0 / math.sqrt(2.0)) / (math.exp(1.0 / math.sqrt(2.0)) + 1.0)
        expected = np.array([p * V[0] + (1.0 - p) * V[1], (1.0 - p) * V[0] + p * V[1]])
        np.testing.assert_allclose(out, expected, atol=ATOL)

    def test_encode_spans(self, eval_params, float64):
        spans = [small_span(n_tracks=2), small_span(n_tracks=3)]
        hidden, sequences = encode_spans(spans, eval_params)
        assert hidden.shape == (2, max(s.n_tokens for s in sequences), eval_params.config.hidden)
        assert cls_vectors(hidden).shape == (2, eval_params.config.hidden)


class TestHeads:
    def test_mask_head_is_a_distribution(self, tokens, eval_params):
        hidden = encode(tokens, eval_params)
        probs, inner = head_mask(hidden[1:], eval_params, return_hidden=True)
        assert probs.shape == (tokens.n_tokens - 1, eval_params.config.d_label)
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0)
        assert inner.shape == (tokens.n_tokens - 1, eval_params.config.hidden)
        assert head_mask(hidden[1], eval_params).shape == (eval_params.config.d_label,)

    def test_task_and_compat_shapes(self, tokens, eval_params, rng):
        v_cls = encode(tokens, eval_params)[0]
        assert head_task(v_cls, eval_params).shape == (1,)
        assert head_compat(v_cls, eval_params).shape == (eval_params.config.hidden,)
        params = eval_params.copy()
        params.reset_task_head(3, rng)
        assert head_task(v_cls, params).shape == (3,)
        assert head_task(v_cls, eval_params).shape == (1,)

    def test_zero_task_head_gives_zero_logits(self, tokens, eval_params, rng):
        params = eval_params.copy()
        params.reset_task_head(3, rng)
        params.registry.replace("head.task.W", np.zeros(params["head.task.W"].shape))
        params.registry.replace("head.task.b", np.zeros(3))
        v_cls = encode(tokens, params)[0]
        np.testing.assert_array_equal(head_task(v_cls, params).data, np.zeros(3))

    def test_zero_final_mask_layer_is_uniform(self, tokens, eval_params):
        params = eval_params.copy()
        for name in ("head.mask.W_2", "head.mask.b_2"):
            params.registry.replace(name, np.zeros(params[name].shape))
        probs = head_mask(encode(tokens, params)[1:], params).data
        np.testing.assert_allclose(probs, 1.0 / params.config.d_label, atol=ATOL)

    def test_task_head_gradients(self, eval_params, rng, float64):
        params = eval_params.copy()
        params.reset_task_head(3, rng)
        v_cls = Tensor(rng.standard_normal(params.config.hidden), requires_grad=True)
        w = Tensor(rng.standard_normal(3))
        tensors = [v_cls, params["head.task.W"], params["head.task.b"]]
        for r in check_gradients(lambda: (head_task(v_cls, params) * w).sum(), tensors, h=1e-5, tol=1e-4):
            assert r.passed, f"{r.name}: {r.max_rel_err:.2e} at {r.worst_index}"

    def test_untrained_fusion_reproduces_short_term(self, eval_params, rng, float64):
        params = eval_params.copy()
        d_label = params.config.d_label
        params.add_fusion_head(d_label, rng)
        short_term = Tensor(rng.standard_normal((3, d_label)))
        context = Tensor(np.zeros((3, params.config.hidden)))
        np.testing.assert_allclose(head_fusion(context, short_term, params).data, short_term.data, atol=ATOL)
        with pytest.raises(UsageError):
            params.add_fusion_head(d_label, rng)
        assert "head.fusion.W" not in eval_params
