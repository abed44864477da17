import numpy as np
import pytest

from crossrec import autodiff as ad
from crossrec.autodiff import Tensor, gradient_check
from crossrec.errors import ConfigError, DataError, NumericError
from crossrec.events import DatasetManifest, DomainSpec, Event, TrainingExample
from crossrec.model import (
    VARIANT_BASE,
    VARIANT_DSE,
    VARIANT_IB,
    VARIANTS,
    ModelConfig,
    ModelParameters,
    cross_stack,
    encode_base,
    encode_domain_specific,
    encode_ib,
    encode_tokens,
    featurize_batch,
    featurize_event,
    merge_and_score,
    pool_weighted,
    pool_weights,
    score_candidates,
    target_tower,
    target_tower_batch,
    user_embedding,
)
from crossrec.pipeline import assemble_batch


def manifest():
    return DatasetManifest(
        domains=(DomainSpec(0, "a", 20, (4,)), DomainSpec(1, "b", 15, (3,)))
    )


def config(**kw):
    base = dict(f=8, layers=2, heads=2, id_emb_dim=4, cat_emb_dim=3, domain_emb_dim=3,
                positional_capacity=12)
    base.update(kw)
    return ModelConfig(**base)


def make_example(user_id, n, seed=None, domains=None):
    rng = np.random.default_rng(user_id if seed is None else seed)
    ctx = []
    for i in range(n):
        d = int(rng.integers(0, 2)) if domains is None else domains[i]
        vocab = 20 if d == 0 else 15
        card = 4 if d == 0 else 3
        ctx.append(Event(domain=d, item_id=int(rng.integers(0, vocab)), ts_ms=i,
                         intent=int(rng.integers(0, 2)), cats=(int(rng.integers(0, card)),),
                         prop=float(rng.normal())))
    label = Event(domain=0, item_id=int(rng.integers(0, 20)), ts_ms=n, intent=1, cats=(1,), prop=0.3)
    return TrainingExample(user_id=user_id, context=ctx, label=label)


def make_batch(sizes, **kw):
    return assemble_batch([make_example(u, n, **kw) for u, n in enumerate(sizes)], manifest())


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            config(f=10, heads=3).validate()

    def test_variant_checked(self):
        with pytest.raises(ConfigError):
            config(variant="Fancy").validate()

    def test_layer_split(self):
        assert config(layers=2).private_layers() == 1
        assert config(layers=2).shared_layers() == 1
        assert config(layers=1).private_layers() == 1
        assert config(layers=1).shared_layers() == 0
        assert config(layers=5).private_layers() == 2
        assert config(layers=5).shared_layers() == 3


class TestFeaturize:
    def test_output_shape(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        e = Event(domain=0, item_id=3, ts_ms=0, intent=1, cats=(2,), prop=0.5)
        assert featurize_event(e, p, 0).shape == (8,)

    def test_domain_changes_latent(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        a = featurize_event(Event(0, 3, 0, 1, (2,), 0.5), p, 0)
        b = featurize_event(Event(1, 3, 0, 1, (2,), 0.5), p, 0)
        assert not np.allclose(a.data, b.data)

    def test_out_of_vocab_rejected(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        with pytest.raises(DataError):
            featurize_event(Event(1, 15, 0, 1, (2,), 0.0), p, 0)

    def test_position_capacity_enforced(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        with pytest.raises(ConfigError):
            featurize_event(Event(0, 3, 0, 1, (2,), 0.0), p, 12)

    def test_property_enters_context_latent(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        a = featurize_event(Event(0, 3, 0, 1, (2,), 0.0), p, 0)
        b = featurize_event(Event(0, 3, 0, 1, (2,), 5.0), p, 0)
        assert not np.allclose(a.data, b.data)


class TestEncoders:
    def test_shapes_all_variants(self):
        batch = make_batch([5, 3, 6])
        for variant in VARIANTS:
            p = ModelParameters.init(config(variant=variant), manifest(), seed=1)
            h = featurize_batch(batch, p)
            out = encode_tokens(h, batch.domain, batch.real, p)
            assert out.shape == h.shape

    def test_single_token_context(self):
        batch = make_batch([1])
        for variant in VARIANTS:
            p = ModelParameters.init(config(variant=variant), manifest(), seed=1)
            h = user_embedding(batch, p)
            assert h.shape == (1, 8)
            assert np.isfinite(h.data).all()

    def test_all_pad_errors(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        x = Tensor(np.zeros((1, 3, 8)))
        with pytest.raises(NumericError):
            encode_base(x, np.zeros((1, 3), bool), p)

    def test_pad_rows_never_leak_into_real(self):
        batch_a = make_batch([4, 6])  # example 0 padded to 6
        p = ModelParameters.init(config(), manifest(), seed=2)
        h = featurize_batch(batch_a, p)
        out_a = encode_base(h, batch_a.real, p).data
        # poison the pad latents directly
        poisoned = h.data.copy()
        poisoned[0, 4:, :] = 1234.5
        out_b = encode_base(Tensor(poisoned), batch_a.real, p).data
        assert np.array_equal(out_a[0, :4], out_b[0, :4])

    def test_private_stage_isolates_domains(self):
        # layers=1 -> no shared blocks; DSE output is the private stage alone
        domains = [0, 1, 0, 1, 0]
        ex = make_example(0, 5, seed=3, domains=domains)
        p = ModelParameters.init(config(variant=VARIANT_DSE, layers=1), manifest(), seed=4)
        batch = assemble_batch([ex], manifest())
        h = featurize_batch(batch, p)
        base_out = encode_domain_specific(h, batch.domain, batch.real, p).data

        mutated = h.data.copy()
        mutated[0, [1, 3], :] = -7.5  # replace domain-1 latents
        out2 = encode_domain_specific(Tensor(mutated), batch.domain, batch.real, p).data
        a_positions = [0, 2, 4]
        assert np.array_equal(base_out[0, a_positions], out2[0, a_positions])
        assert not np.array_equal(base_out[0, [1, 3]], out2[0, [1, 3]])

    def test_dse_single_domain_context(self):
        ex = make_example(0, 4, seed=5, domains=[0, 0, 0, 0])
        p = ModelParameters.init(config(variant=VARIANT_DSE), manifest(), seed=6)
        batch = assemble_batch([ex], manifest())
        out = user_embedding(batch, p)
        assert np.isfinite(out.data).all()

    def test_ib_isolation_when_exchange_disabled(self):
        domains = [0, 1, 1, 0, 1, 0]
        ex = make_example(0, 6, seed=7, domains=domains)
        p = ModelParameters.init(config(variant=VARIANT_IB), manifest(), seed=8)
        batch = assemble_batch([ex], manifest())
        h = featurize_batch(batch, p)
        out1, _ = encode_ib(h, batch.domain, batch.real, p, exchange=False)

        mutated = h.data.copy()
        mutated[0, [1, 2, 4], :] = 99.0
        out2, _ = encode_ib(Tensor(mutated), batch.domain, batch.real, p, exchange=False)
        a_positions = [0, 3, 5]
        assert np.array_equal(out1.data[0, a_positions], out2.data[0, a_positions])

    def test_ib_exchange_carries_cross_domain_signal(self):
        domains = [0, 1, 1, 0, 1, 0]
        ex = make_example(0, 6, seed=7, domains=domains)
        p = ModelParameters.init(config(variant=VARIANT_IB), manifest(), seed=8)
        batch = assemble_batch([ex], manifest())
        h = featurize_batch(batch, p)
        out1, _ = encode_ib(h, batch.domain, batch.real, p, exchange=True)
        mutated = h.data.copy()
        mutated[0, [1, 2, 4], :] = 99.0
        out2, _ = encode_ib(Tensor(mutated), batch.domain, batch.real, p, exchange=True)
        a_positions = [0, 3, 5]
        assert not np.array_equal(out1.data[0, a_positions], out2.data[0, a_positions])

    def test_ib_zeroed_value_projections_restore_isolation(self):
        # the only cross-domain path is attention over the exchanged IB values
        domains = [0, 1, 1, 0]
        ex = make_example(0, 4, seed=9, domains=domains)
        p = ModelParameters.init(config(variant=VARIANT_IB), manifest(), seed=10)
        for block in p.ib_blocks_a + p.ib_blocks_c:
            block.wv.data = np.zeros_like(block.wv.data)
            block.bv.data = np.zeros_like(block.bv.data)
        batch = assemble_batch([ex], manifest())
        h = featurize_batch(batch, p)
        out1, _ = encode_ib(h, batch.domain, batch.real, p, exchange=True)
        mutated = h.data.copy()
        mutated[0, [1, 2], :] = -3.25
        out2, _ = encode_ib(Tensor(mutated), batch.domain, batch.real, p, exchange=True)
        a_positions = [0, 3]
        assert np.array_equal(out1.data[0, a_positions], out2.data[0, a_positions])


class TestPooling:
    def test_identical_tokens_pool_to_value(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        v = np.random.default_rng(0).normal(0, 1, 8)
        tokens = Tensor(np.tile(v, (1, 5, 1)))
        real = np.ones((1, 5), bool)
        out = pool_weighted(tokens, real, p)
        np.testing.assert_allclose(out.data[0], v, atol=1e-12)

    def test_single_token(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        tokens = Tensor(np.random.default_rng(1).normal(0, 1, (1, 1, 8)))
        out = pool_weighted(tokens, np.ones((1, 1), bool), p)
        np.testing.assert_allclose(out.data[0], tokens.data[0, 0])

    def test_weights_distribution(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        tokens = Tensor(np.random.default_rng(2).normal(0, 1, (3, 6, 8)))
        real = np.ones((3, 6), bool)
        real[0, 4:] = False
        real[1, 1:] = False
        w = pool_weights(tokens, real, p).data
        assert (w[~real] == 0.0).all()
        assert (w[real] >= 0.0).all()
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_all_pad_errors(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        tokens = Tensor(np.zeros((1, 3, 8)))
        with pytest.raises(NumericError):
            pool_weighted(tokens, np.zeros((1, 3), bool), p)

    def test_pad_extension_invariance(self):
        ex = make_example(0, 5, seed=11)
        p = ModelParameters.init(config(), manifest(), seed=12)
        alone = assemble_batch([ex], manifest())
        padded = assemble_batch([ex, make_example(1, 9, seed=13)], manifest())
        h1 = user_embedding(alone, p).data[0]
        h2 = user_embedding(padded, p).data[0]
        assert np.abs(h1 - h2).max() < 1e-9


class TestTargetTower:
    def test_zero_cross_layers_are_identity(self):
        p = ModelParameters.init(config(cross_layers=2), manifest(), seed=0)
        for w, b in zip(p.cross_w, p.cross_b):
            w.data = np.zeros_like(w.data)
            b.data = np.zeros_like(b.data)
        c0 = Tensor(np.random.default_rng(3).normal(0, 1, (4, 8)))
        out = cross_stack(c0, p)
        np.testing.assert_array_equal(out.data, c0.data)

    def test_cross_closed_form(self):
        # W c0 + b == 1 everywhere -> c1 = c0 * 1 + c0 = 2 c0
        p = ModelParameters.init(config(cross_layers=1), manifest(), seed=0)
        p.cross_w[0].data = np.zeros_like(p.cross_w[0].data)
        p.cross_b[0].data = np.ones_like(p.cross_b[0].data)
        c0 = Tensor(np.array([[1.0, 2.0, 0.5, -1.0, 3.0, 0.0, 2.5, -2.0]]))
        out = cross_stack(c0, p)
        np.testing.assert_allclose(out.data, 2.0 * c0.data)

    def test_output_dim(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        t = target_tower(Event(1, 3, 0, 1, (2,), 0.9), p)
        assert t.shape == (8,)

    def test_property_excluded_from_target(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        a = target_tower(Event(0, 3, 0, 1, (2,), 0.0), p)
        b = target_tower(Event(0, 3, 0, 1, (2,), 123.0), p)
        np.testing.assert_array_equal(a.data, b.data)

    def test_unknown_candidate_cats_use_sentinel(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        cats = np.full((2, 1), -1, np.int64)
        out = target_tower_batch(np.array([0, 1]), np.array([3, 7]), cats, p)
        assert np.isfinite(out.data).all()


class TestMergeAndScore:
    def test_elementwise_sum(self):
        p = ModelParameters.init(config(f=2, heads=1, layers=1), manifest(), seed=0)
        merged, _, _, _ = merge_and_score(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]), p)
        np.testing.assert_array_equal(merged.data, [[4.0, 6.0]])

    def test_zero_heads(self):
        p = ModelParameters.init(config(), manifest(), seed=0)
        for name in ("score_w1", "score_b1", "score_w2", "score_b2", "dom_w", "dom_b"):
            t = getattr(p, name)
            t.data = np.zeros_like(t.data)
        h = Tensor(np.random.default_rng(0).normal(0, 1, (3, 8)))
        _, score, logits, _ = merge_and_score(h, h, p)
        assert (score.data == 0).all()
        assert (logits.data == 0).all()

    def test_candidate_permutation_equivariance(self):
        p = ModelParameters.init(config(), manifest(), seed=5)
        rng = np.random.default_rng(6)
        h = Tensor(rng.normal(0, 1, (2, 8)))
        t = Tensor(rng.normal(0, 1, (5, 8)))
        perm = np.array([3, 0, 4, 1, 2])
        s1 = score_candidates(h, t, p).data
        s2 = score_candidates(h, Tensor(t.data[perm]), p).data
        assert np.array_equal(s1[:, perm], s2)


class TestFullModelGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_small_gradcheck(self, variant):
        from crossrec.training import multitask_loss

        batch = make_batch([3, 2])
        cfg = config(variant=variant, f=4, heads=1, layers=1, id_emb_dim=2,
                     cat_emb_dim=2, domain_emb_dim=2, positional_capacity=8,
                     cross_layers=1)
        p = ModelParameters.init(cfg, manifest(), seed=0)

        def loss():
            total, _ = multitask_loss(batch, p, 1.0, 0.1)
            return total

        # eps at the central-difference sweet spot: below it, float64 roundoff
        # over the 1e-8 denominator floor dominates on near-zero gradients
        err = gradient_check(loss, p.tensors(), eps=1e-4)
        assert err < 1e-4, f"{variant}: {err}"
