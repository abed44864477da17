import numpy as np
import pytest

from crossrec import autodiff as ad
from crossrec.attention import (
    BlockParams,
    attention_mix,
    full_visibility_mask,
    masked_multi_head_attention,
    same_domain_mask,
    transformer_block,
    validate_mask,
)
from crossrec.autodiff import Tensor, gradient_check
from crossrec.errors import NumericError


def _identity_params(rng, f, heads):
    """Projections that pass values straight through one head group."""
    p = BlockParams.init(rng, f, 2 * f)
    eye = np.eye(f)
    p.wq.data, p.wk.data, p.wv.data, p.wo.data = eye, eye.copy(), eye.copy(), eye.copy()
    for b in (p.bq, p.bv, p.bo):
        b.data = np.zeros(f)
    return p


class TestAttentionMix:
    def test_identical_values_average_to_value(self):
        # every position holds the same vector: attention output must equal it
        f, m = 8, 5
        rng = np.random.default_rng(0)
        p = _identity_params(rng, f, 2)
        v = rng.normal(0, 1, f)
        x = Tensor(np.tile(v, (1, m, 1)))
        permit = np.ones((1, m, m), bool)
        out = attention_mix(x, permit, p, head_count=2)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_self_only_mask_returns_own_value(self):
        f, m = 8, 4
        rng = np.random.default_rng(1)
        p = _identity_params(rng, f, 2)
        x = Tensor(rng.normal(0, 1, (1, m, f)))
        permit = np.eye(m, dtype=bool)[None]
        out = attention_mix(x, permit, p, head_count=2)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_output_shape(self):
        rng = np.random.default_rng(2)
        p = BlockParams.init(rng, 32, 64)
        x = Tensor(rng.normal(0, 1, (2, 5, 32)))
        permit = np.ones((2, 5, 5), bool)
        out = attention_mix(x, permit, p, head_count=4)
        assert out.shape == (2, 5, 32)

    def test_all_permitted_equals_unmasked_bitwise(self):
        rng = np.random.default_rng(3)
        p = BlockParams.init(rng, 16, 32)
        x = rng.normal(0, 1, (2, 6, 16))
        permit = np.ones((2, 6, 6), bool)
        real = np.ones((2, 6), bool)
        with_mask = masked_multi_head_attention(Tensor(x), permit, p, 2, row_real=real)
        without = masked_multi_head_attention(Tensor(x), None, p, 2, row_real=real)
        assert np.array_equal(with_mask.data, without.data)

    def test_head_count_must_divide_width(self):
        rng = np.random.default_rng(4)
        p = BlockParams.init(rng, 16, 32)
        x = Tensor(rng.normal(0, 1, (1, 3, 16)))
        with pytest.raises(ValueError):
            attention_mix(x, np.ones((1, 3, 3), bool), p, head_count=3)

    def test_real_row_with_no_permitted_key_raises(self):
        permit = np.zeros((1, 3, 3), bool)
        permit[0, 0, 0] = True
        real = np.ones((1, 3), bool)
        with pytest.raises(NumericError):
            validate_mask(permit, real)

    def test_padding_rows_may_see_nothing(self):
        permit = np.zeros((1, 2, 2), bool)
        permit[0, 0, 0] = True
        real = np.array([[True, False]])
        validate_mask(permit, real)  # no error

    def test_gradients(self):
        rng = np.random.default_rng(5)
        p = BlockParams.init(rng, 8, 16)
        x = Tensor(rng.normal(0, 1, (2, 4, 8)), requires_grad=True)
        for t in p.tensors():
            t.requires_grad = True
        permit = rng.random((2, 4, 4)) < 0.8
        permit |= np.eye(4, dtype=bool)[None]
        probe = rng.normal(0, 1, (2, 4, 8))  # random functional, non-degenerate gradients

        def loss():
            real = np.ones((2, 4), bool)
            return (transformer_block(x, permit, real, p, 2) * probe).sum()

        assert gradient_check(loss, [x] + p.tensors()) < 1e-4


class TestTransformerBlock:
    def test_shape_preserved(self):
        rng = np.random.default_rng(6)
        p = BlockParams.init(rng, 32, 64)
        x = Tensor(rng.normal(0, 1, (3, 7, 32)))
        real = np.ones((3, 7), bool)
        out = transformer_block(x, full_visibility_mask(real), real, p, 4)
        assert out.shape == (3, 7, 32)

    def test_pad_keys_never_influence_real_rows(self):
        rng = np.random.default_rng(7)
        p = BlockParams.init(rng, 16, 32)
        base = rng.normal(0, 1, (1, 5, 16))
        real = np.array([[True, True, True, False, False]])
        permit = full_visibility_mask(real)

        out_a = transformer_block(Tensor(base.copy()), permit, real, p, 2).data
        junk = base.copy()
        junk[0, 3:] = 99.0  # perturb pad rows only
        out_b = transformer_block(Tensor(junk), permit, real, p, 2).data
        assert np.array_equal(out_a[0, :3], out_b[0, :3])


class TestMaskBuilders:
    def test_full_visibility(self):
        real = np.array([[True, True, False]])
        m = full_visibility_mask(real)
        assert m.shape == (1, 3, 3)
        # real rows see all real keys; the pad row sees nothing
        expected = np.array([[True, True, False], [True, True, False], [False, False, False]])[None]
        assert np.array_equal(m, expected)

    def test_same_domain(self):
        domains = np.array([[0, 1, 0, 1]])
        real = np.ones((1, 4), bool)
        m = same_domain_mask(domains, real)
        assert np.array_equal(m[0, 0], [True, False, True, False])
        assert np.array_equal(m[0, 1], [False, True, False, True])

    def test_same_domain_excludes_pad(self):
        domains = np.array([[0, 0, 2]])  # pad slot carries sentinel domain
        real = np.array([[True, True, False]])
        m = same_domain_mask(domains, real)
        assert np.array_equal(m[0, 0], [True, True, False])

    def test_single_domain_selector(self):
        domains = np.array([[0, 1, 0]])
        real = np.ones((1, 3), bool)
        m = same_domain_mask(domains, real, domain=1)
        # only domain-1 rows attend, and only to domain-1 keys
        assert np.array_equal(m[0, 1], [False, True, False])
        assert not m[0, 0].any()
        assert not m[0, 2].any()
