import math
import unittest

import numpy as np

from tstnn.autodiff import ParamStore, Tensor
from tstnn.exceptions import ConfigError, ShapeError
from tstnn.transformer import (AttentionParams, ImprovedTransformerLayer, TwoStageBlock, TwoStageModule,
                               multi_head_attention, tstm_forward)


def store(seed=0):
    return ParamStore(seed, np.float64)


class TestMultiHeadAttention(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.params = AttentionParams.create(store(), 'attention', 8, 2)

    def test_single_position_passes_values(self):
        x = Tensor(self.rng.standard_normal((1, 8)))
        out = multi_head_attention(x, self.params)
        np.testing.assert_allclose(out.data, x.data @ self.params.w_v.data @ self.params.w_o.data, rtol=1e-12)

    def test_permutation_equivariant(self):
        x = self.rng.standard_normal((6, 8))
        perm = self.rng.permutation(6)
        out = multi_head_attention(Tensor(x), self.params).data
        permuted = multi_head_attention(Tensor(x[perm]), self.params).data
        np.testing.assert_allclose(permuted, out[perm], atol=1e-12)

    def test_hand_evaluated_two_heads(self):
        eye = np.eye(4)
        params = AttentionParams(*(Tensor(eye) for _ in range(4)), n_heads=2)
        x = Tensor(np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]))
        s = 1.0 / math.sqrt(2.0)
        w = math.exp(s) / (math.exp(s) + 1.0)
        expected = [[w, 0.0, 0.5, 0.0], [0.5, 0.0, w, 0.0]]
        np.testing.assert_allclose(multi_head_attention(x, params).data, expected, rtol=1e-12)

    def test_weights_are_distributions(self):
        x = Tensor(self.rng.standard_normal((3, 5, 8)))
        out, weights = multi_head_attention(x, self.params, return_weights=True)
        self.assertEqual(out.shape, (3, 5, 8))
        self.assertEqual(weights.shape, (3, 2, 5, 5))
        np.testing.assert_allclose(weights.data.sum(axis=-1), np.ones((3, 2, 5)), atol=1e-12)

    def test_heads_must_divide_width(self):
        with self.assertRaises(ConfigError):
            AttentionParams.create(store(), 'attention', 6, 4)

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            multi_head_attention(Tensor(np.ones((2, 5))), self.params)


class TestImprovedTransformerLayer(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.layer = ImprovedTransformerLayer(store(1), 'layer', 4, 2)

    def test_shape_preserved(self):
        for shape in ((5, 4), (3, 5, 4)):
            self.assertEqual(self.layer(Tensor(self.rng.standard_normal(shape))).shape, shape)

    def test_gru_makes_order_matter(self):
        x = self.rng.standard_normal((6, 4))
        perm = np.array([5, 4, 3, 2, 1, 0])
        out = self.layer(Tensor(x)).data
        permuted = self.layer(Tensor(x[perm])).data
        self.assertFalse(np.allclose(permuted, out[perm], atol=1e-6))

    def test_zero_feed_forward_normalises_mid(self):
        self.layer.w_1.data[...] = 0.0
        self.layer.b_1.data[...] = 0.0
        x = Tensor(self.rng.standard_normal((5, 4)))
        mid = self.layer.norm1(x + multi_head_attention(x, self.layer.attention))
        np.testing.assert_allclose(self.layer(x).data, self.layer.norm2(mid).data, rtol=1e-12)

    def test_feed_forward_width(self):
        self.assertEqual(self.layer.gru.output_size, 16)
        unidirectional = ImprovedTransformerLayer(store(), 'layer', 4, 2, bidirectional=False)
        self.assertEqual(unidirectional.gru.output_size, 16)

    def test_output_rows_are_normalised(self):
        out = self.layer(Tensor(self.rng.standard_normal((7, 4)))).data
        np.testing.assert_allclose(out.mean(axis=-1), np.zeros(7), atol=1e-9)


class TestTwoStageBlock(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.block = TwoStageBlock(store(2), 'block', 4, 2)

    def test_shape_preserved(self):
        x = Tensor(self.rng.standard_normal((2, 4, 3, 5)))
        self.assertEqual(self.block(x).shape, (2, 4, 3, 5))

    def test_local_stage_keeps_frames_apart(self):
        x = self.rng.standard_normal((1, 4, 3, 5))
        base = self.block.local_transform(Tensor(x)).data
        x[0, :, 1] += 1.0
        changed = self.block.local_transform(Tensor(x)).data
        np.testing.assert_allclose(changed[:, :, 0], base[:, :, 0], rtol=1e-12)
        np.testing.assert_allclose(changed[:, :, 2], base[:, :, 2], rtol=1e-12)
        self.assertFalse(np.allclose(changed[:, :, 1], base[:, :, 1]))

    def test_global_stage_mixes_frames(self):
        x = self.rng.standard_normal((1, 4, 3, 5))
        base = self.block(Tensor(x)).data
        x[0, :, 1] += 1.0
        changed = self.block(Tensor(x)).data
        self.assertFalse(np.allclose(changed[:, :, 0], base[:, :, 0]))

    def test_width_mismatch(self):
        with self.assertRaises(ConfigError):
            self.block(Tensor(np.ones((1, 3, 2, 2))))

    def test_rank_mismatch(self):
        with self.assertRaises(ShapeError):
            self.block(Tensor(np.ones((4, 2, 2))))


class TestTstm(unittest.TestCase):
    def test_no_blocks_is_identity(self):
        x = Tensor(np.random.default_rng(3).standard_normal((1, 4, 2, 3)))
        self.assertIs(tstm_forward(x, []), x)

    def test_blocks_applied_in_order(self):
        module = TwoStageModule(store(4), 'tstm', 4, 2, 2)
        x = Tensor(np.random.default_rng(4).standard_normal((1, 4, 2, 3)))
        expected = module.blocks[1](module.blocks[0](x))
        np.testing.assert_array_equal(module(x).data, expected.data)

    def test_mismatched_widths(self):
        s = store()
        blocks = [TwoStageBlock(s, 'a', 4, 2), TwoStageBlock(s, 'b', 2, 2)]
        with self.assertRaises(ConfigError):
            tstm_forward(Tensor(np.ones((1, 4, 2, 2))), blocks)


if __name__ == '__main__':
    unittest.main()
