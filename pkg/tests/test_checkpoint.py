import os
import struct
import tempfile
import unittest

import numpy as np

from tstnn.checkpoint import load_checkpoint, save_checkpoint
from tstnn.exceptions import CheckpointError
from tstnn.model import PRESETS, TSTNN


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'toy.ckpt')
        self.model = TSTNN(PRESETS['toy'], seed=3, dtype=np.float32)
        save_checkpoint(self.model, self.path)

    def tearDown(self):
        self.tmp.cleanup()

    def read(self):
        with open(self.path, 'rb') as f:
            return f.read()

    def rewrite(self, payload):
        with open(self.path, 'wb') as f:
            f.write(payload)

    def assertFails(self, field, **kwargs):
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(self.path, **kwargs)
        self.assertEqual(ctx.exception.field, field)

    def test_roundtrip_is_bit_exact(self):
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.config, self.model.config)
        self.assertEqual(list(loaded.params), list(self.model.params))
        for name, param in self.model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, param.data)

    def test_loaded_model_denoises_identically(self):
        noisy = np.random.default_rng(0).uniform(-0.5, 0.5, size=(1, 40)).astype(np.float32)
        loaded = load_checkpoint(self.path, dtype=np.float32)
        np.testing.assert_array_equal(loaded.enhance_batch(noisy).data, self.model.enhance_batch(noisy).data)

    def test_float64_compute(self):
        loaded = load_checkpoint(self.path, dtype=np.float64)
        self.assertEqual(loaded.params.dtype, np.float64)
        np.testing.assert_array_equal(loaded.params['decoder.conv_out.weight'].data,
                                      self.model.params['decoder.conv_out.weight'].data)

    def test_bad_magic(self):
        self.rewrite(b'RIFF' + self.read()[4:])
        self.assertFails('magic')

    def test_unsupported_version(self):
        payload = self.read()
        self.rewrite(payload[:4] + struct.pack('<I', 2) + payload[8:])
        self.assertFails('version')

    def test_truncated(self):
        self.rewrite(self.read()[:-3])
        self.assertFails(list(self.model.params)[-1])

    def test_missing_tensor(self):
        name, param = list(self.model.params.items())[-1]
        record = 4 + len(name.encode('utf-8')) + 4 + 4 * param.ndim + 4 * param.size
        self.rewrite(self.read()[:-record])
        self.assertFails(name)

    def test_config_mismatch(self):
        self.assertFails('config', expected_config=PRESETS['tiny'])

    def test_matching_config(self):
        loaded = load_checkpoint(self.path, expected_config=PRESETS['toy'])
        self.assertEqual(loaded.config, PRESETS['toy'])

    def test_unreadable_path(self):
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(os.path.join(self.tmp.name, 'absent.ckpt'))
        self.assertEqual(ctx.exception.field, 'path')


if __name__ == '__main__':
    unittest.main()
