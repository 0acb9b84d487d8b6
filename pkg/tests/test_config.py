import os
import unittest
from unittest import mock

from config.env_vars import EnvVariableInvalid, env_flag, env_var


class TestEnvVars(unittest.TestCase):
    def test_default_when_unset(self):
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(env_var('TSTNN_LOG_EVERY', 10, int), 10)

    def test_cast(self):
        with mock.patch.dict(os.environ, {'TSTNN_LOG_EVERY': '25'}):
            self.assertEqual(env_var('TSTNN_LOG_EVERY', 10, int), 25)

    def test_bad_cast(self):
        with mock.patch.dict(os.environ, {'TSTNN_LOG_EVERY': 'often'}):
            with self.assertRaises(EnvVariableInvalid):
                env_var('TSTNN_LOG_EVERY', 10, int)

    def test_choices(self):
        with mock.patch.dict(os.environ, {'TSTNN_PRECISION': 'Float64'}):
            self.assertEqual(env_var('TSTNN_PRECISION', 'float32', str.lower, ('float32', 'float64')), 'float64')
        with mock.patch.dict(os.environ, {'TSTNN_PRECISION': 'float16'}):
            with self.assertRaises(EnvVariableInvalid):
                env_var('TSTNN_PRECISION', 'float32', str.lower, ('float32', 'float64'))

    def test_flag(self):
        self.assertTrue(env_flag(' Yes '))
        self.assertTrue(env_flag('1'))
        self.assertFalse(env_flag('0'))
        self.assertFalse(env_flag('off'))


if __name__ == '__main__':
    unittest.main()
