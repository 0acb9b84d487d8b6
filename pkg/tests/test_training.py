import dataclasses
import gc
import os
import tempfile
import unittest

import numpy as np

from config.settings import Config
from tstnn.autodiff import TapeNode
from tstnn.checkpoint import load_checkpoint
from tstnn.exceptions import ConfigError, NumericError, ShapeError
from tstnn.framing import AudioBuffer
from tstnn.metrics import ssnr
from tstnn.model import PRESETS, TSTNN
from tstnn.optim import lr_at
from tstnn.synth import SynthSpec, synth_batch
from tstnn.training import TraceRow, TrainConfig, assemble_batch, train

TOY_TRAINING = TrainConfig(num_warmups=4, k1=0.02, d_model=64, k2=1e-3, decay_every=1, batch_size=2,
                           segment_seconds=0.01, fft_size=8, stft_hop=4)


def toy_data(count=4, clip_samples=120, seed=0):
    return synth_batch(SynthSpec(snr_db=5.0, clip_samples=clip_samples, sample_rate=8000, seed=seed), count)


def toy_model(seed=0):
    return TSTNN(PRESETS['toy'], seed=seed, dtype=np.float64)


class TestAssembleBatch(unittest.TestCase):
    def test_slices_long_and_pads_short(self):
        rng = np.random.default_rng(0)
        long_clean = np.random.default_rng(1).uniform(-1, 1, 100)
        short_clean = np.random.default_rng(2).uniform(-1, 1, 30)
        pairs = [(AudioBuffer(c, 8000), AudioBuffer(2 * c, 8000)) for c in (long_clean, short_clean)]
        batch = assemble_batch(pairs, 50, rng)
        self.assertEqual(batch.clean.shape, (2, 50))
        np.testing.assert_array_equal(batch.lengths, [50, 30])
        np.testing.assert_array_equal(batch.noisy, 2 * batch.clean)
        np.testing.assert_array_equal(batch.clean[1, :30], short_clean)
        np.testing.assert_array_equal(batch.clean[1, 30:], np.zeros(20))
        start = int(np.flatnonzero(long_clean == batch.clean[0, 0])[0])
        np.testing.assert_array_equal(batch.clean[0], long_clean[start:start + 50])

    def test_length_mismatch(self):
        pair = (AudioBuffer(np.ones(10), 8000), AudioBuffer(np.ones(12), 8000))
        with self.assertRaises(ShapeError):
            assemble_batch([pair], 50, np.random.default_rng(0))


class TestTrainConfig(unittest.TestCase):
    def test_invalid_values(self):
        for field, value in (('alpha', 1.2), ('num_warmups', 0), ('decay', 0.0), ('clip_norm', 0.0),
                             ('fft_size', 100), ('max_steps', 0)):
            with self.subTest(field=field):
                with self.assertRaises(ConfigError):
                    TrainConfig(**{field: value})

    def test_dict_roundtrip(self):
        self.assertEqual(TrainConfig.from_dict(TOY_TRAINING.to_dict()), TOY_TRAINING)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            TrainConfig.from_dict({'lr': 0.1})
        self.assertEqual(ctx.exception.field, 'lr')


class TestTrain(unittest.TestCase):
    def test_learning_rate_trace(self):
        cfg = dataclasses.replace(TOY_TRAINING, epochs=4)
        report = train(toy_model(), cfg, toy_data())
        self.assertEqual(report.steps, 8)
        for row in report.rows:
            self.assertEqual(row.lr, lr_at(row.step, row.epoch, cfg))
        self.assertEqual([row.epoch for row in report.rows], [0, 0, 1, 1, 2, 2, 3, 3])

    def test_short_run_lowers_loss(self):
        cfg = dataclasses.replace(TOY_TRAINING, epochs=30, batch_size=1, num_warmups=1, k1=0.008, decay=1.0,
                                  segment_seconds=1.0)
        report = train(toy_model(), cfg, toy_data(count=1, clip_samples=64))
        self.assertEqual(report.steps, 30)
        self.assertLess(report.final_loss, report.initial_loss)

    def test_fixed_seed_gives_identical_trace(self):
        cfg = dataclasses.replace(TOY_TRAINING, epochs=10, max_steps=20, seed=3)
        first = train(toy_model(3), cfg, toy_data(seed=3))
        second = train(toy_model(3), cfg, toy_data(seed=3))
        self.assertEqual(first.steps, 20)
        self.assertEqual(first.lines(), second.lines())

    def test_max_steps(self):
        cfg = dataclasses.replace(TOY_TRAINING, epochs=5, max_steps=3)
        self.assertEqual(train(toy_model(), cfg, toy_data()).steps, 3)

    def test_trace_and_checkpoint_files(self):
        cfg = dataclasses.replace(TOY_TRAINING, max_steps=2)
        with tempfile.TemporaryDirectory() as tmp:
            trace_path, ckpt_path = os.path.join(tmp, 'trace.tsv'), os.path.join(tmp, 'toy.ckpt')
            model = toy_model()
            report = train(model, cfg, toy_data(), trace_path=trace_path, checkpoint_path=ckpt_path)
            with open(trace_path) as f:
                lines = f.read().splitlines()
            loaded = load_checkpoint(ckpt_path)
        self.assertEqual(lines, report.lines())
        self.assertEqual(len(lines[0].split('\t')), 7)
        np.testing.assert_array_equal(loaded.params['decoder.conv_out.bias'].data,
                                      model.params['decoder.conv_out.bias'].data.astype(np.float32))

    def test_non_finite_loss_aborts(self):
        model = toy_model()
        model.params['decoder.conv_out.bias'].data[...] = np.inf
        with tempfile.TemporaryDirectory() as tmp:
            ckpt_path = os.path.join(tmp, 'toy.ckpt')
            with self.assertRaises(NumericError) as ctx:
                train(model, TOY_TRAINING, toy_data(), checkpoint_path=ckpt_path)
            self.assertTrue(os.path.exists(ckpt_path))
        self.assertEqual(ctx.exception.field, 'loss')

    def test_steps_leave_no_graph_behind(self):
        def live_nodes():
            return sum(isinstance(obj, TapeNode) for obj in gc.get_objects())

        model, data = toy_model(), toy_data()
        was_enabled = gc.isenabled()
        gc.collect()
        gc.disable()
        try:
            before = live_nodes()
            train(model, dataclasses.replace(TOY_TRAINING, max_steps=3), data)
            after = live_nodes()
        finally:
            if was_enabled:
                gc.enable()
        self.assertEqual(after, before)

    def test_no_data(self):
        with self.assertRaises(ConfigError):
            train(toy_model(), TOY_TRAINING, [])

    def test_trace_row_format(self):
        row = TraceRow(3, 1, 0.5, 0.25, 0.125, 1.0, 2.0)
        self.assertEqual(row.line(), '3\t1\t0.5\t0.25\t0.125\t1.0\t2.0')

    @unittest.skipUnless(Config.SLOW_TESTS, 'set TSTNN_SLOW_TESTS=1 to run')
    def test_tiny_model_overfits(self):
        data = synth_batch(SynthSpec(snr_db=0.0, clip_samples=2000, seed=0), 4)
        # full-scale schedule shrunk 40x: 4000 -> 100 warmup steps, decay every ~5800 -> 150 steps;
        # the 4 clips form one batch, so one epoch is one step
        cfg = TrainConfig(num_warmups=100, decay_every=150, epochs=300, batch_size=4, segment_seconds=0.125)
        model = TSTNN(PRESETS['tiny'], seed=0)
        report = train(model, cfg, data)
        self.assertEqual(report.steps, 300)
        self.assertLess(report.final_loss, 0.1 * report.initial_loss)

        denoised = [ssnr(clean, model.denoise(noisy)) for clean, noisy in data]
        baseline = [ssnr(clean, noisy) for clean, noisy in data]
        self.assertGreaterEqual(np.mean(denoised), np.mean(baseline) + 3.0)


if __name__ == '__main__':
    unittest.main()
