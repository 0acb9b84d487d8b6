import os
import tempfile
import unittest

import numpy as np
import soundfile as sf

from tstnn.exceptions import AudioFormatError, ConfigError, ShapeError
from tstnn.framing import (AudioBuffer, FrameTensor, FramingSpec, overlap_add, quantize, read_wav,
                           segment, write_wav)


class TestFramingSpec(unittest.TestCase):
    def test_stride(self):
        self.assertEqual(FramingSpec(512, 256).stride, 256)
        self.assertEqual(FramingSpec(8, 3).stride, 5)

    def test_invalid_overlap(self):
        for overlap in (0, 512, -1):
            with self.assertRaises(ConfigError):
                FramingSpec(512, overlap)

    def test_every_position_covered(self):
        spec = FramingSpec(7, 2)
        for n_frames in (1, 2, 9):
            self.assertGreaterEqual(spec.coverage(n_frames).min(), 1)


class TestSegment(unittest.TestCase):
    def setUp(self):
        self.spec = FramingSpec(512, 256)

    def test_frame_counts(self):
        for length, expected in ((1024, 3), (512, 1), (600, 2)):
            frames, original = segment(AudioBuffer(np.ones(length), 16000), self.spec)
            self.assertEqual(frames.dims, (1, 1, expected, 512))
            self.assertEqual(original, length)

    def test_ragged_tail_is_zero_padded(self):
        x = np.random.default_rng(0).uniform(-1, 1, 600)
        frames, _ = segment(AudioBuffer(x, 16000), self.spec)
        np.testing.assert_array_equal(frames.data[0, 0, 0], x[:512])
        np.testing.assert_array_equal(frames.data[0, 0, 1, :344], x[256:600])
        np.testing.assert_array_equal(frames.data[0, 0, 1, 344:], np.zeros(168))

    def test_short_signal_padded_to_one_frame(self):
        frames, original = segment(AudioBuffer([0.5], 16000), FramingSpec(4, 2))
        np.testing.assert_array_equal(frames.data[0, 0], [[0.5, 0.0, 0.0, 0.0]])
        self.assertEqual(original, 1)

    def test_empty_audio(self):
        with self.assertRaises(ShapeError):
            segment(AudioBuffer(np.zeros(0), 16000), self.spec)


class TestOverlapAdd(unittest.TestCase):
    def test_ones(self):
        frames = FrameTensor(np.ones((1, 1, 2, 4)))
        audio = overlap_add(frames, FramingSpec(4, 2), 6, sample_rate=16000)
        np.testing.assert_array_equal(audio.samples, np.ones(6))

    def test_single_frame_is_trimmed(self):
        frames = FrameTensor(np.arange(1.0, 9.0).reshape(1, 1, 1, 8))
        audio = overlap_add(frames, FramingSpec(8, 4), 5, sample_rate=16000)
        np.testing.assert_array_equal(audio.samples, [1, 2, 3, 4, 5])

    def test_inverts_segment(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, 4096)
        spec = FramingSpec(512, 256)
        frames, length = segment(AudioBuffer(x, 16000), spec)
        np.testing.assert_allclose(overlap_add(frames, spec, length).samples, x, atol=1e-6)

    def test_inversion_property(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            frame_size = int(rng.integers(2, 65))
            spec = FramingSpec(frame_size, int(rng.integers(1, frame_size)))
            x = rng.uniform(-1, 1, int(rng.integers(1, 50001)))
            frames, length = segment(AudioBuffer(x, 16000), spec)
            restored = overlap_add(frames, spec, length).samples
            self.assertEqual(restored.shape, x.shape)
            self.assertLess(np.max(np.abs(restored - x)), 1e-6)

    def test_keeps_sample_rate(self):
        x = np.random.default_rng(3).uniform(-1, 1, 300)
        spec = FramingSpec(64, 32)
        frames, length = segment(AudioBuffer(x, 8000), spec)
        self.assertEqual(frames.sample_rate, 8000)
        self.assertEqual(overlap_add(frames, spec, length).sample_rate, 8000)

    def test_sample_rate_required(self):
        with self.assertRaises(ConfigError) as ctx:
            overlap_add(FrameTensor(np.ones((1, 1, 2, 4))), FramingSpec(4, 2), 6)
        self.assertEqual(ctx.exception.field, 'sample_rate')

    def test_conflicting_sample_rate(self):
        frames, length = segment(AudioBuffer(np.ones(10), 8000), FramingSpec(4, 2))
        with self.assertRaises(ConfigError):
            overlap_add(frames, FramingSpec(4, 2), length, sample_rate=16000)

    def test_frame_dim_mismatch(self):
        with self.assertRaises(ShapeError):
            overlap_add(FrameTensor(np.ones((1, 1, 2, 6))), FramingSpec(4, 2), 6, sample_rate=16000)


class TestAudioTypes(unittest.TestCase):
    def test_non_finite_samples(self):
        with self.assertRaises(ShapeError):
            AudioBuffer([0.0, np.nan], 16000)

    def test_non_positive_rate(self):
        with self.assertRaises(ConfigError):
            AudioBuffer([0.0], 0)

    def test_frame_tensor_rank(self):
        with self.assertRaises(ShapeError):
            FrameTensor(np.ones((2, 3)))


class TestWav(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_scale(self):
        sf.write(self.path('half.wav'), np.array([16384, -32768], dtype=np.int16), 16000, subtype='PCM_16')
        audio = read_wav(self.path('half.wav'))
        np.testing.assert_array_equal(audio.samples, [0.5, -1.0])
        self.assertEqual(audio.sample_rate, 16000)

    def test_sine_roundtrip(self):
        t = np.arange(16000) / 16000
        audio = AudioBuffer(0.8 * np.sin(2 * np.pi * 1000 * t), 16000)
        write_wav(self.path('sine.wav'), audio)
        restored = read_wav(self.path('sine.wav'))
        self.assertLessEqual(np.max(np.abs(restored.samples - audio.samples)), 1 / 32768)

    def test_quantize_is_symmetric(self):
        np.testing.assert_array_equal(quantize([1.5, -1.5, 0.0]), [32767, -32767, 0])

    def test_stereo_rejected(self):
        sf.write(self.path('stereo.wav'), np.zeros((10, 2), dtype=np.int16), 16000, subtype='PCM_16')
        with self.assertRaises(AudioFormatError) as ctx:
            read_wav(self.path('stereo.wav'))
        self.assertEqual(ctx.exception.field, 'channels')

    def test_float_wav_rejected(self):
        sf.write(self.path('float.wav'), np.zeros(10), 16000, subtype='FLOAT')
        with self.assertRaises(AudioFormatError) as ctx:
            read_wav(self.path('float.wav'))
        self.assertEqual(ctx.exception.field, 'subtype')

    def test_malformed_header(self):
        with open(self.path('junk.wav'), 'wb') as f:
            f.write(b'RIFF\x00\x00')
        with self.assertRaises(AudioFormatError) as ctx:
            read_wav(self.path('junk.wav'))
        self.assertEqual(ctx.exception.field, 'header')


if __name__ == '__main__':
    unittest.main()
