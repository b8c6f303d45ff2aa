import numpy as np
from django.test import SimpleTestCase

from lab import rng


class StreamTests(SimpleTestCase):
    def test_same_key_same_draws(self):
        a = rng.stream(7, "sample").standard_normal(5)
        b = rng.stream(7, "sample").standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_purposes_and_shards_are_independent(self):
        base = rng.stream(7, "sample").standard_normal(5)
        self.assertFalse(np.array_equal(base, rng.stream(7, "other").standard_normal(5)))
        self.assertFalse(np.array_equal(base, rng.stream(7, "sample", shard=1).standard_normal(5)))

    def test_shard_sizes(self):
        self.assertEqual(rng.shard_sizes(10, 3), [4, 3, 3])
        self.assertEqual(sum(rng.shard_sizes(1001, 4)), 1001)
        with self.assertRaises(ValueError):
            rng.shard_sizes(10, 0)

    def test_standard_normal_shape(self):
        draws = rng.standard_normal(1, "block", 101, 3, shards=4)
        self.assertEqual(draws.shape, (101, 3))
        np.testing.assert_array_equal(draws, rng.standard_normal(1, "block", 101, 3, shards=4))

    def test_mean_and_stderr(self):
        mean, se = rng.mean_and_stderr(np.array([1.0, 2.0, 3.0, 4.0]))
        self.assertAlmostEqual(float(mean), 2.5)
        self.assertAlmostEqual(float(se), np.std([1, 2, 3, 4], ddof=1) / 2.0)
