from pathlib import Path
from tempfile import TemporaryDirectory
import unittest

import numpy as np
import torch

from viewguard.config import GeneratorConfig
from viewguard.core.data import DatasetSplit, FlatImage, unflatten
from viewguard.core.generator import (
    PIXEL_LEVELS,
    ConditionalPixelCNN,
    bits_per_dim,
    build_causal_mask,
    build_generator,
    conditional_distribution,
    conditional_log_likelihood,
    generate_rows,
    load_generator,
    log_likelihood_all_labels,
    log_likelihoods,
    sample_pixel,
    save_generator,
    train_generator,
)

from viewguard_fixtures import fixed_generator, gradient_image, labeled_samples, random_image, uniform_generator


def two_point_probs() -> np.ndarray:
    probs = np.zeros(PIXEL_LEVELS)
    probs[10] = 0.3
    probs[200] = 0.7
    return probs


class CausalMaskTests(unittest.TestCase):
    def test_mask_types_differ_only_at_the_centre_tap(self) -> None:
        mask_a = build_causal_mask(3, 3, 3, "A", 3)
        mask_b = build_causal_mask(3, 3, 3, "B", 3)
        self.assertEqual(mask_a[:, :, 0, :].sum().item(), 27.0)
        self.assertEqual(mask_a[:, :, 2, :].sum().item(), 0.0)
        self.assertEqual(mask_a[:, :, 1, 2].sum().item(), 0.0)
        np.testing.assert_array_equal(mask_a[:, :, 1, 1].numpy(), np.tril(np.ones((3, 3)), k=-1))
        np.testing.assert_array_equal(mask_b[:, :, 1, 1].numpy(), np.tril(np.ones((3, 3))))

    def test_invalid_mask_and_width(self) -> None:
        with self.assertRaises(ValueError):
            build_causal_mask(3, 3, 3, "C", 3)
        with self.assertRaises(ValueError):
            ConditionalPixelCNN(3, 2, hidden_channels=10)

    def test_network_never_sees_current_or_later_subpixels(self) -> None:
        torch.manual_seed(0)
        network = ConditionalPixelCNN(3, 2, hidden_channels=12, n_residual=2, kernel_size=3).double().eval()
        rng = np.random.default_rng(1)
        grid = rng.uniform(0.0, 1.0, size=(4, 4, 3))
        labels = torch.tensor([1])

        def logits_for(values: np.ndarray) -> torch.Tensor:
            x = torch.tensor(values.transpose(2, 0, 1)[np.newaxis].copy())
            with torch.no_grad():
                return network(x, labels)

        base = logits_for(grid)
        for index in range(grid.size):
            changed = grid.reshape(-1).copy()
            changed[index:] = rng.uniform(0.0, 1.0, size=changed.size - index)
            perturbed = logits_for(changed.reshape(4, 4, 3))
            pixel, channel = divmod(index, 3)
            row, col = divmod(pixel, 4)
            self.assertTrue(
                torch.equal(perturbed[0, channel, :, row, col], base[0, channel, :, row, col]),
                f"sub-pixel {index} saw its own or a later value",
            )


class LikelihoodTests(unittest.TestCase):
    def test_uniform_model_costs_eight_bits_per_dimension(self) -> None:
        model = uniform_generator((4, 3, 1))
        samples = labeled_samples([gradient_image(), gradient_image(offset=5)], [0, 1])
        self.assertAlmostEqual(bits_per_dim(model, samples), 8.0, places=5)
        self.assertAlmostEqual(
            conditional_log_likelihood(model, gradient_image(), 0),
            -12 * np.log(PIXEL_LEVELS),
            places=4,
        )

    def test_all_label_likelihoods_have_one_column_per_class(self) -> None:
        model = uniform_generator((4, 3, 1), class_count=3)
        table = log_likelihood_all_labels(model, [gradient_image(), gradient_image(offset=1)])
        self.assertEqual(table.shape, (2, 3))
        np.testing.assert_allclose(table, table[0, 0])

    def test_support_outside_the_model_has_very_low_likelihood(self) -> None:
        model = fixed_generator(two_point_probs(), (4, 3, 1))
        inside = FlatImage(np.full(12, 200, dtype=np.uint8), 4, 3, 1)
        outside = FlatImage(np.full(12, 90, dtype=np.uint8), 4, 3, 1)
        values = log_likelihoods(model, [inside, outside], [0, 0])
        self.assertAlmostEqual(values[0], 12 * np.log(0.7), places=3)
        self.assertLess(values[1], -1e4)

    def test_label_and_length_checks(self) -> None:
        model = uniform_generator((4, 3, 1))
        with self.assertRaises(ValueError):
            log_likelihoods(model, [gradient_image()], [0, 1])
        with self.assertRaises(ValueError):
            conditional_log_likelihood(model, gradient_image(), 2)

    def test_conditional_distribution_is_normalized(self) -> None:
        model = fixed_generator(two_point_probs(), (4, 3, 1))
        probs = conditional_distribution(model, gradient_image(), 1, 5)
        self.assertAlmostEqual(float(probs.sum()), 1.0, places=6)
        self.assertAlmostEqual(float(probs[200]), 0.7, places=4)
        with self.assertRaises(ValueError):
            conditional_distribution(model, gradient_image(), 1, 12)


class SamplingTests(unittest.TestCase):
    def test_sample_pixel_follows_the_conditional_distribution(self) -> None:
        model = fixed_generator(two_point_probs(), (4, 3, 1))
        rng = np.random.default_rng(7)
        draws = np.array([sample_pixel(model, [5, 6, 7], 0, rng) for _ in range(2000)])
        self.assertEqual(set(np.unique(draws).tolist()), {10, 200})
        self.assertAlmostEqual(float(np.mean(draws == 200)), 0.7, delta=0.04)

    def test_sample_pixel_rejects_a_full_prefix(self) -> None:
        model = uniform_generator((4, 3, 1))
        with self.assertRaises(ValueError):
            sample_pixel(model, list(range(12)), 0, np.random.default_rng(0))

    def test_low_temperature_concentrates_on_the_mode(self) -> None:
        model = fixed_generator(two_point_probs(), (4, 3, 1))
        model.temperature = 0.02
        output = generate_rows(model, gradient_image(), 0, 1, 4, np.random.default_rng(3))
        self.assertTrue(np.all(output.pixels == 200))

    def test_generate_rows_touches_only_the_band(self) -> None:
        model = fixed_generator(two_point_probs(), (8, 3, 1))
        image = gradient_image(8, 3, 1)
        output = generate_rows(model, image, 1, 3, 5, np.random.default_rng(11))
        before, after = unflatten(image), unflatten(output)
        np.testing.assert_array_equal(after[:2], before[:2])
        np.testing.assert_array_equal(after[5:], before[5:])
        self.assertTrue(set(np.unique(after[2:5]).tolist()) <= {10, 200})

    def test_generate_rows_is_reproducible_for_a_seed(self) -> None:
        model = fixed_generator(two_point_probs(), (4, 3, 1))
        first = generate_rows(model, gradient_image(), 0, 2, 4, np.random.default_rng(5))
        second = generate_rows(model, gradient_image(), 0, 2, 4, np.random.default_rng(5))
        self.assertTrue(first.equals(second))

    def test_band_depends_on_the_rows_above_and_the_label_only(self) -> None:
        torch.manual_seed(0)
        model = build_generator((8, 4, 3), 2, GeneratorConfig(hidden_channels=12, n_residual=2, kernel_size=3))
        grid = unflatten(random_image(np.random.default_rng(4), 8, 4, 3))
        image = FlatImage(grid.reshape(-1), 8, 4, 3)

        def with_flipped_rows(first: int, last: int) -> FlatImage:
            flipped = grid.copy()
            flipped[first - 1 : last] = 255 - flipped[first - 1 : last]
            return FlatImage(flipped.reshape(-1), 8, 4, 3)

        def band(source: FlatImage, label: int, seed: int) -> np.ndarray:
            return unflatten(generate_rows(model, source, label, 3, 5, np.random.default_rng(seed)))[2:5]

        below, above = with_flipped_rows(7, 8), with_flipped_rows(1, 2)
        seeds = range(9, 14)
        for seed in seeds:
            np.testing.assert_array_equal(band(below, 0, seed), band(image, 0, seed))
        self.assertTrue(any(not np.array_equal(band(above, 0, seed), band(image, 0, seed)) for seed in seeds))
        self.assertTrue(any(not np.array_equal(band(image, 1, seed), band(image, 0, seed)) for seed in seeds))

        first_band_entry = 2 * 4 * 3
        base = conditional_distribution(model, image, 0, first_band_entry)
        np.testing.assert_array_equal(conditional_distribution(model, below, 0, first_band_entry), base)
        self.assertFalse(np.allclose(conditional_distribution(model, above, 0, first_band_entry), base))
        self.assertFalse(np.allclose(conditional_distribution(model, image, 1, first_band_entry), base))

    def test_empty_band_is_an_identity(self) -> None:
        model = uniform_generator((4, 3, 1))
        image = gradient_image()
        self.assertTrue(generate_rows(model, image, 0, 5, 4, np.random.default_rng(0)).equals(image))
        self.assertTrue(generate_rows(model, image, 0, 1, 0, np.random.default_rng(0)).equals(image))

    def test_invalid_bands_and_labels(self) -> None:
        model = uniform_generator((4, 3, 1))
        image = gradient_image()
        rng = np.random.default_rng(0)
        for r_start, r_end in ((0, 2), (2, 5), (4, 2)):
            with self.assertRaises(ValueError):
                generate_rows(model, image, 0, r_start, r_end, rng)
        with self.assertRaises(ValueError):
            generate_rows(model, image, 5, 1, 2, rng)


class TrainingTests(unittest.TestCase):
    def test_training_and_checkpoint_roundtrip(self) -> None:
        rng = np.random.default_rng(2)
        images = [random_image(rng, 4, 4, 1) for _ in range(8)]
        samples = labeled_samples(images, [index % 2 for index in range(8)])
        data = DatasetSplit(samples[:6], [], samples[6:], class_count=2, name="tiny")
        config = GeneratorConfig(hidden_channels=4, n_residual=1, kernel_size=3, epochs=1, batch_size=3)
        model = train_generator(data, config, seed=3, device="cpu", progress=False)
        self.assertIsNotNone(model.metadata["test_bits_per_dim"])

        with TemporaryDirectory() as tmp_dir:
            path = save_generator(model, Path(tmp_dir) / "generator.pt")
            restored = load_generator(path, device="cpu", temperature=0.5)
        self.assertEqual(restored.temperature, 0.5)
        np.testing.assert_allclose(
            log_likelihoods(model, images, [0] * 8),
            log_likelihoods(restored, images, [0] * 8),
            rtol=1e-6,
        )

    def test_checkpoint_kind_is_checked(self) -> None:
        model = build_generator((4, 4, 1), 2, GeneratorConfig(hidden_channels=4, n_residual=1, kernel_size=3))
        with TemporaryDirectory() as tmp_dir:
            path = Path(tmp_dir) / "bad.pt"
            torch.save({"kind": "classifier"}, path)
            with self.assertRaises(ValueError):
                load_generator(path)
        self.assertEqual(model.dimensions, 16)


if __name__ == "__main__":
    unittest.main()
