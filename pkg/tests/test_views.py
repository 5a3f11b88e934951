import unittest

import numpy as np

from viewguard.core.data import FlatImage, unflatten
from viewguard.core.generator import PIXEL_LEVELS
from viewguard.core.views import assemble_gstar, band_plan, draw_view_seeds, generate_views

from viewguard_fixtures import fixed_generator, gradient_image


def _two_point_generator(rows: int = 8, cols: int = 3):
    probs = np.zeros(PIXEL_LEVELS)
    probs[[1, 254]] = 0.5
    return fixed_generator(probs, (rows, cols, 1))


class BandPlanTests(unittest.TestCase):
    def test_quarter_bands_for_thirty_two_rows(self) -> None:
        plan = band_plan(32)
        self.assertEqual(
            [(band.seed_rows, band.r_start, band.r_end) for band in plan.bands],
            [(8, 9, 16), (16, 17, 24), (24, 25, 32)],
        )
        self.assertEqual(plan.top_rows, 8)

    def test_rows_must_split_into_quarters(self) -> None:
        for rows in (0, 2, 6, 30):
            with self.assertRaises(ValueError):
                band_plan(rows)
        with self.assertRaises(ValueError):
            band_plan(8).band(4)


class ViewGenerationTests(unittest.TestCase):
    def test_each_view_resamples_only_its_band(self) -> None:
        model = _two_point_generator()
        image = gradient_image(8, 3, 1)
        views = generate_views(model, image, 1, np.random.default_rng(0), parallel=False)
        source = unflatten(image)
        for k, view in enumerate((views.g1, views.g2, views.g3), start=1):
            grid = unflatten(view)
            top, bottom = 2 * k, 2 * k + 2
            np.testing.assert_array_equal(grid[:top], source[:top])
            np.testing.assert_array_equal(grid[bottom:], source[bottom:])
            self.assertTrue(set(np.unique(grid[top:bottom]).tolist()) <= {1, 254})

    def test_gstar_keeps_the_top_quarter_and_splices_every_band(self) -> None:
        model = _two_point_generator()
        image = gradient_image(8, 3, 1)
        views = generate_views(model, image, 0, np.random.default_rng(1), parallel=False)
        gstar = unflatten(views.gstar)
        np.testing.assert_array_equal(gstar[:2], unflatten(image)[:2])
        np.testing.assert_array_equal(gstar[2:4], unflatten(views.g1)[2:4])
        np.testing.assert_array_equal(gstar[4:6], unflatten(views.g2)[4:6])
        np.testing.assert_array_equal(gstar[6:8], unflatten(views.g3)[6:8])
        self.assertEqual(views.label_used, 0)
        self.assertEqual(len(views.views), 4)

    def test_recorded_seeds_replay_the_same_views(self) -> None:
        model = _two_point_generator()
        image = gradient_image(8, 3, 1)
        first = generate_views(model, image, 1, np.random.default_rng(2), parallel=True)
        replay = generate_views(model, image, 1, np.random.default_rng(99), view_seeds=first.rng_seeds, parallel=False)
        for left, right in zip(first.views, replay.views):
            self.assertTrue(left.equals(right))

    def test_view_seeds_are_drawn_from_the_caller_stream(self) -> None:
        self.assertEqual(draw_view_seeds(np.random.default_rng(4)), draw_view_seeds(np.random.default_rng(4)))
        with self.assertRaises(ValueError):
            generate_views(_two_point_generator(), gradient_image(8, 3, 1), 0, np.random.default_rng(0), view_seeds=(1, 2))

    def test_assemble_gstar_checks_shapes(self) -> None:
        image = gradient_image(8, 3, 1)
        small = FlatImage(np.zeros(12, dtype=np.uint8), 4, 3, 1)
        with self.assertRaises(ValueError):
            assemble_gstar(image, image, small, image)
        self.assertTrue(assemble_gstar(image, image, image, image).equals(image))


if __name__ == "__main__":
    unittest.main()
