from pathlib import Path
from tempfile import TemporaryDirectory
import unittest

import numpy as np
from PIL import Image

from viewguard.core.data import read_image
from viewguard.core.views import generate_views
from viewguard.plots import save_image, save_roc_curves, save_view_gallery

from viewguard_fixtures import gradient_image, uniform_generator


class PlotTests(unittest.TestCase):
    def test_png_roundtrip_keeps_pixels(self) -> None:
        image = gradient_image(8, 4, 3)
        with TemporaryDirectory() as tmp_dir:
            path = save_image(image, Path(tmp_dir) / "z.png")
            restored = read_image(path)
        np.testing.assert_array_equal(restored.pixels, image.pixels)
        self.assertEqual(restored.shape, (8, 4, 3))

    def test_gallery_and_roc_figures_are_written(self) -> None:
        image = gradient_image(8, 4, 1)
        views = generate_views(uniform_generator((8, 4, 1)), image, 1, np.random.default_rng(0), parallel=False)
        with TemporaryDirectory() as tmp_dir:
            gallery = save_view_gallery(views, Path(tmp_dir) / "views.png", class_name="cat")
            roc = save_roc_curves(
                {"pgd-8": [(0.0, 0.0), (0.2, 0.7), (1.0, 1.0)]},
                Path(tmp_dir) / "plots" / "roc.png",
                aucs={"pgd-8": 0.8},
            )
            for path in (gallery, roc):
                with Image.open(path) as figure:
                    self.assertGreater(figure.size[0], 0)


if __name__ == "__main__":
    unittest.main()
