from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from roadval import maskio


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 256, size=(40, 60), dtype=np.uint8)
    path = tmp_path / "mask.png"
    maskio.write_mask(path, labels)
    assert np.array_equal(maskio.read_mask(path), labels)


def test_palette_png_reads_indices(tmp_path):
    labels = np.array([[0, 1], [2, 3]], dtype=np.uint8)
    img = Image.fromarray(labels, mode="P")
    img.putpalette([c for i in range(256) for c in (i, i, i)])
    path = tmp_path / "palette.png"
    img.save(path)
    assert np.array_equal(maskio.read_mask(path), labels)


def test_rgb_mask_is_rejected(tmp_path):
    path = tmp_path / "rgb.png"
    Image.new("RGB", (4, 4)).save(path)
    with pytest.raises(ValueError):
        maskio.read_mask(path)


def test_write_mask_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        maskio.write_mask(tmp_path / "x.png", np.zeros((2, 2, 3)))


def test_write_rgb_round_trip(tmp_path):
    img = np.zeros((5, 5, 3), dtype=np.uint8)
    img[2, 2] = (255, 69, 0)
    path = tmp_path / "overlay.png"
    maskio.write_rgb(path, img)
    back = np.asarray(Image.open(path))
    assert np.array_equal(back, img)
