import numpy as np
import pytest
import skimage.data

NATURAL = ["astronaut", "camera", "coffee", "chelsea", "rocket", "brick", "grass", "moon", "coins", "text"]


def natural_image(name: str) -> np.ndarray:
    img = getattr(skimage.data, name)()
    if img.ndim == 3 and img.shape[2] == 4:
        img = img[..., :3]
    return np.ascontiguousarray(img.astype(np.uint8))


@pytest.fixture(scope="session")
def natural_images():
    return [natural_image(n) for n in NATURAL]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
