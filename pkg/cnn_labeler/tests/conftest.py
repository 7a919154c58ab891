import numpy as np
import pytest
from PIL import Image

from cnn_labeler.finetune import finetune

TOY_COLORS = {"red": (200, 40, 40), "blue": (40, 60, 210)}


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Two-class solid-color patch layout, one directory per class."""
    root = tmp_path_factory.mktemp("toy") / "data"
    rng = np.random.default_rng(0)
    for name, color in TOY_COLORS.items():
        class_dir = root / name
        class_dir.mkdir(parents=True)
        for i in range(16):
            img = np.clip(
                np.asarray(color, np.int16) + rng.integers(-12, 13, (48, 48, 3)), 0, 255
            ).astype(np.uint8)
            Image.fromarray(img).save(class_dir / f"{i:02d}.png")
    return root


@pytest.fixture(scope="session")
def toy_result(toy_dataset):
    return finetune(toy_dataset, iterations=1500, batch_size=32, crops_per_image=4, seed=1)


@pytest.fixture(scope="session")
def toy_model_file(toy_result, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "toy.pt"
    toy_result.model.save(path)
    return path
