"""Fine-tune the classification head on a folder-per-class patch dataset.

Each source image is expanded into random square crops covering 0.5 to 1.0
of its short side (the multi-scale augmentation), bottleneck features are
extracted once through the frozen backbone, and the linear head is trained
with mini-batch gradient descent on cross-entropy.  The crop set is split
0.8 / 0.1 / 0.1 into train / validation / test before training.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .model import LabelerModel, bottleneck_features, build_backbone, new_head, patches_to_tensor


@dataclass(frozen=True)
class FinetuneResult:
    model: LabelerModel
    train_accuracy: float
    validation_accuracy: float
    test_accuracy: float


def scan_dataset(root: str | Path) -> dict[str, list[Path]]:
    """class name -> image paths; class names are the sub-directory names."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    layout = {}
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        images = sorted(
            p for p in class_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if images:
            layout[class_dir.name] = images
    if len(layout) < 2:
        raise ValueError(f"expected at least 2 class directories with images under {root}")
    return layout


def random_crops(pixels: np.ndarray, count: int, rng: np.random.Generator,
                 scale_lo: float = 0.5, scale_hi: float = 1.0) -> list[np.ndarray]:
    height, width = pixels.shape[:2]
    base = min(height, width)
    crops = []
    for s in rng.uniform(scale_lo, scale_hi, size=count):
        side = max(1, int(round(s * base)))
        x = int(rng.integers(0, width - side + 1))
        y = int(rng.integers(0, height - side + 1))
        crops.append(pixels[y : y + side, x : x + side])
    return crops


def _split_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def _accuracy(head: torch.nn.Linear, features: torch.Tensor, targets: torch.Tensor) -> float:
    if len(targets) == 0:
        return float("nan")
    with torch.no_grad():
        predicted = head(features).argmax(dim=1)
    return float((predicted == targets).float().mean())


def finetune(
    root: str | Path,
    *,
    learning_rate: float = 0.001,
    iterations: int = 10_000,
    batch_size: int = 100,
    crops_per_image: int = 6,
    input_size: int = 128,
    seed: int = 0,
    weights_path: str | None = None,
) -> FinetuneResult:
    layout = scan_dataset(root)
    classes = tuple(sorted(layout))
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    backbone = build_backbone(weights_path=weights_path, seed=seed)
    crops, targets = [], []
    for class_index, name in enumerate(classes):
        for image_path in layout[name]:
            pixels = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.uint8)
            for crop in random_crops(pixels, crops_per_image, rng):
                crops.append(crop)
                targets.append(class_index)

    features = torch.cat(
        [
            bottleneck_features(backbone, patches_to_tensor(crops[i : i + 64], input_size))
            for i in range(0, len(crops), 64)
        ]
    )
    targets_t = torch.tensor(targets)
    train_idx, val_idx, test_idx = (torch.from_numpy(part) for part in _split_indices(len(crops), rng))

    head = new_head(len(classes))
    optimizer = torch.optim.SGD(head.parameters(), lr=learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()
    x_train, y_train = features[train_idx], targets_t[train_idx]

    steps = 0
    while steps < iterations:
        order = torch.from_numpy(rng.permutation(len(x_train)))
        for start in range(0, len(order), batch_size):
            if steps >= iterations:
                break
            batch = order[start : start + batch_size]
            optimizer.zero_grad()
            loss = loss_fn(head(x_train[batch]), y_train[batch])
            loss.backward()
            optimizer.step()
            steps += 1

    model = LabelerModel(backbone, head, classes, input_size)
    return FinetuneResult(
        model=model,
        train_accuracy=_accuracy(head, x_train, y_train),
        validation_accuracy=_accuracy(head, features[val_idx], targets_t[val_idx]),
        test_accuracy=_accuracy(head, features[test_idx], targets_t[test_idx]),
    )
