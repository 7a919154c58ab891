"""Frozen backbone + trainable linear head.

The backbone is a torchvision SqueezeNet feature stack used as a fixed
feature extractor (its parameters never receive gradients).  Weights come
from a local state-dict file when provided; without one, the backbone is
randomly initialized from a fixed seed and frozen, which keeps the
"retrain only the final layer" method intact on hosts with no access to
pretrained checkpoints.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision import models

FEATURE_DIM = 512
MODEL_FORMAT = "cnn-labeler/v1"


def build_backbone(weights_path: str | None = None, seed: int = 0) -> nn.Module:
    """Frozen SqueezeNet1.1 feature stack in eval mode."""
    if weights_path is not None:
        path = Path(weights_path)
        if not path.exists():
            raise FileNotFoundError(f"backbone weights not found: {path}")
        net = models.squeezenet1_1(weights=None)
        net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    else:
        torch.manual_seed(seed)
        net = models.squeezenet1_1(weights=None)
    backbone = net.features
    backbone.eval()
    for parameter in backbone.parameters():
        parameter.requires_grad_(False)
    return backbone


def patches_to_tensor(patches: np.ndarray | list, input_size: int) -> torch.Tensor:
    """uint8 (n, h, w, 3) pixel blocks -> normalized (n, 3, s, s) float tensor."""
    out = torch.empty((len(patches), 3, input_size, input_size))
    for i, patch in enumerate(patches):
        arr = np.array(patch, dtype=np.uint8, copy=True)  # torch needs writable memory
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.shape[2] == 1:
            arr = np.repeat(arr, 3, axis=2)
        x = torch.from_numpy(arr).permute(2, 0, 1).float().unsqueeze(0) / 255.0
        x = torch.nn.functional.interpolate(
            x, size=(input_size, input_size), mode="bilinear", align_corners=False
        )
        out[i] = (x[0] - 0.5) / 0.5
    return out


@torch.no_grad()
def bottleneck_features(backbone: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Global-average-pooled backbone activations, shape (n, FEATURE_DIM)."""
    activations = backbone(batch)
    return torch.nn.functional.adaptive_avg_pool2d(activations, 1).flatten(1)


def new_head(n_classes: int) -> nn.Linear:
    head = nn.Linear(FEATURE_DIM, n_classes)
    nn.init.zeros_(head.weight)
    nn.init.zeros_(head.bias)
    return head


class LabelerModel:
    """Bundle of frozen backbone, trained head and class vocabulary."""

    def __init__(self, backbone: nn.Module, head: nn.Linear, classes: tuple[str, ...], input_size: int):
        self.backbone = backbone
        self.head = head
        self.classes = classes
        self.input_size = input_size

    @torch.no_grad()
    def predict(self, patches: list) -> list[tuple[str, list[float]]]:
        """(word, probs) per patch, probs over self.classes."""
        batch = patches_to_tensor(patches, self.input_size)
        logits = self.head(bottleneck_features(self.backbone, batch))
        probs = torch.softmax(logits.double(), dim=1)
        out = []
        for row in probs:
            idx = int(torch.argmax(row))
            out.append((self.classes[idx], row.tolist()))
        return out

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "format": MODEL_FORMAT,
                "classes": list(self.classes),
                "input_size": self.input_size,
                "backbone_state": self.backbone.state_dict(),
                "head_state": self.head.state_dict(),
            },
            Path(path),
        )

    @classmethod
    def load(cls, path: str | Path) -> "LabelerModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        doc = torch.load(path, map_location="cpu", weights_only=True)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a cnn-labeler model: {path}")
        backbone = models.squeezenet1_1(weights=None).features
        backbone.load_state_dict(doc["backbone_state"])
        backbone.eval()
        for parameter in backbone.parameters():
            parameter.requires_grad_(False)
        classes = tuple(doc["classes"])
        head = nn.Linear(FEATURE_DIM, len(classes))
        head.load_state_dict(doc["head_state"])
        return cls(backbone, head, classes, int(doc["input_size"]))
