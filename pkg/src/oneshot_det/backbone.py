"""Shared siamese convolutional backbone with a feature pyramid.

A single weight set processes both query images and support patches; there
are no query-only or support-only parameters. The backbone is a small
residual network (4 stages) whose C3-C5 outputs feed a feature pyramid;
P6/P7 are produced by strided convolutions on top of P5. Pyramid levels
are configurable, `(3, 4, 5, 6, 7)` by default with stride `2**level`.

Normalization is GroupNorm throughout: episodic batches are tiny and the
model must be deterministic in both train and eval mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

DEFAULT_LEVELS = (3, 4, 5, 6, 7)


class InputSizeError(ValueError):
    """Image does not satisfy the pyramid's size requirements."""


@dataclass(frozen=True)
class FeaturePyramid:
    """Per-level feature maps, each of shape (B, C, H/stride, W/stride)."""

    levels: dict[int, Tensor]

    @property
    def batch_size(self) -> int:
        return next(iter(self.levels.values())).shape[0]

    @property
    def channels(self) -> int:
        return next(iter(self.levels.values())).shape[1]

    def stride(self, level: int) -> int:
        return 2**level

    def __getitem__(self, level: int) -> Tensor:
        return self.levels[level]


@dataclass(frozen=True)
class SupportRepresentation:
    """Per-level globally averaged support vectors of shape (B, C)."""

    vectors: dict[int, Tensor]

    def __getitem__(self, level: int) -> Tensor:
        return self.vectors[level]


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    """3x3 conv-GN-relu x2 with identity (or projected) skip."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _group_norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = _group_norm(out_channels)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                _group_norm(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        out = self.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class PyramidBackbone(nn.Module):
    """Residual backbone + FPN producing the configured pyramid levels.

    Args:
        stage_channels: output widths of the four residual stages
            (strides 4, 8, 16, 32 relative to the input).
        blocks_per_stage: residual blocks in each stage.
        pyramid_channels: shared channel count C of all pyramid levels.
        levels: pyramid levels to emit, a contiguous run within 3..7.
    """

    def __init__(
        self,
        stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128),
        blocks_per_stage: int = 1,
        pyramid_channels: int = 64,
        levels: tuple[int, ...] = DEFAULT_LEVELS,
    ):
        super().__init__()
        levels = tuple(sorted(levels))
        if levels[0] != 3 or levels != tuple(range(3, 3 + len(levels))) or levels[-1] > 7:
            raise ValueError(f"levels must be a contiguous run starting at 3, got {levels}")
        self.levels = levels
        self.pyramid_channels = pyramid_channels
        self.max_stride = 2 ** levels[-1]

        c1, c2, c3, c4 = stage_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c1, 3, stride=2, padding=1, bias=False),
            _group_norm(c1),
            nn.ReLU(inplace=True),
        )

        def stage(cin, cout):
            blocks = [ResidualBlock(cin, cout, stride=2)]
            blocks += [ResidualBlock(cout, cout) for _ in range(blocks_per_stage - 1)]
            return nn.Sequential(*blocks)

        self.stage1 = stage(c1, c1)  # /4
        self.stage2 = stage(c1, c2)  # /8  -> C3
        self.stage3 = stage(c2, c3)  # /16 -> C4
        self.stage4 = stage(c3, c4)  # /32 -> C5

        self.lateral3 = nn.Conv2d(c2, pyramid_channels, 1)
        self.lateral4 = nn.Conv2d(c3, pyramid_channels, 1)
        self.lateral5 = nn.Conv2d(c4, pyramid_channels, 1)
        self.output3 = nn.Conv2d(pyramid_channels, pyramid_channels, 3, padding=1)
        self.output4 = nn.Conv2d(pyramid_channels, pyramid_channels, 3, padding=1)
        self.output5 = nn.Conv2d(pyramid_channels, pyramid_channels, 3, padding=1)
        if 6 in levels:
            self.p6 = nn.Conv2d(pyramid_channels, pyramid_channels, 3, stride=2, padding=1)
        if 7 in levels:
            self.p7 = nn.Conv2d(pyramid_channels, pyramid_channels, 3, stride=2, padding=1)

    def forward(self, images: Tensor) -> FeaturePyramid:
        """Compute the feature pyramid of a (B, 3, H, W) image batch.

        H and W must be multiples of the maximum stride (and therefore at
        least that large); callers pad/resize beforehand.
        """
        if images.dim() == 3:
            images = images.unsqueeze(0)
        h, w = images.shape[-2:]
        if h < self.max_stride or w < self.max_stride:
            raise InputSizeError(
                f"image {h}x{w} smaller than minimum size {self.max_stride}"
            )
        if h % self.max_stride or w % self.max_stride:
            raise InputSizeError(
                f"image {h}x{w} not divisible by maximum stride {self.max_stride}"
            )

        x = self.stem(images)
        x = self.stage1(x)
        c3 = self.stage2(x)
        c4 = self.stage3(c3)
        c5 = self.stage4(c4)

        p5 = self.lateral5(c5)
        p4 = self.lateral4(c4) + nn.functional.interpolate(p5, scale_factor=2, mode="nearest")
        p3 = self.lateral3(c3) + nn.functional.interpolate(p4, scale_factor=2, mode="nearest")
        out = {3: self.output3(p3), 4: self.output4(p4), 5: self.output5(p5)}
        if 6 in self.levels:
            out[6] = self.p6(out[5])
        if 7 in self.levels:
            out[7] = self.p7(nn.functional.relu(out[6]))
        return FeaturePyramid({lvl: out[lvl] for lvl in self.levels})


def extract_pyramid(image: Tensor, backbone: PyramidBackbone) -> FeaturePyramid:
    """Functional wrapper: pyramid of one image or an image batch."""
    return backbone(image)


def pool_support(pyramid: FeaturePyramid) -> SupportRepresentation:
    """Global spatial average of every pyramid level."""
    return SupportRepresentation(
        {lvl: fmap.mean(dim=(2, 3)) for lvl, fmap in pyramid.levels.items()}
    )


def to_input_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> Tensor:
    """Convert an (H, W, 3) uint8 image to a (3, H, W) tensor in [0, 1]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    arr = np.ascontiguousarray(image.transpose(2, 0, 1))
    return torch.from_numpy(arr).to(dtype) / 255.0


def pad_to_multiple(image: np.ndarray, multiple: int) -> np.ndarray:
    """Zero-pad an (H, W, 3) image on the bottom/right to a stride multiple."""
    h, w = image.shape[:2]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, ph), (0, pw), (0, 0)))
