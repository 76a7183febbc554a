"""Convolutional feature extractor and training-time augmentation.

The extractor is a short stack of stride-2 conv + ReLU blocks mapping a
square image to a coarse feature map. With the default three stages a
64x64 input becomes an 8x8 grid of 64-dimensional cells, each covering
one 8x8 patch of the input, which is the granularity at which prototype
similarity is later localized.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .errors import ContractViolation


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 64
    in_channels: int = 3
    channels: tuple = (16, 32, 64)
    kernel_size: int = 3

    @property
    def feature_dim(self):
        return self.channels[-1]

    @property
    def feature_size(self):
        size = self.input_size
        for _ in self.channels:
            size //= 2
        return size

    def validate(self):
        if self.input_size % (2 ** len(self.channels)) != 0:
            raise ContractViolation(
                f"input size {self.input_size} not divisible by total stride "
                f"{2 ** len(self.channels)}")
        if self.kernel_size % 2 != 1:
            raise ContractViolation("kernel size must be odd")
        return self


class ConvBackbone:
    """Owns the conv parameters and runs the forward pass on Tensors."""

    def __init__(self, config: BackboneConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 11])))
        k = config.kernel_size
        self.params = {}
        cin = config.in_channels
        for idx, cout in enumerate(config.channels):
            fan_in = k * k * cin
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(k, k, cin, cout))
            self.params[f"backbone.stage{idx}.w"] = ad.Tensor(w, requires_grad=True)
            self.params[f"backbone.stage{idx}.b"] = ad.Tensor(
                np.zeros(cout), requires_grad=True)
            cin = cout

    def features(self, x):
        """(B, H, W, C) image tensor -> (B, h, w, d) feature map tensor."""
        cfg = self.config
        if x.values.ndim != 4 or x.values.shape[1:] != (
                cfg.input_size, cfg.input_size, cfg.in_channels):
            raise ContractViolation(
                f"backbone expects (B, {cfg.input_size}, {cfg.input_size}, "
                f"{cfg.in_channels}), got {x.values.shape}")
        pad = cfg.kernel_size // 2
        h = x
        for idx in range(len(cfg.channels)):
            # Mirror padding: zero padding plants a constant border pattern
            # in every image that prototypes latch onto as a super-stimulus.
            if pad:
                h = ad.pad_reflect(h, pad)
            h = ad.conv2d(h, self.params[f"backbone.stage{idx}.w"],
                          self.params[f"backbone.stage{idx}.b"],
                          stride=2, padding=0)
            h = ad.relu(h)
        return h

    def set_trainable(self, flag):
        for t in self.params.values():
            t.requires_grad = bool(flag)


@dataclass(frozen=True)
class AugmentConfig:
    flip: bool = True
    max_rotate_deg: float = 15.0
    max_brightness: float = 0.2

    @property
    def is_identity(self):
        return (not self.flip) and self.max_rotate_deg == 0.0 and self.max_brightness == 0.0


def augment(image, seed, config=AugmentConfig()):
    """Randomly flip, rotate and rescale brightness of one image.

    Deterministic in ``seed``; an identity config returns the input
    values unchanged. Input is float64 (H, W, C) in [0, 1] and the
    output stays in [0, 1].
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ContractViolation(f"augment expects (H, W, C), got {img.shape}")
    if config.is_identity:
        return img.copy()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    out = img
    if config.flip and rng.random() < 0.5:
        out = out[:, ::-1, :]
    if config.max_rotate_deg > 0.0:
        angle = rng.uniform(-config.max_rotate_deg, config.max_rotate_deg)
        out = ndimage.rotate(out, angle, axes=(0, 1), reshape=False,
                             order=1, mode="reflect")
    if config.max_brightness > 0.0:
        factor = 1.0 + rng.uniform(-config.max_brightness, config.max_brightness)
        out = out * factor
    return np.clip(out, 0.0, 1.0)
