"""Deterministic convolutional backbone with four tapped stages.

There is no network access for downloading pretrained weights here, so the
backbone is a fixed, seeded profile: the weights are a pure function of
the profile name and never change. That preserves the properties the
pipeline actually depends on (fixed weights, deterministic inference,
stable layer shapes); swap in a stronger backbone by registering another
profile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BackboneProfile:
    name: str
    input_size: int              # frames are resized to input_size x input_size
    stage_channels: tuple[int, ...]
    seed: int

    @property
    def total_channels(self) -> int:
        return sum(self.stage_channels)


PROFILES = {
    "tiny4-v1": BackboneProfile("tiny4-v1", 128, (16, 32, 64, 128), seed=0x51F5),
}


class Backbone:
    """Stack of stride-2 3x3 conv + ReLU stages; each stage output is a tap."""

    def __init__(self, profile: str = "tiny4-v1"):
        if profile not in PROFILES:
            raise ValueError(f"unknown backbone profile {profile!r}; known: {sorted(PROFILES)}")
        self.profile = PROFILES[profile]
        rng = np.random.default_rng(self.profile.seed)
        self.kernels = []
        cin = 3
        for cout in self.profile.stage_channels:
            limit = np.sqrt(6.0 / (9 * cin + 9 * cout))
            self.kernels.append(rng.uniform(-limit, limit, size=(3, 3, cin, cout))
                                .astype(np.float32))
            cin = cout

    def preprocess(self, frame_bgr: np.ndarray) -> np.ndarray:
        """BGR uint8 frame -> normalized RGB float input plane."""
        import cv2

        size = self.profile.input_size
        resized = cv2.resize(frame_bgr, (size, size), interpolation=cv2.INTER_AREA)
        rgb = resized[:, :, ::-1].astype(np.float32) / 255.0
        return rgb - 0.5

    def taps(self, image: np.ndarray) -> list[np.ndarray]:
        """Activation maps of the four stages for one preprocessed frame."""
        x = image
        outputs = []
        for kernel in self.kernels:
            x = _conv2d_stride2(x, kernel)
            np.maximum(x, 0.0, out=x)
            outputs.append(x)
        return outputs


def _conv2d_stride2(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 cross-correlation with stride 2."""
    h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    oh, ow = -(-h // 2), -(-w // 2)
    ph = max((oh - 1) * 2 + kh - h, 0)
    pw = max((ow - 1) * 2 + kw - w, 0)
    xp = np.pad(x, ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))[::2, ::2]
    cols = np.transpose(win, (0, 1, 3, 4, 2)).reshape(oh * ow, kh * kw * cin)
    out = cols.astype(np.float64) @ kernel.reshape(kh * kw * cin, cout).astype(np.float64)
    return out.reshape(oh, ow, cout).astype(np.float32)
