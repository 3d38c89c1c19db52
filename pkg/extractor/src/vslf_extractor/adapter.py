"""Offline extraction: decode videos at a fixed rate, tap the backbone,
write one VSLF file per video.

The adapter never pools, whitens, or normalizes features; it ships the raw
activation maps so all downstream math lives in the similarity engine.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .backbone import Backbone
from .vslf import write_vslf


@dataclass
class ExtractionJob:
    videos: list[str]
    output_dir: str
    backbone: str = "tiny4-v1"
    fps: float = 1.0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not self.videos:
            raise ValueError("job needs at least one video")


@dataclass
class ExtractionResult:
    written: dict[str, str] = field(default_factory=dict)   # video path -> vslf path
    failures: dict[str, str] = field(default_factory=dict)  # video path -> reason


def sample_frames(path: str, fps: float) -> list[np.ndarray]:
    """Decode a video and keep one frame per 1/fps seconds of video time."""
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise IOError(f"cannot open video: {path}")
    native = cap.get(cv2.CAP_PROP_FPS)
    if not native or native <= 0:
        native = 25.0  # container did not declare a rate
    kept = []
    index = 0
    next_sample = 0.0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        t = index / native
        if t + 1e-9 >= next_sample:
            kept.append(frame)
            next_sample += 1.0 / fps
        index += 1
    cap.release()
    if not kept:
        raise IOError(f"no decodable frames in: {path}")
    return kept


def extract_video(path: str, backbone: Backbone, fps: float) -> list[list[np.ndarray]]:
    frames = sample_frames(path, fps)
    return [backbone.taps(backbone.preprocess(f)) for f in frames]


def extract(job: ExtractionJob) -> ExtractionResult:
    """Run the job; per-file failures are recorded and the job continues."""
    backbone = Backbone(job.backbone)
    os.makedirs(job.output_dir, exist_ok=True)
    result = ExtractionResult()
    for video in job.videos:
        out_path = os.path.join(
            job.output_dir, os.path.splitext(os.path.basename(video))[0] + ".vslf")
        try:
            taps = extract_video(video, backbone, job.fps)
            write_vslf(out_path, taps)
        except (IOError, OSError, ValueError) as exc:
            result.failures[video] = str(exc)
            continue
        result.written[video] = out_path
    return result
