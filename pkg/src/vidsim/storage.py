"""Bit-exact file formats: VSLF feature files, manifests, checkpoints.

VSLF (see docs/vslf.md for the byte-level layout) stores per-frame,
per-layer activation maps as little-endian float32 with an 8-byte
BLAKE2b-64 payload hash in the trailer. Descriptor files reuse the same
container with a single NxNxC layer per frame. Checkpoints serialize the
whole training state; save -> load -> save is byte-identical, and readers
never trust header-declared sizes without checking them against the
actual file length. Writers go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    FormatError,
    ManifestError,
    TruncatedFileError,
    VersionMismatchError,
)
from .features import FeatureMapStack, VideoTensor, WhiteningModel
from .model import CNN_LAYOUT, ModelParams, SimCnnParams
from .training import AdamState, Interval, SegmentAnnotation, TrainingConfig

VSLF_MAGIC = b"VSLF"
CKPT_MAGIC = b"VSCK"
VSLF_VERSION = 1
CKPT_VERSION = 1
_HASH_BYTES = 8


def payload_hash(data: bytes) -> bytes:
    """64-bit BLAKE2b digest used in file trailers."""
    return hashlib.blake2b(data, digest_size=_HASH_BYTES).digest()


def _atomic_write(path, blob: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# VSLF feature files


def write_features(path, stacks: list[FeatureMapStack]) -> None:
    """Write a sequence of frame stacks; all frames must share layer dims."""
    if not stacks:
        raise FormatError("VSLF requires at least one frame")
    shapes = [m.shape for m in stacks[0].maps]
    for i, s in enumerate(stacks):
        if [m.shape for m in s.maps] != shapes:
            raise FormatError(f"frame {i} layer shapes differ from frame 0")
    header = io.BytesIO()
    header.write(VSLF_MAGIC)
    header.write(struct.pack("<III", VSLF_VERSION, len(stacks), len(shapes)))
    for h, w, c in shapes:
        header.write(struct.pack("<III", h, w, c))
    payload = io.BytesIO()
    for s in stacks:
        for m in s.maps:
            payload.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    body = payload.getvalue()
    _atomic_write(path, header.getvalue() + body + payload_hash(body))


def read_features(path) -> list[FeatureMapStack]:
    """Read a VSLF file back into frame stacks (timestamps at 1 fps)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise TruncatedFileError(f"file is {len(blob)} bytes, smaller than any valid header")
    if blob[:4] != VSLF_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {VSLF_MAGIC!r}")
    version, frames, layers = struct.unpack_from("<III", blob, 4)
    if version != VSLF_VERSION:
        raise VersionMismatchError(f"unsupported VSLF version {version}, expected {VSLF_VERSION}")
    if frames < 1 or layers < 1:
        raise FormatError(f"header declares {frames} frames and {layers} layers; both must be >= 1")
    header_len = 16 + 12 * layers
    if len(blob) < header_len:
        raise TruncatedFileError(f"file too short for {layers} layer records")
    shapes = []
    for k in range(layers):
        h, w, c = struct.unpack_from("<III", blob, 16 + 12 * k)
        if min(h, w, c) < 1:
            raise FormatError(f"layer {k} has non-positive extents {(h, w, c)}")
        shapes.append((h, w, c))
    frame_floats = sum(h * w * c for h, w, c in shapes)
    expected = header_len + frames * frame_floats * 4 + _HASH_BYTES
    if len(blob) != expected:
        raise TruncatedFileError(f"expected {expected} bytes, file has {len(blob)}")
    body = blob[header_len:-_HASH_BYTES]
    if payload_hash(body) != blob[-_HASH_BYTES:]:
        raise ChecksumError("payload hash does not match trailer")
    flat = np.frombuffer(body, dtype="<f4")
    stacks = []
    offset = 0
    for i in range(frames):
        maps = []
        for h, w, c in shapes:
            n = h * w * c
            maps.append(flat[offset:offset + n].reshape(h, w, c).copy())
            offset += n
        stacks.append(FeatureMapStack(maps, float(i)))
    return stacks


def write_video_tensor(path, video: VideoTensor) -> None:
    """Store a descriptor video as VSLF with one NxNxC layer per frame."""
    stacks = [FeatureMapStack([video.frames[i]], float(video.timestamps[i]))
              for i in range(video.num_frames)]
    write_features(path, stacks)


def read_video_tensor(path, video_id: str) -> VideoTensor:
    stacks = read_features(path)
    for i, s in enumerate(stacks):
        if len(s.maps) != 1 or s.maps[0].shape[0] != s.maps[0].shape[1]:
            raise FormatError(f"frame {i} is not a single square NxNxC descriptor layer")
    frames = np.stack([s.maps[0] for s in stacks])
    return VideoTensor(video_id, frames)


# ---------------------------------------------------------------------------
# dataset manifests (one JSON object per line)


@dataclass
class ManifestRecord:
    video_id: str
    path: str
    duration: float
    segments: list[SegmentAnnotation] = field(default_factory=list)
    relevant: list[str] | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    base_dir: str

    @property
    def by_id(self) -> dict[str, ManifestRecord]:
        return {r.video_id: r for r in self.records}

    def resolve(self, record: ManifestRecord) -> str:
        if os.path.isabs(record.path):
            return record.path
        candidate = os.path.join(self.base_dir, record.path)
        if os.path.exists(candidate):
            return candidate
        data_dir = os.environ.get("VIDSIM_DATA_DIR")
        if data_dir:
            return os.path.join(data_dir, record.path)
        return candidate


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a line-delimited manifest; errors carry line numbers."""
    base_dir = os.path.dirname(os.path.abspath(path))
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, "r") as fh:
        lines = fh.readlines()
    manifest = DatasetManifest(records, base_dir)
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        try:
            vid = str(obj["id"])
            rec = ManifestRecord(vid, str(obj["path"]), float(obj.get("duration", 0.0)))
        except KeyError as exc:
            raise ManifestError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
        if vid in seen:
            raise ManifestError(f"line {lineno}: duplicate video id {vid!r}")
        seen.add(vid)
        for seg in obj.get("segments", []):
            try:
                a, b = (float(x) for x in seg["interval"])
                c, d = (float(x) for x in seg["peer_interval"])
                peer = str(seg["peer"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"line {lineno}: malformed segment {seg!r}") from exc
            if not a < b or not c < d:
                raise ManifestError(f"line {lineno}: segment intervals must have start < end")
            rec.segments.append(SegmentAnnotation(vid, peer, Interval(a, b), Interval(c, d)))
        if "relevant" in obj:
            rec.relevant = [str(x) for x in obj["relevant"]]
        records.append(rec)
    for rec in records:
        for seg in rec.segments:
            if seg.peer_id not in seen:
                raise ManifestError(f"record {rec.video_id!r}: segment references unknown video {seg.peer_id!r}")
        if rec.relevant:
            for r in rec.relevant:
                if r not in seen:
                    raise ManifestError(f"record {rec.video_id!r}: relevant id {r!r} not in manifest")
    if check_files:
        for rec in records:
            resolved = manifest.resolve(rec)
            if not os.path.exists(resolved):
                raise ManifestError(f"record {rec.video_id!r}: feature file not found: {resolved}")
    return manifest


def load_videos(manifest: DatasetManifest) -> dict[str, VideoTensor]:
    return {rec.video_id: read_video_tensor(manifest.resolve(rec), rec.video_id)
            for rec in manifest.records}


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainingConfig
    optimizer: AdamState | None = None
    step: int = 0


def _write_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def _read_array(view: memoryview, offset: int) -> tuple[np.ndarray, int]:
    if offset + 4 > len(view):
        raise TruncatedFileError("checkpoint ends inside an array header")
    (ndim,) = struct.unpack_from("<I", view, offset)
    offset += 4
    if ndim > 4 or offset + 4 * ndim > len(view):
        raise FormatError(f"array rank {ndim} invalid or truncated")
    shape = struct.unpack_from(f"<{ndim}I", view, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    nbytes = count * 4
    if offset + nbytes > len(view):
        raise TruncatedFileError("checkpoint ends inside array data")
    arr = np.frombuffer(view, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
    return arr, offset + nbytes


def _config_json(config: TrainingConfig) -> bytes:
    payload = {
        "margin": config.margin,
        "reg_weight": config.reg_weight,
        "snippet_len": config.snippet_len,
        "triplets_per_pool": config.triplets_per_pool,
        "learning_rate": config.learning_rate,
        "epochs": config.epochs,
        "seed": config.seed,
        "frame_mode": config.frame_mode,
        "video_mode": config.video_mode,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", ckpt.step))
    blob = _config_json(ckpt.config)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)

    wm = ckpt.params.whitening
    buf.write(b"\x01" if wm is not None else b"\x00")
    if wm is not None:
        _write_array(buf, wm.mean)
        _write_array(buf, wm.projection)
    buf.write(b"\x01" if ckpt.params.u is not None else b"\x00")
    if ckpt.params.u is not None:
        _write_array(buf, ckpt.params.u)
    for k, b in zip(ckpt.params.cnn.kernels, ckpt.params.cnn.biases):
        _write_array(buf, k)
        _write_array(buf, b)

    opt = ckpt.optimizer
    buf.write(b"\x01" if opt is not None else b"\x00")
    if opt is not None:
        buf.write(struct.pack("<Q", opt.step))
        buf.write(struct.pack("<I", len(opt.m)))
        for name in sorted(opt.m):
            encoded = name.encode()
            buf.write(struct.pack("<I", len(encoded)))
            buf.write(encoded)
            _write_array(buf, opt.m[name])
            _write_array(buf, opt.v[name])

    body = buf.getvalue()
    head = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION)
    _atomic_write(path, head + body + payload_hash(body))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 + _HASH_BYTES:
        raise TruncatedFileError(f"file is {len(blob)} bytes, smaller than any valid checkpoint")
    if blob[:4] != CKPT_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {CKPT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version}")
    body = memoryview(blob)[8:-_HASH_BYTES]
    if payload_hash(bytes(body)) != blob[-_HASH_BYTES:]:
        raise ChecksumError("checkpoint payload hash does not match trailer")

    offset = 0
    (step,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    (cfg_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    cfg = json.loads(bytes(body[offset:offset + cfg_len]).decode())
    offset += cfg_len
    config = TrainingConfig(**cfg)

    whitening = None
    if body[offset]:
        offset += 1
        mean, offset = _read_array(body, offset)
        projection, offset = _read_array(body, offset)
        whitening = WhiteningModel(mean, projection, projection.shape[1])
    else:
        offset += 1
    u = None
    if body[offset]:
        offset += 1
        u, offset = _read_array(body, offset)
    else:
        offset += 1
    kernels, biases = [], []
    for _ in CNN_LAYOUT:
        k, offset = _read_array(body, offset)
        b, offset = _read_array(body, offset)
        kernels.append(k)
        biases.append(b)
    params = ModelParams(SimCnnParams(kernels, biases), u, whitening)

    optimizer = None
    if body[offset]:
        offset += 1
        (opt_step,) = struct.unpack_from("<Q", body, offset)
        offset += 8
        (count,) = struct.unpack_from("<I", body, offset)
        offset += 4
        m, v = {}, {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", body, offset)
            offset += 4
            name = bytes(body[offset:offset + name_len]).decode()
            offset += name_len
            m[name], offset = _read_array(body, offset)
            v[name], offset = _read_array(body, offset)
        optimizer = AdamState(m, v, opt_step)
    else:
        offset += 1
    if offset != len(body):
        raise FormatError(f"{len(body) - offset} unread bytes at end of checkpoint")
    return Checkpoint(params, config, optimizer, step)


def write_history_csv(path, history) -> None:
    """Training history rows (step, L_tr, L_reg, L) as CSV."""
    lines = ["step,triplet_loss,regularization_loss,total_loss"]
    lines += [f"{s},{lt!r},{lr!r},{lt_total!r}" for s, lt, lr, lt_total in history]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
