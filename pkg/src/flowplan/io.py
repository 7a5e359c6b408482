"""File formats: RGBDV frame sequences, PGM masks, TRKS/SFLW binaries, manifests.

All binary formats are little-endian. Layouts:

    RGBDV:  magic "RGBD" | u32 version=1 | u32 H | u32 W | u32 N
            then per frame: H*W*3 float32 rgb, H*W float32 depth, H*W u8 validity
    TRKS:   magic "TRKS" | u32 M | u32 F (=N+1 frames)
            then float32 positions (M,2,F) C-order, u8 visibility (M,F)
    SFLW:   magic "SFLW" | u32 M | u32 N (steps)
            then float32 displacements (M,3,N) C-order, u8 valid (M,N)
    DNSR:   magic "DNSR" | u32 version=1 | u32 config_len | config JSON (utf-8)
            then float32 weight blobs in the order declared by the config

Masks are binary PGM (P5, maxval 255, 255 = selected). JSON manifests tie a
frame file to intrinsics, a task string, and optional mask/track sidecars.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .geometry import CameraIntrinsics, PartMask, RgbdFrame

RGBDV_MAGIC = b"RGBD"
TRKS_MAGIC = b"TRKS"
SFLW_MAGIC = b"SFLW"
DNSR_MAGIC = b"DNSR"


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise ValueError("unexpected end of file")
    return data


def write_rgbdv(path, frames):
    """Write a sequence of RgbdFrame to an RGBDV file. rgb/depth stored as float32."""
    frames = list(frames)
    if not frames:
        raise ValueError("cannot write an empty frame sequence")
    h, w = frames[0].shape
    with open(path, "wb") as f:
        f.write(RGBDV_MAGIC)
        f.write(struct.pack("<III I", 1, h, w, len(frames)))
        for fr in frames:
            if fr.shape != (h, w):
                raise ShapeMismatch("all frames in one file must share a shape")
            f.write(fr.rgb.astype("<f4").tobytes())
            f.write(fr.depth.astype("<f4").tobytes())
            f.write(fr.valid.astype(np.uint8).tobytes())


def read_rgbdv(path):
    """Read an RGBDV file back into a list of RgbdFrame."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != RGBDV_MAGIC:
            raise ValueError(f"{path}: not an RGBDV file")
        version, h, w, n = struct.unpack("<IIII", _read_exact(f, 16))
        if version != 1:
            raise ValueError(f"{path}: unsupported RGBDV version {version}")
        frames = []
        for _ in range(n):
            rgb = np.frombuffer(_read_exact(f, h * w * 3 * 4), dtype="<f4").reshape(h, w, 3)
            depth = np.frombuffer(_read_exact(f, h * w * 4), dtype="<f4").reshape(h, w)
            valid = np.frombuffer(_read_exact(f, h * w), dtype=np.uint8).reshape(h, w) != 0
            frames.append(RgbdFrame(rgb.astype(np.float64), depth.astype(np.float64), valid))
    return frames


def rgbdv_header(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4) != RGBDV_MAGIC:
            raise ValueError(f"{path}: not an RGBDV file")
        version, h, w, n = struct.unpack("<IIII", _read_exact(f, 16))
    return {"format": "RGBDV", "version": version, "height": h, "width": w, "frames": n}


def write_mask_pgm(path, mask: PartMask):
    m = mask.mask
    with open(path, "wb") as f:
        f.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        f.write(np.where(m, 255, 0).astype(np.uint8).tobytes())


def read_mask_pgm(path) -> PartMask:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM (P5) file")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(tok) for tok in line.split())
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError(f"{path}: expected maxval 255, got {maxval}")
        data = np.frombuffer(_read_exact(f, h * w), dtype=np.uint8).reshape(h, w)
    return PartMask(data > 0)


def write_tracks(path, positions: np.ndarray, visible: np.ndarray):
    positions = np.asarray(positions, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    m, two, frames = positions.shape
    if two != 2 or visible.shape != (m, frames):
        raise ShapeMismatch(f"positions {positions.shape} / visible {visible.shape} malformed")
    with open(path, "wb") as f:
        f.write(TRKS_MAGIC)
        f.write(struct.pack("<II", m, frames))
        f.write(positions.astype("<f4").tobytes())
        f.write(visible.astype(np.uint8).tobytes())


def read_tracks(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4) != TRKS_MAGIC:
            raise ValueError(f"{path}: not a TRKS file")
        m, frames = struct.unpack("<II", _read_exact(f, 8))
        positions = np.frombuffer(_read_exact(f, m * 2 * frames * 4), dtype="<f4")
        positions = positions.reshape(m, 2, frames).astype(np.float64)
        visible = np.frombuffer(_read_exact(f, m * frames), dtype=np.uint8).reshape(m, frames) != 0
    return positions, visible


def write_flow(path, displacements: np.ndarray, valid: np.ndarray):
    displacements = np.asarray(displacements, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    m, three, n = displacements.shape
    if three != 3 or valid.shape != (m, n):
        raise ShapeMismatch(f"displacements {displacements.shape} / valid {valid.shape} malformed")
    with open(path, "wb") as f:
        f.write(SFLW_MAGIC)
        f.write(struct.pack("<II", m, n))
        f.write(displacements.astype("<f4").tobytes())
        f.write(valid.astype(np.uint8).tobytes())


def read_flow(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4) != SFLW_MAGIC:
            raise ValueError(f"{path}: not an SFLW file")
        m, n = struct.unpack("<II", _read_exact(f, 8))
        disp = np.frombuffer(_read_exact(f, m * 3 * n * 4), dtype="<f4")
        disp = disp.reshape(m, 3, n).astype(np.float64)
        valid = np.frombuffer(_read_exact(f, m * n), dtype=np.uint8).reshape(m, n) != 0
    return disp, valid


def binary_header(path):
    """Identify and summarize any flowplan binary file (for `inspect`)."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == RGBDV_MAGIC:
        return rgbdv_header(path)
    with open(path, "rb") as f:
        f.read(4)
        if magic == TRKS_MAGIC:
            m, frames = struct.unpack("<II", _read_exact(f, 8))
            return {"format": "TRKS", "points": m, "frames": frames}
        if magic == SFLW_MAGIC:
            m, n = struct.unpack("<II", _read_exact(f, 8))
            return {"format": "SFLW", "points": m, "steps": n}
        if magic == DNSR_MAGIC:
            version, config_len = struct.unpack("<II", _read_exact(f, 8))
            config = json.loads(_read_exact(f, config_len).decode("utf-8"))
            return {"format": "DNSR", "version": version, "config": config}
    raise ValueError(f"{path}: unknown magic {magic!r}")


def write_checkpoint(path, config: dict, blobs: dict):
    """Write a DNSR checkpoint: config JSON plus float32 blobs.

    The config must carry a "blob_order" list naming every array in `blobs`;
    shapes are recorded alongside so loading needs no other source of truth.
    """
    order = config["blob_order"]
    if set(order) != set(blobs):
        raise ValueError("blob_order does not match the blobs provided")
    config = dict(config)
    config["blob_shapes"] = {name: list(blobs[name].shape) for name in order}
    payload = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(DNSR_MAGIC)
        f.write(struct.pack("<II", 1, len(payload)))
        f.write(payload)
        for name in order:
            f.write(np.ascontiguousarray(blobs[name], dtype="<f4").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4) != DNSR_MAGIC:
            raise ValueError(f"{path}: not a DNSR checkpoint")
        version, config_len = struct.unpack("<II", _read_exact(f, 8))
        if version != 1:
            raise ValueError(f"{path}: unsupported DNSR version {version}")
        config = json.loads(_read_exact(f, config_len).decode("utf-8"))
        blobs = {}
        for name in config["blob_order"]:
            shape = tuple(config["blob_shapes"][name])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(_read_exact(f, count * 4), dtype="<f4")
            blobs[name] = arr.reshape(shape).astype(np.float64)
    return config, blobs


def write_manifest(path, rgbdv_file, intrinsics: CameraIntrinsics, task,
                   mask_file=None, tracks_file=None, extra=None):
    doc = {
        "version": 1,
        "rgbdv": str(rgbdv_file),
        "intrinsics": intrinsics.to_dict(),
        "task": task,
    }
    if mask_file is not None:
        doc["mask"] = str(mask_file)
    if tracks_file is not None:
        doc["tracks"] = str(tracks_file)
    if extra:
        doc.update(extra)
    write_json(path, doc)


def read_manifest(path):
    doc = read_json(path)
    doc["intrinsics"] = CameraIntrinsics.from_dict(doc["intrinsics"])
    return doc


def write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def matrix_to_list(m: np.ndarray):
    """Row-major 16-float list for a 4x4 matrix."""
    return [float(x) for x in np.asarray(m, dtype=np.float64).reshape(16)]


def matrix_from_list(values):
    return np.asarray(values, dtype=np.float64).reshape(4, 4)
