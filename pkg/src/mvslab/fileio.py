"""Interchange formats: MVSNet-convention camera text files, PFM depth maps,
pair-score files, binary PLY point clouds, and line-delimited JSON records."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import Camera
from .grids import ScalarField


class FileFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_cam(path, cam: Camera) -> None:
    lines = ["extrinsic"]
    for row in cam.pose:
        lines.append(" ".join(_fmt(x) for x in row))
    lines.append("")
    lines.append("intrinsic")
    for row in cam.k:
        lines.append(" ".join(_fmt(x) for x in row))
    lines.append("")
    lines.append(" ".join([_fmt(cam.depth_min), _fmt(cam.depth_interval),
                           _fmt(cam.depth_num), _fmt(cam.depth_max)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_cam(path) -> Camera:
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "extrinsic":
        raise FileFormatError("camera file must start with 'extrinsic'")
    try:
        pose = np.array([float(t) for t in tokens[1:17]]).reshape(4, 4)
    except (ValueError, IndexError) as exc:
        raise FileFormatError("malformed extrinsic matrix") from exc
    if len(tokens) < 18 or tokens[17] != "intrinsic":
        raise FileFormatError("expected 'intrinsic' after the 4x4 extrinsic")
    try:
        k = np.array([float(t) for t in tokens[18:27]]).reshape(3, 3)
        dmin, dint, dnum, dmax = (float(t) for t in tokens[27:31])
    except (ValueError, IndexError) as exc:
        raise FileFormatError("malformed intrinsic matrix or depth line") from exc
    if len(tokens) != 31:
        raise FileFormatError(f"trailing tokens in camera file: {tokens[31:]}")
    r = pose[:3, :3]
    if np.linalg.norm(r.T @ r - np.eye(3)) > 1e-4:
        raise FileFormatError("extrinsic rotation is not orthonormal")
    return Camera(k, pose, dmin, dmax, dint, int(dnum))


def write_pfm(path, field: ScalarField) -> None:
    """Grayscale PFM, little-endian (negative scale), bottom-to-top rows."""
    data = field.data.astype("<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{field.width} {field.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def read_pfm(path) -> ScalarField:
    with open(path, "rb") as f:
        magic = f.readline().rstrip()
        if magic == b"PF":
            raise FileFormatError("color PFM is not supported, expected grayscale 'Pf'")
        if magic != b"Pf":
            raise FileFormatError(f"bad PFM magic {magic!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FileFormatError("malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().rstrip())
        endian = "<" if scale < 0 else ">"
        payload = np.frombuffer(f.read(4 * w * h), dtype=endian + "f4")
        if payload.size != w * h:
            raise FileFormatError("truncated PFM payload")
    return ScalarField(np.flipud(payload.reshape(h, w)).astype(np.float64))


def write_pair_file(path, pair_scores: dict[int, list[tuple[int, float]]]) -> None:
    """MVSNet-style pair file: view count, then per reference a scored list."""
    lines = [str(len(pair_scores))]
    for ref_id in sorted(pair_scores):
        lines.append(str(ref_id))
        entries = pair_scores[ref_id]
        parts = [str(len(entries))]
        for vid, score in entries:
            parts.append(str(vid))
            parts.append(_fmt(score))
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pair_file(path) -> dict[int, list[tuple[int, float]]]:
    tokens = Path(path).read_text().split()
    it = iter(tokens)
    try:
        n = int(next(it))
        out: dict[int, list[tuple[int, float]]] = {}
        for _ in range(n):
            ref_id = int(next(it))
            k = int(next(it))
            entries = []
            for _ in range(k):
                vid = int(next(it))
                score = float(next(it))
                entries.append((vid, score))
            out[ref_id] = entries
    except (StopIteration, ValueError) as exc:
        raise FileFormatError("malformed pair file") from exc
    return out


PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {n}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
"""


def write_ply(path, points: np.ndarray, colors: np.ndarray) -> None:
    """Binary little-endian PLY with float32 xyz and uint8 rgb."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors).reshape(-1, 3)
    if len(points) != len(colors):
        raise FileFormatError("points and colors must have equal length")
    with open(path, "wb") as f:
        f.write(PLY_HEADER.format(n=len(points)).encode("ascii"))
        for p, c in zip(points.astype("<f4"), colors.astype(np.uint8)):
            f.write(struct.pack("<fffBBB", p[0], p[1], p[2], c[0], c[1], c[2]))


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise FileFormatError("missing PLY end_header")
    header = raw[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "format binary_little_endian 1.0" not in header[1]:
        raise FileFormatError("expected binary little-endian PLY")
    n = None
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
    if n is None:
        raise FileFormatError("missing vertex element")
    body = raw[end + len(b"end_header\n"):]
    if len(body) != 15 * n:
        raise FileFormatError(f"payload size {len(body)} != 15 * {n}")
    pts = np.empty((n, 3), dtype=np.float64)
    cols = np.empty((n, 3), dtype=np.uint8)
    for i in range(n):
        x, y, z, r, g, b = struct.unpack_from("<fffBBB", body, 15 * i)
        pts[i] = (x, y, z)
        cols[i] = (r, g, b)
    return pts, cols


def write_records(path, records: list[dict]) -> None:
    """Line-delimited JSON with stable key order."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
