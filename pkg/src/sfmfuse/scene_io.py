"""Readers and writers for pointmaps, SfM scenes, masks, PLY clouds and reports.

File formats
------------
PMAP
    ``b"PMAP1\\n"``, ASCII ``"width height\\n"``, then ``width*height*3``
    little-endian float32 values, row-major, xyz interleaved.
cameras.txt
    ``VIEW_ID QW QX QY QZ TX TY TZ FX FY CX CY W H`` per line
    (world-to-camera rotation quaternion and translation), ``#`` comments.
points.txt
    ``POINT_ID X Y Z R G B [VIEW_ID U V]*`` per line, ``#`` comments.
PGM
    Binary P5 only.  8-bit files hold binary masks (nonzero = set), 16-bit
    big-endian files hold label maps.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DanglingTrack,
    DimensionMismatch,
    MalformedFile,
    NonFiniteData,
    OutOfBoundsPixel,
)
from .geometry import SimTransform, quat_to_rotation, rotation_to_quat

PMAP_MAGIC = b"PMAP1\n"
_PMAP_DIMS = re.compile(rb"(0|[1-9][0-9]{0,8}) (0|[1-9][0-9]{0,8})\n")


# ── Domain types ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DensePointmap:
    """One view's pixel-aligned point grid, ``points[v, u] = (x, y, z)``."""

    view_id: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"pointmap grid must be (H, W, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteData("pointmap contains non-finite values")
        object.__setattr__(self, "points", pts)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    def flat(self) -> np.ndarray:
        return self.points.reshape(-1, 3)


@dataclass(frozen=True)
class CameraView:
    view_id: int
    world_to_camera: SimTransform
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if abs(self.world_to_camera.s - 1.0) > 1e-12:
            raise ValueError("camera extrinsics must be rigid (s = 1)")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -(self.world_to_camera.R.T @ self.world_to_camera.t)


@dataclass
class SfMScene:
    """Sparse SfM reconstruction.

    ``tracks[i]`` is an ``(k, 3)`` array of ``(view_id, u, v)`` rows for the
    point ``point_ids[i]``.
    """

    point_ids: np.ndarray
    xyz: np.ndarray
    rgb: np.ndarray
    tracks: list[np.ndarray]
    cameras: dict[int, CameraView] = field(default_factory=dict)

    def __post_init__(self):
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.rgb = np.asarray(self.rgb, dtype=np.uint8).reshape(-1, 3)
        self.tracks = [np.asarray(t, dtype=np.float64).reshape(-1, 3)
                       for t in self.tracks]
        n = len(self.point_ids)
        if not (len(self.xyz) == len(self.rgb) == len(self.tracks) == n):
            raise ValueError("point arrays and tracks differ in length")

    def __len__(self) -> int:
        return len(self.point_ids)

    def validate(self) -> None:
        """Cross-check ids, tracks and camera bounds; raise on the first problem."""
        if len(np.unique(self.point_ids)) != len(self.point_ids):
            raise MalformedFile("duplicate point ids")
        if not np.all(np.isfinite(self.xyz)):
            raise NonFiniteData("non-finite SfM point coordinates")
        for pid, track in zip(self.point_ids, self.tracks):
            for view, u, v in track:
                cam = self.cameras.get(int(view))
                if cam is None:
                    raise DanglingTrack(
                        f"point {pid} observed in view {int(view)} which has no camera")
                if not (0 <= u < cam.width and 0 <= v < cam.height):
                    raise OutOfBoundsPixel(
                        f"point {pid} pixel ({u}, {v}) outside view {int(view)}")

    def visible_in(self, view_id: int) -> np.ndarray:
        """Boolean mask of points whose track includes ``view_id``."""
        return np.array([bool(np.any(t[:, 0] == view_id)) for t in self.tracks],
                        dtype=bool)


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("label map must be 2-D")
        if np.any(lab < 0):
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "labels", lab.astype(np.int64))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("mask must be 2-D")
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def empty(cls, width: int, height: int) -> BinaryMask:
        return cls(np.zeros((height, width), dtype=bool))

    def is_empty(self) -> bool:
        return not self.bits.any()

    def count(self) -> int:
        return int(self.bits.sum())


# ── Pointmaps ───────────────────────────────────────────────────────────

def _view_from_name(path: Path) -> int:
    m = re.search(r"(\d+)$", path.stem)
    if m is None:
        raise ValueError(f"cannot infer view id from file name {path.name!r}; "
                         "pass view_id explicitly")
    return int(m.group(1))


def read_pointmap(path, view_id: int | None = None) -> DensePointmap:
    """Parse a PMAP file.

    The view id is not stored in the file; when ``view_id`` is omitted it is
    taken from the trailing digits of the file stem (``view_3.pmap`` -> 3).
    """
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(PMAP_MAGIC):
        raise MalformedFile(f"{path}: bad magic")
    m = _PMAP_DIMS.match(data, len(PMAP_MAGIC))
    if m is None:
        raise MalformedFile(f"{path}: bad dimension line")
    width, height = int(m.group(1)), int(m.group(2))
    payload = data[m.end():]
    expected = width * height * 3 * 4
    if len(payload) != expected:
        raise MalformedFile(
            f"{path}: expected {expected} payload bytes, found {len(payload)}")
    grid = np.frombuffer(payload, dtype="<f4").reshape(height, width, 3)
    if not np.all(np.isfinite(grid)):
        raise NonFiniteData(f"{path}: non-finite pointmap values")
    if view_id is None:
        view_id = _view_from_name(path)
    return DensePointmap(view_id, grid.astype(np.float64))


def write_pointmap(pointmap: DensePointmap, path) -> None:
    header = PMAP_MAGIC + f"{pointmap.width} {pointmap.height}\n".encode()
    payload = np.ascontiguousarray(pointmap.points, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


# ── SfM text files ──────────────────────────────────────────────────────

def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def read_cameras(path) -> dict[int, CameraView]:
    path = Path(path)
    cameras: dict[int, CameraView] = {}
    for lineno, tok in _data_lines(path):
        if len(tok) != 14:
            raise MalformedFile(f"{path}:{lineno}: expected 14 fields, got {len(tok)}")
        try:
            view = int(tok[0])
            q = np.array([float(x) for x in tok[1:5]])
            t = np.array([float(x) for x in tok[5:8]])
            fx, fy, cx, cy = (float(x) for x in tok[8:12])
            w, h = int(tok[12]), int(tok[13])
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from None
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))
                and np.linalg.norm(q) > 0):
            raise MalformedFile(f"{path}:{lineno}: invalid pose")
        if view in cameras:
            raise MalformedFile(f"{path}:{lineno}: duplicate view id {view}")
        try:
            cameras[view] = CameraView(view, SimTransform(1.0, quat_to_rotation(q), t),
                                       fx, fy, cx, cy, w, h)
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from None
    return cameras


def read_points(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[np.ndarray]]:
    path = Path(path)
    ids, xyz, rgb, tracks = [], [], [], []
    for lineno, tok in _data_lines(path):
        if len(tok) < 7 or (len(tok) - 7) % 3:
            raise MalformedFile(f"{path}:{lineno}: bad field count {len(tok)}")
        try:
            ids.append(int(tok[0]))
            xyz.append([float(x) for x in tok[1:4]])
            color = [int(x) for x in tok[4:7]]
            track = [(int(tok[i]), float(tok[i + 1]), float(tok[i + 2]))
                     for i in range(7, len(tok), 3)]
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from None
        if any(c < 0 or c > 255 for c in color):
            raise MalformedFile(f"{path}:{lineno}: color out of range")
        rgb.append(color)
        tracks.append(np.array(track, dtype=np.float64).reshape(-1, 3))
    return (np.array(ids, dtype=np.int64), np.array(xyz, dtype=np.float64).reshape(-1, 3),
            np.array(rgb, dtype=np.uint8).reshape(-1, 3), tracks)


def read_sfm_scene(points_path, cameras_path) -> SfMScene:
    cameras = read_cameras(cameras_path)
    ids, xyz, rgb, tracks = read_points(points_path)
    scene = SfMScene(ids, xyz, rgb, tracks, cameras)
    scene.validate()
    return scene


def write_cameras(cameras, path) -> None:
    lines = ["# VIEW_ID QW QX QY QZ TX TY TZ FX FY CX CY W H"]
    for cam in sorted(cameras, key=lambda c: c.view_id):
        q = rotation_to_quat(cam.world_to_camera.R)
        vals = [*q, *cam.world_to_camera.t, cam.fx, cam.fy, cam.cx, cam.cy]
        lines.append(" ".join([str(cam.view_id), *(repr(float(v)) for v in vals),
                               str(cam.width), str(cam.height)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_points(scene: SfMScene, path) -> None:
    lines = ["# POINT_ID X Y Z R G B [VIEW_ID U V]*"]
    for pid, p, c, track in zip(scene.point_ids, scene.xyz, scene.rgb, scene.tracks):
        fields = [str(int(pid)), *(repr(float(v)) for v in p), *(str(int(v)) for v in c)]
        for view, u, v in track:
            fields += [str(int(view)), repr(float(u)), repr(float(v))]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ── PGM masks and label maps ────────────────────────────────────────────

def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise MalformedFile(f"{path}: only binary P5 PGM is supported")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n#":
            raise MalformedFile(f"{path}: bad header")
        while pos < len(data) and data[pos:pos + 1] in b" \t\r\n":
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise MalformedFile(f"{path}: unterminated comment")
            pos = end
            continue
        m = re.compile(rb"[0-9]{1,9}").match(data, pos)
        if m is None:
            raise MalformedFile(f"{path}: bad header")
        fields.append(int(m.group()))
        pos = m.end()
    if data[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise MalformedFile(f"{path}: bad header terminator")
    pos += 1
    width, height, maxval = fields
    if not 0 < maxval < 65536:
        raise MalformedFile(f"{path}: maxval {maxval} out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    payload = data[pos:]
    if len(payload) != width * height * dtype.itemsize:
        raise MalformedFile(f"{path}: pixel data size mismatch")
    img = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    if img.size and img.max() > maxval:
        raise MalformedFile(f"{path}: sample exceeds maxval")
    return img


def _check_dims(img: np.ndarray, path: Path, expected) -> None:
    if expected is not None and (img.shape[1], img.shape[0]) != tuple(expected):
        raise DimensionMismatch(
            f"{path}: {img.shape[1]}x{img.shape[0]}, expected {expected[0]}x{expected[1]}")


def read_labelmap(path, expected_size: tuple[int, int] | None = None) -> LabelMap:
    """Read a label map; ``expected_size`` is ``(width, height)``."""
    path = Path(path)
    img = _read_pgm(path)
    _check_dims(img, path, expected_size)
    return LabelMap(img.astype(np.int64))


def read_mask(path, expected_size: tuple[int, int] | None = None) -> BinaryMask:
    path = Path(path)
    img = _read_pgm(path)
    if img.dtype.itemsize != 1:
        raise MalformedFile(f"{path}: binary masks must be 8-bit PGM")
    _check_dims(img, path, expected_size)
    return BinaryMask(img != 0)


def _write_pgm(img: np.ndarray, maxval: int, path) -> None:
    h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    dtype = ">u2" if maxval > 255 else "u1"
    Path(path).write_bytes(header + np.ascontiguousarray(img, dtype=dtype).tobytes())


def write_labelmap(labelmap: LabelMap, path) -> None:
    if labelmap.labels.size and labelmap.labels.max() > 65535:
        raise ValueError("labels above 65535 do not fit a 16-bit PGM")
    _write_pgm(labelmap.labels, 65535, path)


def write_mask(mask: BinaryMask, path) -> None:
    _write_pgm(mask.bits.astype(np.uint8) * 255, 255, path)


# ── PLY ─────────────────────────────────────────────────────────────────

_PLY_VERTEX = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                        ("red", "u1"), ("green", "u1"), ("blue", "u1")])


def write_ply(xyz, rgb, path) -> None:
    """Write a binary little-endian PLY with float32 positions and uchar colors."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rgb = np.asarray(rgb).reshape(-1, 3)
    if len(xyz) == 0:
        raise ValueError("refusing to write an empty point cloud")
    if len(rgb) != len(xyz):
        raise ValueError("positions and colors differ in length")
    verts = np.empty(len(xyz), dtype=_PLY_VERTEX)
    for i, name in enumerate("xyz"):
        verts[name] = xyz[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        verts[name] = rgb[:, i]
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(verts)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\n"
              "end_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(verts.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a PLY written by :func:`write_ply`."""
    path = Path(path)
    data = path.read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedFile(f"{path}: not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    m = re.fullmatch(r"element vertex (\d+)", header[2]) if len(header) > 2 else None
    expected_props = ["property float x", "property float y", "property float z",
                      "property uchar red", "property uchar green", "property uchar blue"]
    if (len(header) != 9 or header[1] != "format binary_little_endian 1.0"
            or m is None or header[3:] != expected_props):
        raise MalformedFile(f"{path}: unsupported PLY layout")
    n = int(m.group(1))
    payload = data[end + len(b"end_header\n"):]
    if len(payload) != n * _PLY_VERTEX.itemsize:
        raise MalformedFile(f"{path}: vertex data size mismatch")
    verts = np.frombuffer(payload, dtype=_PLY_VERTEX)
    xyz = np.stack([verts["x"], verts["y"], verts["z"]], axis=1)
    rgb = np.stack([verts["red"], verts["green"], verts["blue"]], axis=1)
    return xyz, rgb


# ── Transforms report ───────────────────────────────────────────────────

def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")


def read_report(path) -> dict:
    try:
        report = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: {exc}") from None
    for key in ("global", "locals", "inlier_count", "outlier_count"):
        if key not in report:
            raise MalformedFile(f"{path}: missing field {key!r}")
    return report
