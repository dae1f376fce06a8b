"""Point-cloud container, invariant checks, and bit-exact file IO.

A cloud always materializes color and normal arrays; per-point presence is
tracked by a 2-bit modality mask and absent rows are exact zeros. Two file
formats are supported: a strict binary little-endian PLY subset for ingest
and export, and the native "UPCF" container which round-trips every field
bit-for-bit (PLY cannot carry modality masks, domains, or grid sizes).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

COLOR_BIT = 0x01
NORMAL_BIT = 0x02

NATIVE_MAGIC = b"UPCF"
NATIVE_VERSION = 1

NORMAL_NORM_TOL = 1e-4


class Domain(Enum):
    OBJECT = "object"
    INDOOR = "indoor"
    OUTDOOR = "outdoor"

    @property
    def code(self) -> int:
        return {"object": 0, "indoor": 1, "outdoor": 2}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "Domain":
        try:
            return {0: cls.OBJECT, 1: cls.INDOOR, 2: cls.OUTDOOR}[code]
        except KeyError as exc:
            raise FormatError(f"unknown domain code {code}") from exc

    @property
    def is_scene(self) -> bool:
        return self is not Domain.OBJECT


class ParseError(ValueError):
    """Malformed input file; message names the failing byte offset."""


class FormatError(ValueError):
    """Native-container violation: bad magic, version, or truncation."""


def _as_points(arr, name: str, n: int | None = None) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {out.shape}")
    if n is not None and out.shape[0] != n:
        raise ValueError(f"{name} has {out.shape[0]} rows, expected {n}")
    return out


@dataclass(frozen=True)
class PointCloud:
    """Immutable cloud: coordinates plus optional per-point color/normal.

    coords are meters (scenes) or normalized units (objects); native_grid is
    the domain's desired discretization granularity in the same unit.
    """

    coords: np.ndarray          # (N, 3) float64
    colors: np.ndarray          # (N, 3) float64 in [0, 1]; zero rows where absent
    normals: np.ndarray         # (N, 3) float64 unit length where present
    mask: np.ndarray            # (N,)  uint8, COLOR_BIT | NORMAL_BIT
    domain: Domain
    native_grid: float
    labels: np.ndarray | None = None   # (N,) int32 semantic ids

    def __post_init__(self):
        coords = _as_points(self.coords, "coords")
        n = coords.shape[0]
        if n < 1:
            raise ValueError("empty cloud")
        colors = _as_points(self.colors, "colors", n)
        normals = _as_points(self.normals, "normals", n)
        mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if mask.shape != (n,):
            raise ValueError(f"mask must have shape ({n},), got {mask.shape}")
        labels = self.labels
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.int32)
            if labels.shape != (n,):
                raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
        if not float(self.native_grid) > 0.0:
            raise ValueError(f"native_grid must be positive, got {self.native_grid}")
        for arr in (coords, colors, normals, mask) + ((labels,) if labels is not None else ()):
            arr.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "native_grid", float(self.native_grid))

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def has_colors(self) -> np.ndarray:
        return (self.mask & COLOR_BIT) != 0

    @property
    def has_normals(self) -> np.ndarray:
        return (self.mask & NORMAL_BIT) != 0

    def with_(self, **kwargs) -> "PointCloud":
        return replace(self, **kwargs)

    def take(self, idx: np.ndarray) -> "PointCloud":
        """Row subset in the given order (labels included when present)."""
        return PointCloud(
            coords=self.coords[idx], colors=self.colors[idx], normals=self.normals[idx],
            mask=self.mask[idx], domain=self.domain, native_grid=self.native_grid,
            labels=None if self.labels is None else self.labels[idx])


def make_cloud(coords, domain: Domain, native_grid: float,
               colors=None, normals=None, labels=None) -> PointCloud:
    """Build a cloud from raw channels; missing channels become zeros with cleared bits."""
    coords = _as_points(coords, "coords")
    n = coords.shape[0]
    mask = np.zeros(n, dtype=np.uint8)
    if colors is None:
        colors = np.zeros((n, 3))
    else:
        mask |= COLOR_BIT
    if normals is None:
        normals = np.zeros((n, 3))
    else:
        mask |= NORMAL_BIT
    return PointCloud(coords=coords, colors=colors, normals=normals, mask=mask,
                      domain=domain, native_grid=native_grid, labels=labels)


def clouds_equal(a: PointCloud, b: PointCloud) -> bool:
    """Exact (bit-level) equality on every field."""
    if a.domain is not b.domain or a.native_grid != b.native_grid or a.n != b.n:
        return False
    if (a.labels is None) != (b.labels is None):
        return False
    same = (np.array_equal(a.coords, b.coords) and np.array_equal(a.colors, b.colors)
            and np.array_equal(a.normals, b.normals) and np.array_equal(a.mask, b.mask))
    if a.labels is not None:
        same = same and np.array_equal(a.labels, b.labels)
    return same


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(pc: PointCloud) -> list[tuple[int | None, str]]:
    """Scan invariants; returns (point index, message) pairs, empty iff valid."""
    issues: list[tuple[int | None, str]] = []
    bad = ~np.isfinite(pc.coords).all(axis=1)
    for i in np.flatnonzero(bad):
        issues.append((int(i), "non-finite coordinate"))
    if np.any(pc.mask & ~np.uint8(COLOR_BIT | NORMAL_BIT)):
        issues.append((None, "mask uses undefined bits"))

    has_c = pc.has_colors
    zero_c = (pc.colors == 0.0).all(axis=1)
    for i in np.flatnonzero(~has_c & ~zero_c):
        issues.append((int(i), "color bit clear but color row nonzero"))
    in_range = (pc.colors >= 0.0).all(axis=1) & (pc.colors <= 1.0).all(axis=1)
    for i in np.flatnonzero(has_c & ~in_range):
        issues.append((int(i), "color outside [0, 1]"))

    has_n = pc.has_normals
    zero_n = (pc.normals == 0.0).all(axis=1)
    for i in np.flatnonzero(~has_n & ~zero_n):
        issues.append((int(i), "normal bit clear but normal row nonzero"))
    norms = np.linalg.norm(pc.normals, axis=1)
    off_unit = np.abs(norms - 1.0) > NORMAL_NORM_TOL
    for i in np.flatnonzero(has_n & off_unit):
        issues.append((int(i), f"normal norm {norms[i]:.6f} not unit"))
    return issues


# ---------------------------------------------------------------------------
# PLY subset (binary_little_endian 1.0)
# ---------------------------------------------------------------------------

_PLY_REQUIRED = ("x", "y", "z")
_PLY_COLOR = ("red", "green", "blue")
_PLY_NORMAL = ("nx", "ny", "nz")
_PLY_TYPES = {"float": ("<f4", 4), "uchar": ("<u1", 1)}


def read_ply(path: str | Path, domain: Domain = Domain.OBJECT,
             native_grid: float = 0.01) -> PointCloud:
    """Read the binary little-endian PLY subset: float x,y,z with optional
    uchar red,green,blue and float nx,ny,nz vertex properties.

    uchar colors are normalized to [0, 1] as value/255. Absent properties
    yield cleared modality bits and zero rows. Errors name the byte offset.
    """
    data = Path(path).read_bytes()
    header_end = data.find(b"end_header\n")
    if header_end < 0:
        raise ParseError("byte 0: missing end_header")
    payload_start = header_end + len(b"end_header\n")
    header = data[:header_end].decode("ascii", errors="replace")

    lines = header.split("\n")
    n_vertex = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    if not lines or lines[0].strip() != "ply":
        raise ParseError("byte 0: not a PLY file (missing 'ply' magic)")
    saw_format = False
    next_off = len(lines[0]) + 1
    for line in lines[1:]:
        line_off = next_off
        next_off += len(line) + 1
        stripped = line.strip()
        if not stripped or stripped.startswith("comment"):
            continue
        fields = stripped.split()
        if fields[0] == "format":
            if fields[1:] != ["binary_little_endian", "1.0"]:
                raise ParseError(f"byte {line_off}: unsupported format {stripped!r}")
            saw_format = True
        elif fields[0] == "element":
            if fields[1] == "vertex":
                n_vertex = int(fields[2])
                in_vertex = True
            else:
                in_vertex = False
                raise ParseError(f"byte {line_off}: unsupported element {fields[1]!r}")
        elif fields[0] == "property":
            if not in_vertex:
                raise ParseError(f"byte {line_off}: property outside vertex element")
            if len(fields) != 3:
                raise ParseError(f"byte {line_off}: unsupported property {stripped!r}")
            ptype, pname = fields[1], fields[2]
            if ptype not in _PLY_TYPES:
                raise ParseError(f"byte {line_off}: unsupported property type {ptype!r}")
            props.append((pname, ptype))
        else:
            raise ParseError(f"byte {line_off}: unexpected header line {stripped!r}")
    if not saw_format:
        raise ParseError("byte 0: missing format line")
    if n_vertex is None:
        raise ParseError("byte 0: missing vertex element")
    if n_vertex == 0:
        raise ParseError(f"byte {payload_start}: empty cloud")

    names = [p for p, _ in props]
    for req in _PLY_REQUIRED:
        if req not in names:
            raise ParseError(f"byte 0: missing required property {req!r}")
    for pname, ptype in props:
        if pname in _PLY_REQUIRED or pname in _PLY_NORMAL:
            if ptype != "float":
                raise ParseError(f"byte 0: property {pname!r} must be float")
        elif pname in _PLY_COLOR:
            if ptype != "uchar":
                raise ParseError(f"byte 0: property {pname!r} must be uchar")
        else:
            raise ParseError(f"byte 0: property {pname!r} outside supported subset")
    has_color = all(c in names for c in _PLY_COLOR)
    has_normal = all(c in names for c in _PLY_NORMAL)
    if any(c in names for c in _PLY_COLOR) and not has_color:
        raise ParseError("byte 0: partial color property set")
    if any(c in names for c in _PLY_NORMAL) and not has_normal:
        raise ParseError("byte 0: partial normal property set")

    dtype = np.dtype([(pname, _PLY_TYPES[ptype][0]) for pname, ptype in props])
    need = n_vertex * dtype.itemsize
    avail = len(data) - payload_start
    if avail < need:
        raise ParseError(
            f"byte {payload_start + avail}: truncated payload "
            f"(need {need} bytes, have {avail})")
    rows = np.frombuffer(data, dtype=dtype, count=n_vertex, offset=payload_start)

    coords = np.stack([rows[c].astype(np.float64) for c in _PLY_REQUIRED], axis=1)
    if not np.isfinite(coords).all():
        i = int(np.flatnonzero(~np.isfinite(coords).all(axis=1))[0])
        raise ParseError(f"byte {payload_start + i * dtype.itemsize}: non-finite coordinate "
                         f"at vertex {i}")
    colors = normals = None
    if has_color:
        colors = np.stack([rows[c].astype(np.float64) for c in _PLY_COLOR], axis=1) / 255.0
    if has_normal:
        normals = np.stack([rows[c].astype(np.float64) for c in _PLY_NORMAL], axis=1)
        if not np.isfinite(normals).all():
            i = int(np.flatnonzero(~np.isfinite(normals).all(axis=1))[0])
            raise ParseError(f"byte {payload_start + i * dtype.itemsize}: non-finite normal "
                             f"at vertex {i}")
    return make_cloud(coords, domain, native_grid, colors=colors, normals=normals)


def write_ply(pc: PointCloud, path: str | Path, color_u8: np.ndarray | None = None) -> None:
    """Write x,y,z (float) plus uchar colors when present (or given explicitly)."""
    rgb = color_u8
    if rgb is None and bool(pc.has_colors.all()):
        rgb = np.clip(np.rint(pc.colors * 255.0), 0, 255).astype(np.uint8)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {pc.n}",
              "property float x", "property float y", "property float z"]
    if rgb is not None:
        fields += [("red", "<u1"), ("green", "<u1"), ("blue", "<u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    rows = np.zeros(pc.n, dtype=np.dtype(fields))
    rows["x"], rows["y"], rows["z"] = (pc.coords[:, i].astype(np.float32) for i in range(3))
    if rgb is not None:
        rows["red"], rows["green"], rows["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    Path(path).write_bytes("\n".join(header).encode("ascii") + b"\n" + rows.tobytes())


# ---------------------------------------------------------------------------
# native container (UPCF v1)
# ---------------------------------------------------------------------------
# magic "UPCF" | u32 version | u8 domain | f64 native_grid | u64 N |
# coords f64*3N | colors f64*3N | normals f64*3N | mask u8*N |
# labels_present u8 | labels i32*N (iff present)
#
# Float channels are stored as f64 (not f32): rescaling and partition
# equivalence are exact only with full precision end to end, and the
# round-trip contract is bit-for-bit.

def write_native(pc: PointCloud, path: str | Path) -> None:
    parts = [NATIVE_MAGIC,
             struct.pack("<IBdQ", NATIVE_VERSION, pc.domain.code, pc.native_grid, pc.n),
             pc.coords.astype("<f8").tobytes(),
             pc.colors.astype("<f8").tobytes(),
             pc.normals.astype("<f8").tobytes(),
             pc.mask.astype("<u1").tobytes(),
             struct.pack("<B", 0 if pc.labels is None else 1)]
    if pc.labels is not None:
        parts.append(pc.labels.astype("<i4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_native(path: str | Path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != NATIVE_MAGIC:
        raise FormatError(f"bad magic in {path}")
    pos = 4
    try:
        version, domain_code, native_grid, n = struct.unpack_from("<IBdQ", data, pos)
    except struct.error as exc:
        raise FormatError(f"truncated header in {path}") from exc
    pos += struct.calcsize("<IBdQ")
    if version != NATIVE_VERSION:
        raise FormatError(f"unsupported version {version} in {path}")
    if n < 1:
        raise FormatError(f"empty cloud in {path}")

    def grab(dtype: str, count: int) -> np.ndarray:
        nonlocal pos
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        if arr.size != count:
            raise FormatError(f"truncated payload at byte {pos} in {path}")
        pos += arr.nbytes
        return arr

    coords = grab("<f8", 3 * n).reshape(n, 3)
    colors = grab("<f8", 3 * n).reshape(n, 3)
    normals = grab("<f8", 3 * n).reshape(n, 3)
    mask = grab("<u1", n)
    labels_present = grab("<u1", 1)[0]
    labels = grab("<i4", n).reshape(n) if labels_present else None
    return PointCloud(coords=coords, colors=colors, normals=normals, mask=mask,
                      domain=Domain.from_code(domain_code), native_grid=native_grid,
                      labels=labels)
