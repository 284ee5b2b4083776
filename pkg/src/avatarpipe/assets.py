"""Core data types and file I/O.

Images live in [0,1] as float arrays of shape (height, width, channels);
files are 8-bit PNGs (or any 8-bit raster Pillow can read). The morphable
model travels in a small binary container (magic ``AVF1``) documented in
:func:`save_model`. Landmarks are plain text, meshes are Wavefront-style
text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as _PILImage

from .errors import DimensionError, FormatError, ParseError, ValidationError

MODEL_MAGIC = b"AVF1"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# types


@dataclass
class Image:
    """A float raster in [0,1]. ``data`` is (height, width, channels),
    row-major, channels 1 (gray / mask) or 3 (RGB)."""

    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.channels not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {self.channels}")
        if self.data.shape != (self.height, self.width, self.channels):
            raise DimensionError(
                f"image data shape {self.data.shape} does not match "
                f"(h={self.height}, w={self.width}, c={self.channels})"
            )

    @classmethod
    def from_array(cls, arr) -> "Image":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise DimensionError(f"expected 2D or 3D array, got shape {arr.shape}")
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr)


# A segmentation mask is just a 1-channel Image; values > 0.5 mean "face".
SegMask = Image


@dataclass
class Mesh:
    """Triangle mesh with an independent UV index buffer.

    ``triangles`` and ``uv_triangles`` run in lockstep: face k takes its 3D
    corners from ``vertices[triangles[k]]`` and its texture corners from
    ``uv_coords[uv_triangles[k]]``. Keeping the two index buffers separate
    lets a closed surface carry a UV chart with a cut seam.
    """

    vertices: np.ndarray      # (V, 3) float
    triangles: np.ndarray     # (T, 3) int
    uv_coords: np.ndarray     # (U, 2) float in [0,1]^2
    uv_triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.uv_coords = np.asarray(self.uv_coords, dtype=np.float64)
        self.uv_triangles = np.asarray(self.uv_triangles, dtype=np.int64)
        if self.triangles.shape != self.uv_triangles.shape:
            raise DimensionError(
                f"triangles {self.triangles.shape} and uv_triangles "
                f"{self.uv_triangles.shape} must have equal shape"
            )
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValidationError("triangle index out of range")
        if self.uv_triangles.size and self.uv_triangles.max() >= len(self.uv_coords):
            raise ValidationError("uv triangle index out of range")


@dataclass
class MorphableModel:
    """Linear shape + texture model.

    Geometry decodes as ``mean_shape + identity_basis @ id + expression_basis
    @ expr`` (bases act on the flattened (3V,) vertex vector); texture decodes
    the same way over flattened (H*W*3,) UV colors.
    """

    mean_shape: np.ndarray        # (V, 3)
    identity_basis: np.ndarray    # (3V, K_id)
    expression_basis: np.ndarray  # (3V, K_exp)
    mean_texture: np.ndarray      # (uv_h, uv_w, 3)
    texture_basis: np.ndarray     # (uv_h*uv_w*3, K_tex)
    landmark_vertex_ids: np.ndarray  # (L,) int
    triangles: np.ndarray         # (T, 3) int
    uv_coords: np.ndarray         # (U, 2)
    uv_triangles: np.ndarray      # (T, 3) int

    def __post_init__(self):
        for name in ("mean_shape", "identity_basis", "expression_basis",
                     "mean_texture", "texture_basis", "uv_coords"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("landmark_vertex_ids", "triangles", "uv_triangles"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        v3 = 3 * self.num_vertices
        if self.identity_basis.shape[0] != v3:
            raise DimensionError("identity_basis rows must equal 3 * num_vertices")
        if self.expression_basis.shape[0] != v3:
            raise DimensionError("expression_basis rows must equal 3 * num_vertices")
        ht, wt, ct = self.mean_texture.shape
        if ct != 3:
            raise ValidationError("mean_texture must have 3 channels")
        if self.texture_basis.shape[0] != ht * wt * 3:
            raise DimensionError("texture_basis rows must equal uv_h * uv_w * 3")
        if self.triangles.shape != self.uv_triangles.shape:
            raise DimensionError("triangles and uv_triangles must have equal shape")
        if self.landmark_vertex_ids.size and self.landmark_vertex_ids.max() >= self.num_vertices:
            raise ValidationError("landmark vertex id out of range")

    @property
    def num_vertices(self) -> int:
        return self.mean_shape.shape[0]

    @property
    def num_identity(self) -> int:
        return self.identity_basis.shape[1]

    @property
    def num_expression(self) -> int:
        return self.expression_basis.shape[1]

    @property
    def num_texture(self) -> int:
        return self.texture_basis.shape[1]

    @property
    def uv_resolution(self):
        h, w, _ = self.mean_texture.shape
        return (h, w)

    def mesh_for(self, vertices) -> Mesh:
        """Wrap decoded vertex positions with this model's topology."""
        return Mesh(vertices=vertices, triangles=self.triangles,
                    uv_coords=self.uv_coords, uv_triangles=self.uv_triangles)


@dataclass
class LandmarkSet:
    """2D detector output: pixel positions plus per-point confidence."""

    points: np.ndarray       # (N, 2)
    confidences: np.ndarray  # (N,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise DimensionError(f"points must be (N, 2), got {self.points.shape}")
        if self.confidences.shape != (self.points.shape[0],):
            raise DimensionError("confidences length must match points")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class UVMap:
    """A texture in UV space plus a per-texel validity weight in [0,1].
    Texels with validity 0 carry color exactly (0,0,0)."""

    color: Image
    validity: np.ndarray  # (H, W)

    def __post_init__(self):
        self.validity = np.asarray(self.validity, dtype=np.float64)
        if self.validity.shape != (self.color.height, self.color.width):
            raise DimensionError("validity shape must match color raster")
        dead = self.validity <= 0.0
        if dead.any():
            data = np.array(self.color.data, dtype=np.float64, copy=True)
            data[dead] = 0.0
            self.color = Image.from_array(data)


# ---------------------------------------------------------------------------
# raster files


def load_image(path) -> Image:
    """Read an 8-bit grayscale or RGB raster into floats in [0,1].

    Anything else (16-bit, palette, alpha) raises FormatError rather than
    being silently converted.
    """
    try:
        pil = _PILImage.open(path)
        pil.load()
    except FileNotFoundError:
        raise
    except Exception as exc:  # Pillow raises a zoo of types for bad files
        raise ParseError(f"cannot decode raster file: {exc}", path=str(path))
    if pil.mode == "L":
        channels = 1
    elif pil.mode == "RGB":
        channels = 3
    else:
        raise FormatError(
            f"unsupported raster mode {pil.mode!r}; only 8-bit L and RGB are accepted",
            path=str(path),
        )
    arr = np.asarray(pil, dtype=np.float32) / 255.0
    if channels == 1:
        arr = arr[:, :, None]
    return Image.from_array(arr)


def save_image(image: Image, path):
    """Write as 8-bit PNG (or whatever the extension selects); values are
    clipped to [0,1] and rounded to the nearest of 256 levels."""
    arr = np.clip(np.asarray(image.data, dtype=np.float64), 0.0, 1.0)
    arr8 = np.round(arr * 255.0).astype(np.uint8)
    if image.channels == 1:
        pil = _PILImage.fromarray(arr8[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(arr8, mode="RGB")
    pil.save(path)


# ---------------------------------------------------------------------------
# landmark files


def load_landmarks(path) -> LandmarkSet:
    """Parse a landmark text file.

    One point per line: ``x y [confidence]``, whitespace separated,
    confidence defaulting to 1.0. ``#`` starts a comment; blank lines are
    skipped. Malformed lines raise ParseError with the line number.
    """
    points = []
    confs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) not in (2, 3):
                raise ParseError(
                    f"expected 'x y [confidence]', got {len(parts)} fields",
                    path=str(path), line=lineno,
                )
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise ParseError("non-numeric field", path=str(path), line=lineno)
            points.append(values[:2])
            confs.append(values[2] if len(values) == 3 else 1.0)
    return LandmarkSet(points=np.asarray(points, dtype=np.float64).reshape(-1, 2),
                       confidences=np.asarray(confs, dtype=np.float64))


def save_landmarks(landmarks: LandmarkSet, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x y confidence\n")
        for (x, y), c in zip(landmarks.points, landmarks.confidences):
            fh.write(f"{x:.8f} {y:.8f} {c:.6f}\n")


# ---------------------------------------------------------------------------
# model container

# section name -> (dtype code, expected shape as a function of the header)
_DT_F32, _DT_U32 = 0, 1

_SECTIONS = (
    ("mean_shape", _DT_F32, lambda h: (h["V"], 3)),
    ("identity_basis", _DT_F32, lambda h: (3 * h["V"], h["K_id"])),
    ("expression_basis", _DT_F32, lambda h: (3 * h["V"], h["K_exp"])),
    ("mean_texture", _DT_F32, lambda h: (h["uv_h"], h["uv_w"], 3)),
    ("texture_basis", _DT_F32, lambda h: (h["uv_h"] * h["uv_w"] * 3, h["K_tex"])),
    ("landmark_vertex_ids", _DT_U32, lambda h: (h["n_landmarks"],)),
    ("triangles", _DT_U32, lambda h: (h["n_triangles"], 3)),
    ("uv_coords", _DT_F32, lambda h: (h["n_uv_coords"], 2)),
    ("uv_triangles", _DT_U32, lambda h: (h["n_triangles"], 3)),
)

_HEADER_FIELDS = ("V", "K_id", "K_exp", "K_tex", "uv_w", "uv_h",
                  "n_landmarks", "n_triangles", "n_uv_coords")


def save_model(model: MorphableModel, path):
    """Serialize a model to the ``AVF1`` binary container.

    Layout, all little-endian: 4-byte magic ``AVF1``; u32 version (=1); nine
    u32 header counts (V, K_id, K_exp, K_tex, uv_w, uv_h, n_landmarks,
    n_triangles, n_uv_coords); then nine sections in a fixed order. Each
    section is: u8 name length, ASCII name, u8 dtype code (0=float32,
    1=uint32), u8 ndim, ndim u32 dims, raw array data. Dims are redundant
    with the header on purpose: the loader cross-checks them so a truncated
    or inconsistent file fails naming the offending section.
    """
    uv_h, uv_w = model.uv_resolution
    header = {
        "V": model.num_vertices, "K_id": model.num_identity,
        "K_exp": model.num_expression, "K_tex": model.num_texture,
        "uv_w": uv_w, "uv_h": uv_h,
        "n_landmarks": len(model.landmark_vertex_ids),
        "n_triangles": len(model.triangles),
        "n_uv_coords": len(model.uv_coords),
    }
    arrays = {
        "mean_shape": model.mean_shape, "identity_basis": model.identity_basis,
        "expression_basis": model.expression_basis,
        "mean_texture": model.mean_texture, "texture_basis": model.texture_basis,
        "landmark_vertex_ids": model.landmark_vertex_ids,
        "triangles": model.triangles, "uv_coords": model.uv_coords,
        "uv_triangles": model.uv_triangles,
    }
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<9I", *(header[k] for k in _HEADER_FIELDS)))
        for name, code, shape_fn in _SECTIONS:
            arr = np.asarray(arrays[name])
            expect = shape_fn(header)
            if tuple(arr.shape) != tuple(expect):
                raise DimensionError(
                    f"section {name}: array shape {arr.shape} does not match {expect}"
                )
            np_dtype = "<f4" if code == _DT_F32 else "<u4"
            raw = np.ascontiguousarray(arr, dtype=np_dtype)
            fh.write(struct.pack("<B", len(name)))
            fh.write(name.encode("ascii"))
            fh.write(struct.pack("<BB", code, raw.ndim))
            fh.write(struct.pack(f"<{raw.ndim}I", *raw.shape))
            fh.write(raw.tobytes())


def _read_exact(fh, n, path, section):
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError("unexpected end of file", path=path, section=section)
    return buf


def load_model(path) -> MorphableModel:
    """Read an ``AVF1`` model container (see :func:`save_model` for layout)."""
    spath = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ParseError(f"bad magic {magic!r}, not a model container", path=spath)
        (version,) = struct.unpack("<I", _read_exact(fh, 4, spath, "header"))
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported container version {version}", path=spath)
        counts = struct.unpack("<9I", _read_exact(fh, 36, spath, "header"))
        header = dict(zip(_HEADER_FIELDS, counts))
        if header["V"] == 0 or header["n_triangles"] == 0:
            raise ValidationError(f"{spath}: empty model (V={header['V']})")

        arrays = {}
        for name, code, shape_fn in _SECTIONS:
            (nlen,) = struct.unpack("<B", _read_exact(fh, 1, spath, name))
            got_name = _read_exact(fh, nlen, spath, name).decode("ascii", "replace")
            if got_name != name:
                raise ParseError(f"expected section {name!r}, found {got_name!r}",
                                 path=spath, section=name)
            got_code, ndim = struct.unpack("<BB", _read_exact(fh, 2, spath, name))
            if got_code != code:
                raise ValidationError(f"{spath}: section {name} has wrong dtype code")
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, spath, name))
            expect = tuple(shape_fn(header))
            if tuple(dims) != expect:
                raise ValidationError(
                    f"{spath}: section {name} dims {dims} do not match header-implied {expect}"
                )
            np_dtype = np.dtype("<f4") if code == _DT_F32 else np.dtype("<u4")
            nbytes = int(np.prod(dims)) * np_dtype.itemsize
            raw = _read_exact(fh, nbytes, spath, name)
            arr = np.frombuffer(raw, dtype=np_dtype).reshape(dims)
            if code == _DT_F32:
                arrays[name] = arr.astype(np.float64)
            else:
                arrays[name] = arr.astype(np.int64)
        if fh.read(1):
            raise ParseError("trailing bytes after final section", path=spath,
                             section="end")

    # index sanity, beyond what MorphableModel itself re-checks
    if arrays["triangles"].size and arrays["triangles"].max() >= header["V"]:
        raise ValidationError(f"{spath}: triangle index out of range")
    if arrays["uv_triangles"].size and arrays["uv_triangles"].max() >= header["n_uv_coords"]:
        raise ValidationError(f"{spath}: uv_triangle index out of range")
    return MorphableModel(**arrays)


# ---------------------------------------------------------------------------
# mesh files


def save_mesh(mesh: Mesh, path):
    """Write a Wavefront-style text mesh: v / vt / f lines, faces referencing
    both position and texture indices (1-based, ``v/vt``). The v coordinate
    is written as stored; no axis flip is applied."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.8f} {y:.8f} {z:.8f}\n")
        for u, v in mesh.uv_coords:
            fh.write(f"vt {u:.8f} {v:.8f}\n")
        for (a, b, c), (ta, tb, tc) in zip(mesh.triangles, mesh.uv_triangles):
            fh.write(f"f {a + 1}/{ta + 1} {b + 1}/{tb + 1} {c + 1}/{tc + 1}\n")


def load_mesh(path) -> Mesh:
    """Parse the subset of Wavefront meshes written by :func:`save_mesh`:
    triangular ``f`` entries of the form ``v/vt``. Unknown keywords are
    skipped; malformed lines raise ParseError with the line number."""
    verts, uvs, tris, uv_tris = [], [], [], []
    spath = str(path)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            try:
                if parts[0] == "v":
                    if len(parts) != 4:
                        raise ValueError("vertex needs 3 coordinates")
                    verts.append([float(p) for p in parts[1:]])
                elif parts[0] == "vt":
                    if len(parts) < 3:
                        raise ValueError("uv needs 2 coordinates")
                    uvs.append([float(parts[1]), float(parts[2])])
                elif parts[0] == "f":
                    if len(parts) != 4:
                        raise ValueError("only triangular faces are supported")
                    vi, ti = [], []
                    for token in parts[1:]:
                        fields = token.split("/")
                        if len(fields) < 2 or not fields[0] or not fields[1]:
                            raise ValueError("face entries must be v/vt")
                        vi.append(int(fields[0]) - 1)
                        ti.append(int(fields[1]) - 1)
                    tris.append(vi)
                    uv_tris.append(ti)
            except ValueError as exc:
                raise ParseError(str(exc), path=spath, line=lineno)
    if not verts or not tris:
        raise ValidationError(f"{spath}: mesh has no vertices or no faces")
    return Mesh(vertices=np.asarray(verts, dtype=np.float64),
                triangles=np.asarray(tris, dtype=np.int64),
                uv_coords=np.asarray(uvs, dtype=np.float64).reshape(-1, 2),
                uv_triangles=np.asarray(uv_tris, dtype=np.int64))
