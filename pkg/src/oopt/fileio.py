"""Geometry file I/O: OBJ, PLY (ascii + binary little-endian), XYZ.

Coordinates are stored in float32; ascii writers use the shortest
decimal that round-trips the float32 value, so writing the same object
twice is byte-identical and ascii/binary round trips preserve geometry
bit-for-bit.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FileFormatError, InvalidInputError, UnsupportedFormatError
from .extraction import TriMesh
from .geometry import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _fmt_f32(x) -> str:
    """Shortest decimal string that parses back to the same float32."""
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


def load_geometry(path):
    """Read a mesh or point cloud; the format follows the extension."""
    p = str(path)
    lower = p.lower()
    if lower.endswith(".obj"):
        return _load_obj(p)
    if lower.endswith(".ply"):
        return _load_ply(p)
    if lower.endswith(".xyz"):
        return _load_xyz(p)
    raise UnsupportedFormatError("unsupported extension (use .obj, .ply, or .xyz)", path=p)


def store_geometry(obj, path, format: str | None = None) -> None:
    """Write a PointCloud or TriMesh; deterministic byte output.

    ``format`` overrides the extension: obj, ply (binary), ply_ascii,
    ply_binary, xyz.
    """
    p = str(path)
    if format is None:
        lower = p.lower()
        if lower.endswith(".obj"):
            format = "obj"
        elif lower.endswith(".ply"):
            format = "ply"
        elif lower.endswith(".xyz"):
            format = "xyz"
        else:
            raise UnsupportedFormatError("unsupported extension (use .obj, .ply, or .xyz)", path=p)
    if format == "obj":
        _store_obj(obj, p)
    elif format in ("ply", "ply_binary"):
        _store_ply(obj, p, binary=True)
    elif format == "ply_ascii":
        _store_ply(obj, p, binary=False)
    elif format == "xyz":
        _store_xyz(obj, p)
    else:
        raise UnsupportedFormatError(f"unknown format {format!r}", path=p)


def _vertices_f32(obj) -> np.ndarray:
    pts = obj.vertices if isinstance(obj, TriMesh) else obj.points
    return np.asarray(pts, dtype=np.float32)


# ---------------------------------------------------------------------------
# OBJ


def _load_obj(path: str):
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FileFormatError("vertex needs 3 coordinates", path=path, line=lineno)
                try:
                    verts.append(tuple(float(x) for x in parts[1:4]))
                except ValueError:
                    raise FileFormatError("bad vertex coordinate", path=path, line=lineno) from None
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise FileFormatError("face needs at least 3 vertices", path=path, line=lineno)
                ids = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise FileFormatError(f"bad face index {tok!r}", path=path, line=lineno) from None
                    if i < 0:
                        i = len(verts) + 1 + i
                    if i < 1:
                        raise FileFormatError(f"face index {tok!r} out of range", path=path, line=lineno)
                    ids.append(i - 1)
                for a, b in zip(ids[1:], ids[2:]):
                    faces.append((ids[0], a, b))
            # Other records (vn, vt, o, g, s, usemtl, mtllib, l) are ignored.
    pts = np.asarray(verts, dtype=np.float32).reshape(-1, 3).astype(np.float64)
    if faces:
        farr = np.asarray(faces, dtype=np.int64)
        if farr.max() >= len(verts):
            raise FileFormatError(f"face index {int(farr.max()) + 1} exceeds vertex count {len(verts)}",
                                  path=path)
        try:
            return TriMesh(vertices=pts, faces=farr)
        except InvalidInputError as e:
            raise FileFormatError(f"invalid mesh: {e}", path=path) from None
    return PointCloud(points=pts)


def _store_obj(obj, path: str) -> None:
    pts = _vertices_f32(obj)
    lines = []
    for x, y, z in pts:
        lines.append(f"v {_fmt_f32(x)} {_fmt_f32(y)} {_fmt_f32(z)}\n")
    if isinstance(obj, TriMesh):
        for a, b, c in obj.faces:
            lines.append(f"f {a + 1} {b + 1} {c + 1}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


# ---------------------------------------------------------------------------
# PLY


def _load_ply(path: str):
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def next_line():
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise FileFormatError("unterminated header", path=path, offset=pos)
        line = data[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        return line

    if next_line() != "ply":
        raise FileFormatError("missing 'ply' magic", path=path, offset=0)
    fmt = None
    elements: list[dict] = []
    while True:
        line = next_line()
        if line == "end_header":
            break
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary"
            elif parts[1] == "binary_big_endian":
                raise UnsupportedFormatError("big-endian PLY is not supported", path=path)
            else:
                raise FileFormatError(f"unknown format {parts[1]!r}", path=path)
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise FileFormatError("property before any element", path=path)
            if parts[1] == "list":
                if parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise FileFormatError(f"unknown list types in {line!r}", path=path)
                elements[-1]["props"].append(("list", _PLY_TYPES[parts[2]],
                                              _PLY_TYPES[parts[3]], parts[4]))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise FileFormatError(f"unknown property type {parts[1]!r}", path=path)
                elements[-1]["props"].append(("scalar", _PLY_TYPES[parts[1]], parts[2]))
        else:
            raise FileFormatError(f"unexpected header line {line!r}", path=path)
    if fmt is None:
        raise FileFormatError("header missing 'format' line", path=path)

    vertices = None
    faces = None
    have_face_element = False
    for elem in elements:
        if elem["name"] == "vertex":
            vertices, pos = _ply_vertices(data, pos, elem, fmt, path)
        elif elem["name"] == "face":
            have_face_element = True
            faces, pos = _ply_faces(data, pos, elem, fmt, path)
        else:
            raise UnsupportedFormatError(f"unsupported element {elem['name']!r}", path=path)
    if vertices is None:
        raise FileFormatError("no vertex element", path=path)
    if fmt == "binary" and pos != len(data):
        raise FileFormatError(f"{len(data) - pos} trailing bytes", path=path, offset=pos)
    if have_face_element:
        farr = (np.asarray(faces, dtype=np.int64).reshape(-1, 3)
                if faces else np.zeros((0, 3), dtype=np.int64))
        if farr.size and farr.max() >= len(vertices):
            raise FileFormatError("face index exceeds vertex count", path=path)
        try:
            return TriMesh(vertices=vertices, faces=farr)
        except InvalidInputError as e:
            raise FileFormatError(f"invalid mesh: {e}", path=path) from None
    return PointCloud(points=vertices)


def _ply_vertices(data: bytes, pos: int, elem: dict, fmt: str, path: str):
    props = elem["props"]
    names = []
    for p in props:
        if p[0] == "list":
            raise UnsupportedFormatError("list property on vertex element", path=path)
        names.append(p[2])
    for want in ("x", "y", "z"):
        if want not in names:
            raise FileFormatError(f"vertex element lacks property {want!r}", path=path)
    cols = [names.index(w) for w in ("x", "y", "z")]
    count = elem["count"]
    if fmt == "ascii":
        rows = np.empty((count, 3), dtype=np.float32)
        for i in range(count):
            end = data.find(b"\n", pos)
            if end < 0:
                if i < count - 1 or pos >= len(data):
                    raise FileFormatError("truncated vertex data", path=path, offset=pos)
                end = len(data)
            toks = data[pos:end].split()
            pos = min(end + 1, len(data))
            if len(toks) != len(names):
                raise FileFormatError(f"vertex row {i} has {len(toks)} values, "
                                      f"expected {len(names)}", path=path, offset=pos)
            try:
                rows[i] = [float(toks[c]) for c in cols]
            except ValueError:
                raise FileFormatError(f"bad float in vertex row {i}", path=path, offset=pos) from None
        return rows.astype(np.float64), pos
    dt = np.dtype([(f"p{i}", "<" + p[1]) for i, p in enumerate(props)])
    nbytes = dt.itemsize * count
    if pos + nbytes > len(data):
        raise FileFormatError("truncated vertex data", path=path, offset=pos)
    rec = np.frombuffer(data, dtype=dt, count=count, offset=pos)
    out = np.stack([rec[f"p{c}"].astype(np.float32) for c in cols], axis=1)
    return out.astype(np.float64), pos + nbytes


def _ply_faces(data: bytes, pos: int, elem: dict, fmt: str, path: str):
    props = elem["props"]
    if len(props) != 1 or props[0][0] != "list" or props[0][3] not in ("vertex_indices", "vertex_index"):
        raise UnsupportedFormatError("face element must have a single vertex_indices list", path=path)
    count_dt = np.dtype("<" + props[0][1])
    index_dt = np.dtype("<" + props[0][2])
    faces: list[tuple[int, int, int]] = []
    if fmt == "ascii":
        for i in range(elem["count"]):
            end = data.find(b"\n", pos)
            if end < 0:
                if i < elem["count"] - 1 or pos >= len(data):
                    raise FileFormatError("truncated face data", path=path, offset=pos)
                end = len(data)
            toks = data[pos:end].split()
            pos = min(end + 1, len(data))
            if not toks:
                raise FileFormatError(f"empty face row {i}", path=path, offset=pos)
            n = int(toks[0])
            if len(toks) != n + 1:
                raise FileFormatError(f"face row {i} count mismatch", path=path, offset=pos)
            ids = [int(t) for t in toks[1:]]
            for a, b in zip(ids[1:], ids[2:]):
                faces.append((ids[0], a, b))
        return faces, pos
    for i in range(elem["count"]):
        if pos + count_dt.itemsize > len(data):
            raise FileFormatError("truncated face data", path=path, offset=pos)
        n = int(np.frombuffer(data, dtype=count_dt, count=1, offset=pos)[0])
        pos += count_dt.itemsize
        nbytes = index_dt.itemsize * n
        if pos + nbytes > len(data):
            raise FileFormatError("truncated face data", path=path, offset=pos)
        ids = np.frombuffer(data, dtype=index_dt, count=n, offset=pos).tolist()
        pos += nbytes
        for a, b in zip(ids[1:], ids[2:]):
            faces.append((ids[0], a, b))
    return faces, pos


def _store_ply(obj, path: str, binary: bool) -> None:
    pts = _vertices_f32(obj)
    faces = obj.faces if isinstance(obj, TriMesh) else None
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {len(pts)}",
              "property float x", "property float y", "property float z"]
    if faces is not None:
        header += [f"element face {len(faces)}",
                   "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())
            if faces is not None:
                for a, b, c in faces:
                    f.write(struct.pack("<Biii", 3, a, b, c))
        else:
            for x, y, z in pts:
                f.write(f"{_fmt_f32(x)} {_fmt_f32(y)} {_fmt_f32(z)}\n".encode("ascii"))
            if faces is not None:
                for a, b, c in faces:
                    f.write(f"3 {a} {b} {c}\n".encode("ascii"))


# ---------------------------------------------------------------------------
# XYZ


def _load_xyz(path: str) -> PointCloud:
    pts: list[tuple[float, float, float]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) != 3:
                raise FileFormatError(f"expected 3 values, got {len(toks)}", path=path, line=lineno)
            try:
                pts.append(tuple(float(t) for t in toks))
            except ValueError:
                raise FileFormatError("bad float value", path=path, line=lineno) from None
    arr = np.asarray(pts, dtype=np.float32).reshape(-1, 3).astype(np.float64)
    return PointCloud(points=arr)


def _store_xyz(obj, path: str) -> None:
    pts = _vertices_f32(obj)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for x, y, z in pts:
            f.write(f"{_fmt_f32(x)} {_fmt_f32(y)} {_fmt_f32(z)}\n")
