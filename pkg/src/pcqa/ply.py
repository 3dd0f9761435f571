"""Minimal PLY reader/writer for colored point clouds.

Supports ``ascii 1.0`` and ``binary_little_endian 1.0``.  The vertex element
must carry ``x, y, z`` (float/double) and ``red, green, blue`` (uchar); any
other vertex property is skipped, as are elements other than ``vertex``.
"""
from __future__ import annotations

import os

import numpy as np

from .pointcloud import PointCloud

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_FORMATS = ("ascii", "binary_little_endian")


class PlyError(ValueError):
    """Malformed or unsupported PLY input.

    ``line`` is the 1-based text line (header and ASCII bodies) and
    ``offset`` the byte offset (binary bodies) where the problem was found.
    """

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.offset = offset


class _Element:
    def __init__(self, name, count, line):
        self.name = name
        self.count = count
        self.line = line
        self.props = []  # (name, dtype) or (name, (count_dtype, item_dtype))

    @property
    def has_list(self):
        return any(isinstance(t, tuple) for _, t in self.props)

    def dtype(self):
        return np.dtype([(name, "<" + t) for name, t in self.props])


def _parse_header(fh):
    first = fh.readline()
    if first.rstrip(b"\r\n") != b"ply":
        raise PlyError("missing 'ply' magic", line=1)
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyError("unexpected end of file in header (no end_header)", line=lineno)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise PlyError("non-ASCII bytes in header", line=lineno) from None
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        if key == "end_header":
            break
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if len(tok) != 3:
                raise PlyError("malformed format line", line=lineno)
            if tok[1] not in _FORMATS:
                raise PlyError(f"unsupported format keyword {tok[1]!r}", line=lineno)
            if tok[2] != "1.0":
                raise PlyError(f"unsupported format version {tok[2]!r}", line=lineno)
            fmt = tok[1]
        elif key == "element":
            if len(tok) != 3:
                raise PlyError("malformed element line", line=lineno)
            try:
                count = int(tok[2])
            except ValueError:
                raise PlyError(f"bad element count {tok[2]!r}", line=lineno) from None
            if count < 0:
                raise PlyError("negative element count", line=lineno)
            elements.append(_Element(tok[1], count, lineno))
        elif key == "property":
            if not elements:
                raise PlyError("property before any element", line=lineno)
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in _TYPES or tok[3] not in _TYPES:
                    raise PlyError("unknown list property type", line=lineno)
                elements[-1].props.append((tok[4], (_TYPES[tok[2]], _TYPES[tok[3]])))
            elif len(tok) == 3:
                if tok[1] not in _TYPES:
                    raise PlyError(f"unknown property type {tok[1]!r}", line=lineno)
                elements[-1].props.append((tok[2], _TYPES[tok[1]]))
            else:
                raise PlyError("malformed property line", line=lineno)
        else:
            raise PlyError(f"unknown header keyword {key!r} (missing end_header?)", line=lineno)
    if fmt is None:
        raise PlyError("header has no format line", line=lineno)
    return fmt, elements, lineno


def _check_vertex(elements, header_end):
    vertex = [e for e in elements if e.name == "vertex"]
    if not vertex:
        raise PlyError("no vertex element", line=header_end)
    v = vertex[0]
    types = dict((name, t) for name, t in v.props)
    for name in ("x", "y", "z"):
        if name not in types:
            raise PlyError(f"missing required vertex property {name!r}", line=v.line)
        if types[name] not in ("f4", "f8"):
            raise PlyError(f"vertex property {name!r} must be float or double", line=v.line)
    for name in ("red", "green", "blue"):
        if name not in types:
            raise PlyError(f"missing required vertex property {name!r}", line=v.line)
        if types[name] != "u1":
            raise PlyError(f"vertex property {name!r} must be uchar", line=v.line)
    if v.has_list:
        raise PlyError("list properties on the vertex element are not supported", line=v.line)
    if v.count < 1:
        raise PlyError("vertex element is empty", line=v.line)
    return v


def _skip_binary_element(buf, pos, el):
    """Advance past one binary element; list properties force a per-row walk."""
    if not el.has_list:
        return pos + el.count * el.dtype().itemsize
    for _ in range(el.count):
        for _, t in el.props:
            if isinstance(t, tuple):
                cdt = np.dtype("<" + t[0])
                if pos + cdt.itemsize > len(buf):
                    raise PlyError(f"truncated element {el.name!r}", offset=pos)
                n = int(np.frombuffer(buf, cdt, 1, pos)[0])
                pos += cdt.itemsize + n * np.dtype(t[1]).itemsize
            else:
                pos += np.dtype(t).itemsize
    return pos


def _read_binary(buf, body_start, elements, vertex):
    pos = body_start
    for el in elements:
        if el is vertex:
            break
        pos = _skip_binary_element(buf, pos, el)
    dt = vertex.dtype()
    need = vertex.count * dt.itemsize
    have = len(buf) - pos
    if have < need:
        raise PlyError(
            f"vertex count mismatch: header declares {vertex.count} vertices, "
            f"body holds {have // dt.itemsize}",
            offset=pos + (have // dt.itemsize) * dt.itemsize,
        )
    data = np.frombuffer(buf, dtype=dt, count=vertex.count, offset=pos)
    end = pos + need
    if vertex is elements[-1] and end != len(buf):
        extra = len(buf) - end
        raise PlyError(
            f"vertex count mismatch: {extra} trailing bytes after {vertex.count} declared vertices",
            offset=end,
        )
    return data


def _read_ascii(text_lines, first_line, elements, vertex):
    # text_lines[0] corresponds to file line first_line + 1
    cursor = 0

    def next_rows(count, what):
        nonlocal cursor
        rows = []
        while len(rows) < count:
            if cursor >= len(text_lines):
                if what == "vertex":
                    msg = (f"vertex count mismatch: header declares {vertex.count} vertices, "
                           f"found {len(rows)}")
                else:
                    msg = f"unexpected end of file in element {what!r}"
                raise PlyError(msg, line=first_line + cursor + 1)
            s = text_lines[cursor]
            cursor += 1
            if s.strip():
                rows.append((first_line + cursor, s))
        return rows

    for el in elements:
        if el is vertex:
            break
        next_rows(el.count, el.name)

    rows = next_rows(vertex.count, "vertex")
    nprops = len(vertex.props)
    flat = " ".join(s for _, s in rows).split()
    if len(flat) != vertex.count * nprops:
        for lineno, s in rows:
            if len(s.split()) != nprops:
                raise PlyError(f"expected {nprops} values per vertex, got {len(s.split())}", line=lineno)
    if vertex is elements[-1]:
        for k in range(cursor, len(text_lines)):
            if text_lines[k].strip():
                raise PlyError(
                    f"vertex count mismatch: extra data after {vertex.count} declared vertices",
                    line=first_line + k + 1,
                )
    try:
        values = np.array(flat, dtype=np.float64).reshape(vertex.count, nprops)
    except ValueError:
        for lineno, s in rows:
            try:
                [float(t) for t in s.split()]
            except ValueError:
                raise PlyError("non-numeric vertex value", line=lineno) from None
        raise
    out = np.empty(vertex.count, dtype=vertex.dtype())
    for j, (name, t) in enumerate(vertex.props):
        col = values[:, j]
        if t.startswith(("i", "u")):
            info = np.iinfo(np.dtype(t))
            if np.any(col != np.round(col)) or np.any(col < info.min) or np.any(col > info.max):
                bad = int(np.flatnonzero((col != np.round(col)) | (col < info.min) | (col > info.max))[0])
                raise PlyError(f"value out of range for {name!r}", line=rows[bad][0])
        out[name] = col
    return out


def load_ply(path) -> PointCloud:
    """Read a colored point cloud from an ASCII or little-endian binary PLY file."""
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh)
        body_start = fh.tell()
        fh.seek(0)
        buf = fh.read()
    vertex = _check_vertex(elements, header_lines)
    if fmt == "binary_little_endian":
        data = _read_binary(buf, body_start, elements, vertex)
    else:
        try:
            text = buf[body_start:].decode("ascii")
        except UnicodeDecodeError:
            raise PlyError("non-ASCII bytes in ascii body", line=header_lines + 1) from None
        data = _read_ascii(text.splitlines(), header_lines, elements, vertex)
    positions = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64)
    colors = np.column_stack([data["red"], data["green"], data["blue"]]).astype(np.uint8)
    return PointCloud(positions, colors)


def save_ply(cloud: PointCloud, path, encoding: str = "binary_little_endian", precision: str = "float"):
    """Write ``cloud`` positions and colors as PLY.

    ``precision`` is ``"float"`` (32-bit, the common dataset layout) or
    ``"double"``.  Lightness and normals are not written.
    """
    if encoding not in _FORMATS:
        raise ValueError(f"unsupported encoding {encoding!r}")
    if precision not in ("float", "double"):
        raise ValueError(f"unsupported precision {precision!r}")
    ftype = _TYPES[precision]
    n = len(cloud)
    header = (
        "ply\n"
        f"format {encoding} 1.0\n"
        f"element vertex {n}\n"
        f"property {precision} x\nproperty {precision} y\nproperty {precision} z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    dt = np.dtype([("x", "<" + ftype), ("y", "<" + ftype), ("z", "<" + ftype),
                   ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec = np.empty(n, dtype=dt)
    for j, name in enumerate("xyz"):
        rec[name] = cloud.positions[:, j]
    for j, name in enumerate(("red", "green", "blue")):
        rec[name] = cloud.colors[:, j]
    with open(os.fspath(path), "wb") as fh:
        fh.write(header.encode("ascii"))
        if encoding == "binary_little_endian":
            fh.write(rec.tobytes())
        else:
            digits = 9 if precision == "float" else 17
            fmt = f"%.{digits}g %.{digits}g %.{digits}g %d %d %d\n"
            fh.write("".join(fmt % tuple(r) for r in rec.tolist()).encode("ascii"))
