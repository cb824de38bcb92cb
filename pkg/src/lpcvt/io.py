"""Text file formats: domains, tensor fields, seeds, traces and RVD export.

* half-space file: one ``nx ny nz d`` per line, meaning ``n . x <= d``
* surface mesh: Wavefront OBJ (``v``/``f``, triangles only) or OFF
* tensor field: ``x y z g11 g12 g13 g22 g23 g33`` per line; a single line
  is a constant field and its position is ignored
* seeds: ``x y z`` per line, 17 significant digits
* trace: CSV with header ``iter,F,grad_inf_norm,step_size``

Blank lines and ``#`` comments are skipped in every input format.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .aniso_field import AnisotropyTensor, TensorField, spectral_factor
from .errors import InputError, IoError, NonTriangleFace, ParseError
from .rvd import Domain

TRACE_HEADER = ("iter", "F", "grad_inf_norm", "step_size")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    for lineno, line in enumerate(raw, start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            yield lineno, body


def _floats(tokens, path, lineno, count=None):
    if count is not None and len(tokens) != count:
        raise ParseError(f"expected {count} numbers, got {len(tokens)}", path, lineno)
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"not a number: {exc}", path, lineno) from None
    if not all(np.isfinite(vals)):
        raise ParseError("non-finite value", path, lineno)
    return vals


# -- volume domains ----------------------------------------------------------


def read_halfspaces(path) -> np.ndarray:
    rows = [_floats(body.split(), path, n, 4) for n, body in _read_lines(path)]
    if not rows:
        raise ParseError("no half-spaces found", path)
    return np.array(rows)


# -- surface meshes ----------------------------------------------------------


def read_obj(path):
    """Vertices and triangles of an OBJ file.

    Face entries may be ``v``, ``v/vt``, ``v//vn`` or ``v/vt/vn``; negative
    indices count back from the last vertex read.  Other records are ignored.
    """
    verts, tris = [], []
    for n, body in _read_lines(path):
        tok = body.split()
        if tok[0] == "v":
            if len(tok) < 4:
                raise ParseError("vertex needs 3 coordinates", path, n)
            verts.append(_floats(tok[1:4], path, n))
        elif tok[0] == "f":
            if len(tok) != 4:
                raise NonTriangleFace(f"face with {len(tok) - 1} vertices", path, n)
            face = []
            for t in tok[1:]:
                try:
                    idx = int(t.split("/")[0])
                except ValueError:
                    raise ParseError(f"bad face index {t!r}", path, n) from None
                if idx == 0:
                    raise ParseError("OBJ indices start at 1", path, n)
                idx = idx - 1 if idx > 0 else len(verts) + idx
                if not 0 <= idx < len(verts):
                    raise ParseError(f"face index {t!r} out of range", path, n)
                face.append(idx)
            tris.append(face)
    if not tris:
        raise ParseError("no faces found", path)
    return np.array(verts, dtype=float), np.array(tris, dtype=np.intp)


def read_off(path):
    lines = list(_read_lines(path))
    if not lines:
        raise ParseError("empty file", path)
    n, first = lines[0]
    tok = first.split()
    if tok[0] != "OFF":
        raise ParseError("missing OFF header", path, n)
    rest = lines[1:]
    if len(tok) > 1:
        rest = [(n, " ".join(tok[1:]))] + rest
    if not rest:
        raise ParseError("missing element counts", path, n)
    n, counts = rest[0]
    try:
        nv, nf = (int(c) for c in counts.split()[:2])
    except ValueError:
        raise ParseError("bad element counts", path, n) from None
    body = rest[1:]
    if len(body) < nv + nf:
        raise ParseError(f"expected {nv} vertices and {nf} faces", path, body[-1][0] if body else n)
    verts = [_floats(b.split()[:3], path, ln, 3) for ln, b in body[:nv]]
    tris = []
    for ln, b in body[nv : nv + nf]:
        tok = b.split()
        try:
            cnt = int(tok[0])
            idx = [int(t) for t in tok[1 : 1 + cnt]]
        except ValueError:
            raise ParseError("bad face record", path, ln) from None
        if cnt != 3:
            raise NonTriangleFace(f"face with {cnt} vertices", path, ln)
        if len(idx) != 3 or min(idx) < 0 or max(idx) >= nv:
            raise ParseError("face index out of range", path, ln)
        tris.append(idx)
    return np.array(verts, dtype=float), np.array(tris, dtype=np.intp)


def load_domain(path, mode: str = "volume") -> Domain:
    """Parse a half-space file (volume) or an OBJ/OFF mesh (surface)."""
    if mode == "volume":
        return Domain.from_halfspaces(read_halfspaces(path))
    if mode != "surface":
        raise InputError(f"unknown mode {mode!r}")
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        v, t = read_off(path)
    elif suffix == ".obj":
        v, t = read_obj(path)
    else:
        # sniff the header
        first = next(_read_lines(path), (0, ""))[1]
        v, t = read_off(path) if first.startswith("OFF") else read_obj(path)
    return Domain.from_mesh(v, t)


# -- tensor fields -----------------------------------------------------------


def load_field(path) -> TensorField:
    samples = []
    for n, body in _read_lines(path):
        vals = _floats(body.split(), path, n, 9)
        tensor = AnisotropyTensor(tuple(vals[3:]))
        try:
            spectral_factor(tensor)
        except InputError as exc:
            raise ParseError(str(exc), path, n) from exc
        samples.append((vals[:3], tensor))
    if not samples:
        raise ParseError("tensor field file has no samples", path)
    if len(samples) == 1:
        return TensorField.constant(samples[0][1])
    return TensorField.nearest(samples)


# -- seeds and traces --------------------------------------------------------


def read_seeds(path) -> np.ndarray:
    rows = [_floats(body.split(), path, n, 3) for n, body in _read_lines(path)]
    if not rows:
        raise ParseError("no seeds found", path)
    return np.array(rows)


def _open_out(path):
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_seeds(path, W) -> None:
    W = np.asarray(W, dtype=float).reshape(-1, 3)
    with _open_out(path) as fh:
        for w in W:
            fh.write(" ".join(_fmt(c) for c in w) + "\n")


def write_trace(path, trace) -> None:
    with _open_out(path) as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_HEADER)
        for row in trace:
            out.writerow([int(row.iter), _fmt(row.F), _fmt(row.grad_inf_norm), _fmt(row.step_size)])


def read_trace(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        (int(r["iter"]), float(r["F"]), float(r["grad_inf_norm"]), float(r["step_size"]))
        for r in rows
    ]


def export_rvd_obj(path, rvd) -> None:
    """Write every cell's boundary polygons as one OBJ group per seed."""
    with _open_out(path) as fh:
        fh.write(f"# restricted Voronoi diagram, {len(rvd.cells)} cells\n")
        base = 1
        for cell in rvd.cells:
            if cell.empty:
                continue
            fh.write(f"g cell_{cell.seed_index}\n")
            for v in cell.vertices:
                fh.write("v " + " ".join(_fmt(c) for c in v) + "\n")
            for poly in cell.polygons:
                fh.write("f " + " ".join(str(base + i) for i in poly) + "\n")
            base += len(cell.vertices)


def write_outputs(prefix, W, trace, rvd=None) -> list:
    """Write ``PREFIX.seeds.txt``, ``PREFIX.trace.csv`` and optionally
    ``PREFIX.rvd.obj``; returns the paths written."""
    prefix = os.fspath(prefix)
    paths = [prefix + ".seeds.txt", prefix + ".trace.csv"]
    write_seeds(paths[0], W)
    write_trace(paths[1], trace)
    if rvd is not None:
        paths.append(prefix + ".rvd.obj")
        export_rvd_obj(paths[2], rvd)
    return paths
