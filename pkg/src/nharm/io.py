"""Plain-text meshes and fields, CSV tables and JSON documents.

Mesh files start with the header ``n <dim> V <nv> S <ns> B <nb>`` followed by
one line per vertex, one line per simplex (vertex ids) and one line per
boundary face (vertex ids, then the outward unit normal).  A field is stored
as a ``FIELD`` block after the mesh: ``key=value`` metadata lines, then
``VALUES <nv>`` and one nodal vector per line.  Every float is written with
17 significant digits, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fields import MapField
from .geometry.mesh import Domain


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _row(values) -> str:
    return " ".join(fmt(v) for v in values)


def mesh_lines(dom: Domain) -> list[str]:
    lines = [f"n {dom.n} V {dom.num_vertices} S {len(dom.simplices)} B {len(dom.boundary_faces)}"]
    lines += [_row(v) for v in dom.vertices]
    lines += [" ".join(str(int(i)) for i in s) for s in dom.simplices]
    lines += [" ".join(str(int(i)) for i in f) + " " + _row(nu) for f, nu in zip(dom.boundary_faces, dom.face_normals)]
    return lines


def field_lines(u: MapField, metadata: dict | None = None) -> list[str]:
    meta = {"claimed_degree": "" if u.claimed_degree is None else u.claimed_degree,
            "boundary_unit_norm": int(u.boundary_unit_norm)}
    meta.update(metadata or {})
    lines = ["FIELD"] + [f"{k}={v}" for k, v in meta.items()]
    lines.append(f"VALUES {u.dom.num_vertices}")
    lines += [_row(v) for v in u.values]
    return lines


def write_mesh(dom: Domain, path, field: MapField | None = None, metadata: dict | None = None) -> None:
    lines = mesh_lines(dom)
    if field is not None:
        lines += field_lines(field, metadata)
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, phi=None) -> tuple[Domain, MapField | None, dict]:
    """Domain (and the field block, if present) from a mesh file."""
    try:
        text = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read mesh file {path}: {exc}") from exc
    head = text[0].split()
    if len(head) != 8 or head[0::2] != ["n", "V", "S", "B"]:
        raise ConfigError(f"bad mesh header {text[0]!r}")
    n, nv, ns, nb = (int(x) for x in head[1::2])
    pos = 1
    V = np.array([[float(x) for x in line.split()] for line in text[pos : pos + nv]]).reshape(nv, n)
    pos += nv
    S = np.array([[int(x) for x in line.split()] for line in text[pos : pos + ns]], dtype=np.int64).reshape(ns, n + 1)
    pos += ns + nb
    dom = Domain.from_simplices(n, V, S, phi)
    if len(dom.boundary_faces) != nb:
        raise ConfigError(f"mesh declares {nb} boundary faces but its simplices have {len(dom.boundary_faces)}")
    if pos >= len(text) or text[pos].strip() != "FIELD":
        return dom, None, {}
    pos += 1
    meta = {}
    while not text[pos].startswith("VALUES"):
        k, _, v = text[pos].partition("=")
        meta[k.strip()] = v.strip()
        pos += 1
    count = int(text[pos].split()[1])
    vals = np.array([[float(x) for x in line.split()] for line in text[pos + 1 : pos + 1 + count]])
    deg = meta.get("claimed_degree", "")
    u = MapField(dom, vals, int(deg) if deg not in ("", "None") else None, meta.get("boundary_unit_norm") == "1")
    return dom, u, meta


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(str(_cell(x)) for x in np.ravel(v))
    return v


def write_csv(path, rows: list[dict], fieldnames: list[str] | None = None) -> None:
    """CSV with floats written by ``repr`` so values round-trip exactly."""
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k)) for k in fieldnames})


def to_jsonable(v):
    """Plain JSON types for numpy values, dataclasses and nested containers."""
    if isinstance(v, np.ndarray):
        return [to_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if hasattr(v, "__dataclass_fields__"):
        return {k: to_jsonable(getattr(v, k)) for k in v.__dataclass_fields__}
    return v


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n")
