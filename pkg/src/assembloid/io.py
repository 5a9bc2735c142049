"""File formats: PLY point clouds, pose JSON and scene directories.

Scene directory layout::

    <scene_dir>/
        scene.json      {"scene_id", "label", "seed", "parts": [{"id", "ply", "pose"}]}
        part_000.ply    canonical cloud of part 0
        ...
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Part, Pose, Scene, as_cloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def write_ply(path, cloud, binary: bool = True) -> None:
    """Write xyz vertices as doubles, so a round trip is lossless."""
    cloud = as_cloud(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(cloud)}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(cloud, dtype="<f8").tobytes())
        else:
            lines = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.tolist())
            f.write(lines.encode("ascii"))


def read_ply(path) -> np.ndarray:
    """Read the x, y, z vertex properties of an ascii or little-endian PLY.

    Other vertex properties are skipped; elements after ``vertex`` are ignored.
    """
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError(f"{path}: not a PLY file")
    nl = data.index(b"\n", end)
    header = data[:nl].decode("ascii").splitlines()
    body = data[nl + 1:]

    fmt = None
    elements = []  # (name, count, [(prop, dtype)])
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], "list"))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise PlyError(f"{path}: unknown property type {tok[1]}")
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"{path}: unsupported format {fmt}")
    if not elements or elements[0][0] != "vertex":
        raise PlyError(f"{path}: first element must be 'vertex'")
    _, count, props = elements[0]
    if any(t == "list" for _, t in props):
        raise PlyError(f"{path}: list properties on vertices are not supported")
    names = [n for n, _ in props]
    if not {"x", "y", "z"} <= set(names):
        raise PlyError(f"{path}: vertex element lacks x/y/z")

    if fmt == "ascii":
        rows = body.decode("ascii").split("\n")[:count]
        table = np.array([[float(v) for v in r.split()[:len(props)]] for r in rows], dtype=np.float64)
        table = table.reshape(count, len(props))
        cols = {n: table[:, i] for i, n in enumerate(names)}
    else:
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        rec = np.frombuffer(body, dtype=dtype, count=count)
        cols = {n: rec[n].astype(np.float64) for n in names}
    return np.stack([cols["x"], cols["y"], cols["z"]], axis=1)


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_scene(directory, scene: Scene, scene_id: str, seed=None, extra: dict | None = None) -> Path:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create scene directory {d}: {e}") from e
    parts = []
    for k, part in enumerate(scene.parts):
        name = f"part_{k:03d}.ply"
        write_ply(d / name, part.canonical)
        parts.append({"id": part.id, "ply": name, "pose": part.pose.to_json()})
    manifest = {"scene_id": scene_id, "label": scene.label, "seed": seed, "parts": parts}
    if extra:
        manifest.update(extra)
    write_json(d / "scene.json", manifest)
    return d


def load_scene(directory) -> tuple[Scene, dict]:
    d = Path(directory)
    manifest = json.loads((d / "scene.json").read_text())
    parts = [Part(p["id"], read_ply(d / p["ply"]), Pose.from_json(p["pose"])) for p in manifest["parts"]]
    return Scene(tuple(parts), manifest["label"]), manifest


def snapshot_ply(path, scene: Scene) -> None:
    write_ply(path, scene.render())
