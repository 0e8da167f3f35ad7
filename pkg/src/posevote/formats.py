"""On-disk formats: scene, manifest and report JSON plus per-scene CSV.

Lengths are meters and angles radians unless a field name carries a unit
(``rot_err_deg``, ``trans_err_cm``). Every JSON document has a
``format_version``; incompatible schema changes bump it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .core import CategoryPrior, InvalidArgumentError, Pose, PointCloud, SymmetryKind, SymmetryType
from .synth import Scene, SceneSpec
from .voting import FaceId, FaceVoteSet

FORMAT_VERSION = 1
UNITS = {"length": "m", "angle": "rad"}


class FormatError(InvalidArgumentError):
    pass


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temporary file in the same directory and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def sha256_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _check_version(d: dict, what: str) -> None:
    v = d.get("format_version")
    if v != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported format_version {v!r} (expected {FORMAT_VERSION})")


# --- symmetry / scenes -----------------------------------------------------------------

def symmetry_to_dict(sym: SymmetryType) -> dict:
    if sym.kind is SymmetryKind.NONE:
        return {"kind": "none"}
    return {"kind": sym.kind.value, "vector": sym.vector.tolist()}


def symmetry_from_dict(d: dict) -> SymmetryType:
    if d.get("kind", "none") == "none":
        return SymmetryType.none()
    return SymmetryType(d["kind"], np.array(d["vector"], dtype=float))


def scene_to_dict(scene: Scene, votes: FaceVoteSet | None = None) -> dict:
    d = {
        "format_version": FORMAT_VERSION,
        "units": UNITS,
        "spec": scene.spec.to_dict(),
        "gt": scene.gt.to_dict(),
        "prior": {"mean_size": scene.prior.mean_size.tolist(),
                  "symmetry": symmetry_to_dict(scene.prior.symmetry)},
        "points": scene.cloud.points.tolist(),
        "canonical": None if scene.cloud.canonical is None else scene.cloud.canonical.tolist(),
        "outlier_mask": scene.outlier_mask.astype(int).tolist(),
        "visible": sorted(f.value for f in scene.visible),
        "votes": None,
    }
    if votes is not None:
        d["votes"] = {"directions": votes.directions.tolist(), "distances": votes.distances.tolist(),
                      "confidences": votes.confidences.tolist()}
    return d


def scene_from_dict(d: dict) -> tuple[Scene, FaceVoteSet | None]:
    _check_version(d, "scene")
    try:
        spec = SceneSpec.from_dict(d["spec"])
        canonical = None if d.get("canonical") is None else np.array(d["canonical"], dtype=float)
        cloud = PointCloud(np.array(d["points"], dtype=float), canonical)
        prior = CategoryPrior(np.array(d["prior"]["mean_size"], dtype=float),
                              symmetry_from_dict(d["prior"]["symmetry"]))
        mask = np.array(d["outlier_mask"], dtype=bool)
        mask.flags.writeable = False
        scene = Scene(spec, cloud, Pose.from_dict(d["gt"]), prior,
                      frozenset(FaceId(f) for f in d["visible"]), mask)
        votes = None
        if d.get("votes") is not None:
            v = d["votes"]
            votes = FaceVoteSet(np.array(v["directions"]), np.array(v["distances"]),
                                np.array(v["confidences"]))
    except KeyError as exc:
        raise FormatError(f"scene: missing field {exc}") from None
    return scene, votes


def write_scene(path, scene: Scene, votes: FaceVoteSet | None = None) -> None:
    atomic_write_text(path, dumps(scene_to_dict(scene, votes)))


def read_scene(path) -> tuple[Scene, FaceVoteSet | None]:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    return scene_from_dict(d)


# --- manifest -------------------------------------------------------------------

def make_manifest(entries: list[dict], seed: int, cfg_hash: str) -> dict:
    """Manifest over scene entries ``{file, seed, shape, spec}``; no timestamps so
    identical inputs give identical hashes."""
    m = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "config_hash": cfg_hash,
        "seed": int(seed),
        "seeds": [e["seed"] for e in entries],
        "spec_hash": sha256_of([e["spec"] for e in entries]),
        "scenes": [{"file": e["file"], "seed": e["seed"], "shape": e["shape"]} for e in entries],
    }
    m["manifest_hash"] = sha256_of(m)
    return m


def read_manifest(path) -> dict:
    d = json.loads(Path(path).read_text())
    _check_version(d, "manifest")
    return d


# --- reports --------------------------------------------------------------------

CSV_FIELDS = ("scene", "shape", "seed", "rot_err_deg", "trans_err_cm", "iou",
              "box_rot_err_deg", "box_trans_err_cm", "refined")


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in CSV_FIELDS})
    return buf.getvalue()


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("rot_err_deg", "trans_err_cm", "iou", "box_rot_err_deg", "box_trans_err_cm"):
            r[k] = float(r[k])
        r["seed"] = int(r["seed"])
        r["refined"] = r["refined"] in ("True", "true", "1")
    return rows
