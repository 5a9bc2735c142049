"""Assembly quality metrics: SCD, PA, fPA, RMSE(Trans), RMSE(Rot)."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import CorrespondenceError, InvalidInputError, Scene, chamfer, geodesic_rotation_distance

DEFAULT_THRE = 0.01

# report column layout: SCD x1e-3, PA %, RMSE(Trans) x1e-2, RMSE(Rot), fPA %
TABLE_COLUMNS = ("SCD(x1e-3)", "PA(%)", "RMSE(Trans)(x1e-2)", "RMSE(Rot)", "fPA(%)")


def _check_pair(pred: Scene, gt: Scene) -> None:
    if len(pred.parts) != len(gt.parts):
        raise CorrespondenceError(f"part counts differ: {len(pred.parts)} vs {len(gt.parts)}")


def scd(pred: Scene, gt: Scene) -> float:
    """Chamfer distance between the two fully rendered shapes."""
    a, b = pred.render(), gt.render()
    if len(a) == 0 or len(b) == 0:
        raise InvalidInputError("empty scene")
    return chamfer(a, b)


def part_chamfers(pred: Scene, gt: Scene) -> np.ndarray:
    """``C[i, j] = chamfer(pred part i, gt part j)``."""
    _check_pair(pred, gt)
    p = [part.placed() for part in pred.parts]
    g = [part.placed() for part in gt.parts]
    return np.array([[chamfer(a, b) for b in g] for a in p])


def part_accuracy(pred: Scene, gt: Scene, thre: float = DEFAULT_THRE) -> float:
    _check_pair(pred, gt)
    cds = [chamfer(a.placed(), b.placed()) for a, b in zip(pred.parts, gt.parts)]
    return float(np.mean(np.asarray(cds) < thre))


def fair_matches(pred: Scene, gt: Scene, table: np.ndarray | None = None) -> np.ndarray:
    """Index of the chamfer-nearest gt part for every predicted part (with replacement)."""
    table = part_chamfers(pred, gt) if table is None else table
    return table.argmin(axis=1)


def fair_part_accuracy(pred: Scene, gt: Scene, thre: float = DEFAULT_THRE) -> float:
    table = part_chamfers(pred, gt)
    best = table[np.arange(len(table)), fair_matches(pred, gt, table)]
    return float(np.mean(best < thre))


def rmse_translation(pred: Scene, gt: Scene) -> float:
    _check_pair(pred, gt)
    d2 = [float(((a.pose.trans - b.pose.trans) ** 2).sum()) for a, b in zip(pred.parts, gt.parts)]
    return float(np.sqrt(np.mean(d2)))


def _wrap_deg(x):
    return (np.asarray(x) + 180.0) % 360.0 - 180.0


def rotation_errors(pred: Scene, gt: Scene, mode: str = "geodesic") -> np.ndarray:
    """Per-part rotation error in degrees.

    ``geodesic`` is the relative rotation angle. ``euler`` is the RMS over the
    three xyz Euler angle differences, each wrapped to [-180, 180).
    """
    _check_pair(pred, gt)
    if mode == "geodesic":
        return np.array([geodesic_rotation_distance(a.pose.quat, b.pose.quat) for a, b in zip(pred.parts, gt.parts)])
    if mode == "euler":
        def eul(s):
            q = np.array([p.pose.quat for p in s.parts])
            return Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_euler("xyz", degrees=True)
        diff = _wrap_deg(eul(pred) - eul(gt))
        return np.sqrt((diff ** 2).mean(axis=1))
    raise ValueError(f"unknown rotation mode {mode!r}")


def rmse_rotation(pred: Scene, gt: Scene, mode: str = "geodesic") -> float:
    return float(np.sqrt(np.mean(rotation_errors(pred, gt, mode) ** 2)))


@dataclass
class MetricsReport:
    scd: float
    pa: float
    fpa: float
    rmse_trans: float
    rmse_rot: float
    rot_mode: str = "geodesic"
    thre: float = DEFAULT_THRE
    per_part: list = field(default_factory=list)

    def table_row(self) -> list[float]:
        return [self.scd * 1e3, self.pa * 100.0, self.rmse_trans * 1e2, self.rmse_rot, self.fpa * 100.0]

    def to_json(self) -> dict:
        out = asdict(self)
        out["table1"] = dict(zip(TABLE_COLUMNS, self.table_row()))
        out["chamfer_convention"] = "squared nearest-neighbour distance, mean per direction, summed"
        return out


def evaluate(pred: Scene, gt: Scene, thre: float = DEFAULT_THRE, rot_mode: str = "geodesic") -> MetricsReport:
    table = part_chamfers(pred, gt)
    idx = np.arange(len(table))
    match = table.argmin(axis=1)
    same = table[idx, idx]
    fair = table[idx, match]
    rot = rotation_errors(pred, gt, rot_mode)
    per_part = [
        {
            "part_id": pred.parts[i].id,
            "chamfer": float(same[i]),
            "fair_match": int(match[i]),
            "fair_chamfer": float(fair[i]),
            "trans_err": float(np.linalg.norm(pred.parts[i].pose.trans - gt.parts[i].pose.trans)),
            "rot_err": float(rot[i]),
        }
        for i in idx
    ]
    report = MetricsReport(
        scd=scd(pred, gt),
        pa=float(np.mean(same < thre)),
        fpa=float(np.mean(fair < thre)),
        rmse_trans=rmse_translation(pred, gt),
        rmse_rot=float(np.sqrt(np.mean(rot ** 2))),
        rot_mode=rot_mode,
        thre=thre,
        per_part=per_part,
    )
    assert 0.0 <= report.pa <= report.fpa <= 1.0
    return report


def table_csv(rows: list[tuple[str, MetricsReport]], with_mean: bool = True) -> str:
    """CSV in TABLE_COLUMNS order, one row per run, plus a trailing mean row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run",) + TABLE_COLUMNS)
    for name, rep in rows:
        w.writerow([name] + [repr(float(v)) for v in rep.table_row()])
    if with_mean and rows:
        w.writerow(["mean"] + [repr(float(v)) for v in mean_row([r for _, r in rows])])
    return buf.getvalue()


def mean_row(reports: list[MetricsReport]) -> list[float]:
    """Column means of the scaled report values."""
    return [float(np.mean(col)) for col in zip(*(r.table_row() for r in reports))]
