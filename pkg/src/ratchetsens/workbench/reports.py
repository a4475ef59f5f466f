"""Report files: fit tables, parameter clouds, correlations and diagnostics.

Every writer has a matching reader, floats are written with 17 significant
digits and JSON keys are sorted, so re-running with the same inputs gives
byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..constitutive import MaterialParams, params_from_dict, params_to_dict
from ..sensitivity import ParameterCloud, max_offdiagonal
from .pipeline import FitReport, ValidationResult

SCHEMA_NAME = "diagnostics.schema.json"
PASS, FLAG = "pass", "flag"


def _f(v: float) -> str:
    return f"{v:.17g}"


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


# ---------------------------------------------------------------------------
# parameters and matrices


def write_params(path, p: MaterialParams) -> Path:
    return write_json(Path(path), params_to_dict(p))


def read_params(path) -> MaterialParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def write_matrix_csv(path, names: Sequence[str], M: np.ndarray) -> Path:
    M = np.asarray(M, dtype=float)
    rows = [[n, *(_f(v) for v in row)] for n, row in zip(names, M)]
    return _write_rows(Path(path), ["parameter", *names], rows)


def read_matrix_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    header, rows = _read_rows(path)
    names = tuple(header[1:])
    if [r[0] for r in rows] != list(names):
        raise ValueError(f"{path}: row labels do not match the column labels")
    return names, np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(names), len(names))


# ---------------------------------------------------------------------------
# clouds


def write_cloud_csv(path, cloud: ParameterCloud) -> Path:
    rows = ([j, *(_f(v) for v in p), _f(d)] for j, (p, d) in enumerate(zip(cloud.draws, cloud.distances)))
    return _write_rows(Path(path), ["draw", *cloud.names, "distance"], rows)


def read_cloud_csv(path) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    """Return ``(names, draws, distances)``."""
    header, rows = _read_rows(path)
    if header[0] != "draw" or header[-1] != "distance":
        raise ValueError(f"{path}: expected columns draw,...,distance")
    data = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), len(header) - 1)
    return tuple(header[1:-1]), data[:, :-1], data[:, -1]


def cloud_summary(cloud: ParameterCloud) -> dict:
    return {
        "names": list(cloud.names),
        "p_star": [float(v) for v in cloud.p_star],
        "n_draws": cloud.n_draws,
        "sigma": cloud.sigma,
        "cloud_size": cloud.cloud_size,
        "center_offset": cloud.center_offset,
        "max_abs_correlation": max_offdiagonal(cloud.corr),
        "r_diag_ratio": {n: float(v) for n, v in zip(cloud.names, cloud.r_diag_ratio)},
        "min_r_diag_ratio": float(np.min(cloud.r_diag_ratio)) if cloud.r_diag_ratio.size else None,
        "exact_distances": [float(v) for v in cloud.exact_distances],
    }


# ---------------------------------------------------------------------------
# fits


FIT_HEADER = ["test", "cycle", "exp_max", "model_max", "residual_max", "exp_min", "model_min", "residual_min"]


def write_fit_csv(path, fits: Sequence[FitReport]) -> Path:
    rows = []
    for f in fits:
        for k in range(f.record.n_cycles):
            a, b = f.record.max_strain[k], f.model.max_strain[k]
            c, d = f.record.min_strain[k], f.model.min_strain[k]
            rows.append([f.name, k + 1, _f(a), _f(b), _f(a - b), _f(c), _f(d), _f(c - d)])
    return _write_rows(Path(path), FIT_HEADER, rows)


def read_fit_csv(path) -> dict[str, np.ndarray]:
    """Per test, an array with the numeric columns of the fit table."""
    header, rows = _read_rows(path)
    if header != FIT_HEADER:
        raise ValueError(f"{path}: unexpected fit table header")
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r[0], []).append([float(v) for v in r[1:]])
    return {k: np.array(v) for k, v in out.items()}


def write_series(path, xname: str, yname: str, x, y) -> Path:
    rows = ([_f(a), _f(b)] for a, b in zip(np.asarray(x, float), np.asarray(y, float)))
    return _write_rows(Path(path), [xname, yname], rows)


def read_series(path) -> tuple[np.ndarray, np.ndarray]:
    _, rows = _read_rows(path)
    a = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), 2)
    return a[:, 0], a[:, 1]


def write_plot_data(out_dir, fits: Sequence[FitReport]) -> list[Path]:
    """Two-column files: cycle vs. strain extrema and time vs. temperature."""
    out_dir = Path(out_dir)
    written = []
    for f in fits:
        cyc = np.arange(1, f.record.n_cycles + 1)
        for src, rec in (("exp", f.record), ("model", f.model)):
            written.append(write_series(out_dir / f"{f.name}_{src}_max_strain.csv", "cycle", "strain", cyc, rec.max_strain))
            written.append(write_series(out_dir / f"{f.name}_{src}_min_strain.csv", "cycle", "strain", cyc, rec.min_strain))
        written.append(
            write_series(out_dir / f"{f.name}_temperature.csv", "time_s", "temperature_K", f.trace.time, f.trace.temperature)
        )
    return written


# ---------------------------------------------------------------------------
# overparametrization diagnostics


@dataclass(frozen=True)
class CriterionResult:
    name: str
    threshold: float
    values: dict
    flagged_sizes: tuple[int, ...]
    detail: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return FLAG if self.flagged_sizes else PASS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "threshold": self.threshold,
            "values": {str(k): _jsonable(v) for k, v in self.values.items()},
            "flagged_sizes": list(self.flagged_sizes),
            "verdict": self.verdict,
            "detail": {key: {str(k): _jsonable(v) for k, v in d.items()} for key, d in self.detail.items()},
        }


def _jsonable(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class DiagnosticsReport:
    """Overparametrization criteria evaluated over a sequence of model sizes.

    I   the fit no longer improves: relative drop of Phi below ``threshold``;
    II  held-out error grows with the model size;
    III near-unit parameter correlations, ``max |Corr_ij| >= threshold``;
    IV  parameter clouds wider than ``threshold`` (strain).
    """

    family: str
    sizes: tuple[int, ...]
    fit: CriterionResult
    validation: CriterionResult
    correlation: CriterionResult
    cloud: CriterionResult
    rank_deficient: dict = field(default_factory=dict)

    @property
    def criteria(self) -> dict[str, CriterionResult]:
        return {"I": self.fit, "II": self.validation, "III": self.correlation, "IV": self.cloud}

    @property
    def hard_flag(self) -> bool:
        return bool(self.rank_deficient)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "sizes": list(self.sizes),
            "criteria": {k: c.to_dict() for k, c in self.criteria.items()},
            "rank_deficient": {str(k): v for k, v in self.rank_deficient.items()},
        }

    @classmethod
    def build(
        cls,
        family: str,
        phi: Mapping[int, float],
        phi_val: Mapping[int, float | None],
        max_corr: Mapping[int, float | None],
        cloud_size: Mapping[int, float | None],
        *,
        min_relative_gain: float = 0.05,
        max_correlation: float = 0.999,
        max_cloud_size: float = 1e-3,
        rank_deficient: Mapping[int, dict] | None = None,
    ) -> DiagnosticsReport:
        sizes = tuple(sorted(phi))
        gains, flag_i = {}, []
        for a, b in zip(sizes, sizes[1:]):
            g = (phi[a] - phi[b]) / phi[a] if phi[a] > 0 else 0.0
            gains[b] = g
            if g < min_relative_gain:
                flag_i.append(b)
        flag_ii = [
            b for a, b in zip(sizes, sizes[1:])
            if phi_val.get(a) is not None and phi_val.get(b) is not None and phi_val[b] > phi_val[a]
        ]
        flag_iii = [n for n in sizes if max_corr.get(n) is None or max_corr[n] >= max_correlation]
        flag_iv = [n for n in sizes if cloud_size.get(n) is None or cloud_size[n] > max_cloud_size]
        return cls(
            family,
            sizes,
            CriterionResult("no gain in accuracy", min_relative_gain, dict(phi), tuple(flag_i), {"relative_gain": gains}),
            CriterionResult("deteriorating prediction", 0.0, {n: phi_val.get(n) for n in sizes}, tuple(flag_ii)),
            CriterionResult("parameter correlation", max_correlation, {n: max_corr.get(n) for n in sizes}, tuple(flag_iii)),
            CriterionResult("error sensitivity", max_cloud_size, {n: cloud_size.get(n) for n in sizes}, tuple(flag_iv)),
            dict(rank_deficient or {}),
        )


def diagnostics_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath(SCHEMA_NAME).read_text())


# ---------------------------------------------------------------------------


def emit_reports(
    out_dir,
    *,
    params: MaterialParams | None = None,
    fits: Sequence[FitReport] | None = None,
    cloud: ParameterCloud | None = None,
    validation: ValidationResult | None = None,
    diagnostics: DiagnosticsReport | None = None,
) -> list[Path]:
    """Write every report for which an input is given; returns the paths."""
    out = Path(out_dir)
    written: list[Path] = []
    if params is not None:
        written.append(write_params(out / "p_star.json", params))
    if fits:
        written.append(write_fit_csv(out / "fit.csv", fits))
        written += write_plot_data(out / "plots", fits)
    if cloud is not None:
        written.append(write_cloud_csv(out / "cloud.csv", cloud))
        written.append(write_json(out / "cloud_summary.json", cloud_summary(cloud)))
        written.append(write_matrix_csv(out / "correlation.csv", cloud.names, cloud.corr))
    if validation is not None:
        written.append(
            write_json(out / "validation.json", {"phi": validation.phi, "n_tests": validation.n_tests, "flagged": validation.flagged})
        )
    if diagnostics is not None:
        written.append(write_json(out / "diagnostics.json", diagnostics.to_dict()))
    return written
