"""CSV and key=value serialization for moment series, reports and configs."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .ensemble import MomentSeries

PathLike = Union[str, Path]


def _fmt(x: float) -> str:
    # 17 significant digits round-trip every IEEE double
    return "%.17g" % x


def series_header(n_modes: int) -> list[str]:
    cols = ["t"]
    for k in range(1, n_modes + 1):
        cols += [f"re_a{k}", f"im_a{k}"]
    return cols + ["mean_E", "mean_H"]


def write_series(path: PathLike, series: MomentSeries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series_header(series.n_modes))
        for i in range(len(series)):
            row = [_fmt(series.times[i])]
            for a in series.means[i]:
                row += [_fmt(a.real), _fmt(a.imag)]
            row += [_fmt(series.energy_mean[i]), _fmt(series.hamiltonian_mean[i])]
            w.writerow(row)
    return path


def read_series(path: PathLike) -> MomentSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    n_modes = (len(header) - 3) // 2
    if header != series_header(n_modes):
        raise ValueError(f"{path}: unexpected header {header[:4]}...")
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    means = data[:, 1:1 + 2 * n_modes:2] + 1j * data[:, 2:2 + 2 * n_modes:2]
    return MomentSeries(data[:, 0], means, data[:, -2], data[:, -1])


def write_vector(path: PathLike, values: np.ndarray) -> Path:
    """Complex vector as k,re,im rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "re", "im"])
        for k, v in enumerate(np.asarray(values, dtype=complex), start=1):
            w.writerow([k, _fmt(v.real), _fmt(v.imag)])
    return path


def read_vector(path: PathLike) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) + 1j * float(r[2]) for r in rows])


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt(v)
    if isinstance(v, (list, tuple)):
        return " ".join(format_value(x) for x in v)
    return str(v)


def write_kv(path: PathLike, items: Mapping[str, object]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for key, val in items.items():
            fh.write(f"{key} = {format_value(val)}\n")
    return path


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def read_kv(path: PathLike) -> dict[str, str]:
    return parse_kv(Path(path).read_text())
