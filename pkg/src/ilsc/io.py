"""Reading and writing channel, estimate, location and rate dumps.

Complex tensors are written either as CSV rows ``m,row,col,re,im`` or as
``.npz`` archives (chosen by file suffix). Floats are written with
``%.17g`` (round-trip exact) so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .channel import ChannelTensor
from .estimator import SparseChannelEstimate

FLOAT_FMT = "%.17g"


def fmt(value) -> str:
    """Stable text form of a scalar for CSV output."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return FLOAT_FMT % v
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
        return fmt(float(obj))
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


# ------------------------------------------------------------ tensors

def write_tensor(path, data: np.ndarray, meta: dict | None = None) -> Path:
    """Dump an ``(M, rows, cols)`` complex tensor as CSV or ``.npz``."""
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D tensor, got shape {data.shape}")
    if path.suffix == ".npz":
        path.parent.mkdir(parents=True, exist_ok=True)
        extra = {k: np.asarray(v) for k, v in (meta or {}).items()}
        np.savez(path, data=data, **extra)
        return path
    m, r, c = np.indices(data.shape)
    rows = zip(m.ravel(), r.ravel(), c.ravel(), data.real.ravel(), data.imag.ravel())
    return write_csv(path, ["m", "row", "col", "re", "im"], rows)


def read_tensor(path) -> np.ndarray:
    """Inverse of :func:`write_tensor`."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return z["data"]
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.size == 0:
        raise ValueError(f"{path} holds no entries")
    idx = raw[:, :3].astype(int)
    shape = tuple(idx.max(axis=0) + 1)
    out = np.zeros(shape, dtype=complex)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = raw[:, 3] + 1j * raw[:, 4]
    return out


def write_channel(path, channel: ChannelTensor) -> Path:
    """Channel dump plus a ``.json`` sidecar with direction and frequencies."""
    path = Path(path)
    write_tensor(path, channel.data)
    write_json(path.with_suffix(".json"), {"direction": channel.direction,
                                           "freqs": None if channel.freqs is None
                                           else np.asarray(channel.freqs).tolist(),
                                           "shape": list(channel.data.shape)})
    return path


def read_channel(path) -> ChannelTensor:
    path = Path(path)
    data = read_tensor(path)
    side = path.with_suffix(".json")
    if side.exists():
        meta = read_json(side)
        freqs = meta.get("freqs")
        return ChannelTensor(data, meta["direction"],
                             None if freqs is None else np.asarray(freqs, dtype=float))
    return ChannelTensor(data, "uplink", np.arange(data.shape[0], dtype=float))


def write_estimate(path, estimate: SparseChannelEstimate) -> Path:
    """Coefficient dump plus a ``.json`` sidecar of learned hyper-parameters."""
    path = Path(path)
    write_tensor(path, estimate.coeffs)
    write_json(path.with_suffix(".json"), estimate.to_sidecar())
    return path


# ------------------------------------------------------------- reports

def write_location(path, report, truth_ut=None, truth_scatterers=None) -> tuple[Path, Path]:
    """LocationReport as JSON plus a flat CSV of truth / coarse / refined points.

    CSV columns: ``kind,index,x,y`` with kinds ``truth-ut``,
    ``truth-scatterer``, ``los-only-ut``, ``coarse-ut``, ``refined-ut``,
    ``refined-scatterer`` and ``va``.
    """
    path = Path(path)
    data = report.to_dict()
    if truth_ut is not None:
        data["truth_ut"] = np.asarray(truth_ut, dtype=float).tolist()
    if truth_scatterers is not None:
        data["truth_scatterers"] = np.asarray(truth_scatterers, dtype=float).reshape(-1, 2).tolist()
    jpath = write_json(path.with_suffix(".json"), data)
    rows = []
    if truth_ut is not None:
        rows.append(("truth-ut", 0, *np.asarray(truth_ut, dtype=float)))
    for i, p in enumerate(np.asarray(truth_scatterers if truth_scatterers is not None else [],
                                     dtype=float).reshape(-1, 2)):
        rows.append(("truth-scatterer", i, *p))
    for kind, val in (("los-only-ut", report.los_only_ut), ("coarse-ut", report.coarse_ut),
                      ("refined-ut", report.refined_ut)):
        if val is not None:
            rows.append((kind, 0, *np.asarray(val, dtype=float)))
    for i, p in enumerate(np.asarray(report.refined_scatterers, dtype=float).reshape(-1, 2)):
        rows.append(("refined-scatterer", i, *p))
    for i, v in enumerate(report.vas):
        rows.append(("va", i, v.x, v.y))
    cpath = write_csv(path.with_suffix(".csv"), ["kind", "index", "x", "y"], rows)
    return jpath, cpath


def read_location(path):
    from .locator import LocationReport

    return LocationReport.from_dict(read_json(Path(path).with_suffix(".json")))


def write_rates(path, freqs, rates) -> Path:
    """Per-subcarrier spectral efficiency as ``m,f_m,SE``."""
    return write_csv(path, ["m", "f_m", "SE"],
                     ((m, f, r) for m, (f, r) in enumerate(zip(freqs, rates))))


def read_rates(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
