"""File formats: spectrum/ODMR CSVs, JSON reports and run manifests.

Writes are atomic (temp file in the target directory, then rename) and use
fixed number formatting so that identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import tempfile
from pathlib import Path

import numpy as np
import scipy

from .errors import InvalidInputError
from .spectrum import Spectrum

SPECTRUM_HEADER = ("frequency_mhz", "value")
ODMR_HEADER = ("frequency_mhz", "contrast")
FREQ_FMT = "{:.6f}"
VALUE_FMT = "{:.10e}"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _round_floats(x, digits: int | None):
    if isinstance(x, dict):
        return {k: _round_floats(v, digits) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round_floats(v, digits) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if not np.isfinite(x):
            return None
        return round(x, digits) if digits is not None else x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _round_floats(x.tolist(), digits)
    return x


def dumps_json(obj, digits: int | None = None) -> str:
    return json.dumps(_round_floats(obj, digits), indent=2, sort_keys=True) + "\n"


def write_json(path, obj, digits: int | None = None) -> Path:
    return atomic_write_text(path, dumps_json(obj, digits))


def spectrum_csv_text(s: Spectrum) -> str:
    header = ODMR_HEADER if s.kind == "odmr-contrast" else SPECTRUM_HEADER
    lines = [",".join(header)]
    lines += [f"{FREQ_FMT.format(f)},{VALUE_FMT.format(v)}" for f, v in zip(s.freqs_mhz, s.values)]
    return "\n".join(lines) + "\n"


def write_spectrum_csv(path, s: Spectrum) -> Path:
    return atomic_write_text(path, spectrum_csv_text(s))


def read_spectrum_csv(path) -> Spectrum:
    """Read either CSV schema; the header decides the spectrum kind.

    Bad rows are reported with their 1-based line number.
    """
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"spectrum file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path.name}: empty file")
    header = tuple(c.strip() for c in rows[0])
    if header == SPECTRUM_HEADER:
        kind = "fft-amplitude"
    elif header == ODMR_HEADER:
        kind = "odmr-contrast"
    else:
        raise InvalidInputError(f"{path.name}: header must be {','.join(SPECTRUM_HEADER)} "
                                f"or {','.join(ODMR_HEADER)}, got {','.join(header)}")
    freqs, vals = [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise InvalidInputError(f"{path.name} line {line_no}: expected 2 columns, got {len(row)}")
        try:
            f, v = float(row[0]), float(row[1])
        except ValueError:
            raise InvalidInputError(f"{path.name} line {line_no}: non-numeric value {row!r}") from None
        if not (np.isfinite(f) and np.isfinite(v)):
            raise InvalidInputError(f"{path.name} line {line_no}: non-finite value")
        if freqs and f <= freqs[-1]:
            raise InvalidInputError(f"{path.name} line {line_no}: frequencies must be strictly increasing")
        freqs.append(f)
        vals.append(v)
    if len(freqs) < 2:
        raise InvalidInputError(f"{path.name}: need at least 2 data rows")
    return Spectrum(np.array(freqs), np.array(vals), kind)


def read_features(source) -> np.ndarray:
    """Peak centres from a comma list, a peak-fit JSON or a one-column CSV."""
    text = str(source)
    p = Path(text)
    if p.is_file():
        if p.suffix.lower() == ".json":
            d = json.loads(p.read_text())
            peaks = d.get("peaks", d) if isinstance(d, dict) else d
            try:
                return np.array([pk["center_mhz"] if isinstance(pk, dict) else pk for pk in peaks], dtype=float)
            except (TypeError, KeyError, ValueError):
                raise InvalidInputError(f"{p.name}: expected a list of peaks with center_mhz") from None
        text = ",".join(line.strip() for line in p.read_text().splitlines()
                        if line.strip() and not line.strip()[0].isalpha())
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()], dtype=float)
    except ValueError:
        raise InvalidInputError(f"cannot read features from {source!r}") from None


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest(command: str, config_dict: dict, outputs: dict, inputs: dict | None = None,
             seed: int | None = None) -> dict:
    """Run record for exact re-runs; contains no timestamps or host paths."""
    from . import __version__

    return {
        "command": command,
        "config": config_dict,
        "config_sha256": config_hash(config_dict),
        "seed": seed,
        "inputs": {k: file_sha256(v) for k, v in sorted((inputs or {}).items())},
        "outputs": {k: file_sha256(v) for k, v in sorted(outputs.items())},
        "versions": {
            "polyodmr": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
