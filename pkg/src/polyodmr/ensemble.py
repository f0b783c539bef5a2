"""Polycrystalline orientation ensembles.

Random numbers come from numpy's counter-based ``Philox`` (4x64, 10 rounds)
bit generator seeded through ``SeedSequence(seed)``. Uniform rotations use
Shoemake's construction from three uniform variates, consumed in order, so an
ensemble is a pure function of its ``EnsembleSpec``.

Quaternions are stored as (w, x, y, z) and act actively on lab-frame vectors:
``v_defect = R(q) @ v_lab``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

AZIMUTH_MODES = ("fixed", "random", "uniform")


@dataclass(frozen=True)
class DefectOrientation:
    quaternion: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    weight: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise InvalidInputError("quaternion must be 4 finite numbers")
        if abs(np.linalg.norm(q) - 1.0) > 1e-12:
            raise InvalidInputError("quaternion must have unit norm")
        if not (self.weight > 0 and np.isfinite(self.weight)):
            raise InvalidInputError("weight must be positive")
        object.__setattr__(self, "quaternion", tuple(float(x) for x in q))

    @property
    def matrix(self) -> np.ndarray:
        return quaternion_to_matrix(np.asarray(self.quaternion))

    @property
    def defect_axis_lab(self) -> np.ndarray:
        """Defect quantisation axis expressed in the lab frame."""
        return self.matrix.T @ np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class EnsembleSpec:
    n_random: int = 1000
    n_aligned: int = 300
    seed: int = 0
    aligned_azimuth: str = "random"

    def __post_init__(self):
        if self.n_random < 0 or self.n_aligned < 0:
            raise InvalidInputError("ensemble counts must be >= 0")
        if self.n_random + self.n_aligned < 1:
            raise InvalidInputError("ensemble must contain at least one defect")
        if self.aligned_azimuth not in AZIMUTH_MODES:
            raise InvalidInputError(f"aligned_azimuth must be one of {AZIMUTH_MODES}")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    @property
    def aligned_fraction(self) -> float:
        return self.n_aligned / (self.n_random + self.n_aligned)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix (or stack of them) from unit quaternions (w, x, y, z)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def _shoemake(u: np.ndarray) -> np.ndarray:
    u1, u2, u3 = np.moveaxis(u, -1, 0)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = np.stack(
        [b * np.cos(2 * np.pi * u3), a * np.sin(2 * np.pi * u2),
         a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3)],
        axis=-1,
    )
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def sample_uniform_rotation(rng: np.random.Generator) -> DefectOrientation:
    """One Haar-random orientation; consumes three doubles from ``rng``."""
    return DefectOrientation(tuple(_shoemake(rng.random(3))))


def z_rotation(angle: float) -> DefectOrientation:
    return DefectOrientation((float(np.cos(angle / 2)), 0.0, 0.0, float(np.sin(angle / 2))))


def build_ensemble(spec: EnsembleSpec) -> list[DefectOrientation]:
    """``n_random`` Haar-random orientations followed by ``n_aligned`` Z-aligned ones.

    Aligned defects share the lab Z axis. With ``aligned_azimuth="fixed"`` they
    are identity rotations; with ``"random"`` (default) each gets a uniformly
    random in-plane angle, because the E-axis of a textured grain has no
    preferred direction. ``"uniform"`` places them at evenly spaced angles
    k 2pi/n_aligned, an exact quadrature of that azimuthal average which
    removes the sampling noise a small aligned subset otherwise carries. This
    choice changes spectra whenever the field or drive has in-plane components.
    """
    rng = make_rng(spec.seed)
    quats = _shoemake(rng.random((spec.n_random, 3))) if spec.n_random else np.empty((0, 4))
    out = [DefectOrientation(tuple(q)) for q in quats]
    if spec.aligned_azimuth == "random":
        angles = rng.random(spec.n_aligned) * 2 * np.pi
        out.extend(z_rotation(a) for a in angles)
    elif spec.aligned_azimuth == "uniform":
        out.extend(z_rotation(2 * np.pi * k / spec.n_aligned) for k in range(spec.n_aligned))
    else:
        out.extend(DefectOrientation() for _ in range(spec.n_aligned))
    return out


def lab_to_defect(o: DefectOrientation, v_lab) -> np.ndarray:
    v = np.asarray(v_lab, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InvalidInputError("vector must be 3 finite numbers")
    return o.matrix @ v


def rotation_stack(ensemble) -> np.ndarray:
    if len(ensemble) == 0:
        raise InvalidInputError("ensemble is empty")
    return quaternion_to_matrix(np.array([o.quaternion for o in ensemble]))


def weight_vector(ensemble) -> np.ndarray:
    return np.array([o.weight for o in ensemble], dtype=float)


def ensemble_to_json(ensemble, path=None, spec: EnsembleSpec | None = None) -> str:
    payload = {
        "spec": None if spec is None else {
            "n_random": spec.n_random, "n_aligned": spec.n_aligned,
            "seed": spec.seed, "aligned_azimuth": spec.aligned_azimuth,
        },
        "orientations": [{"quaternion": list(o.quaternion), "weight": o.weight} for o in ensemble],
    }
    text = json.dumps(payload, indent=1)
    if path is not None:
        Path(path).write_text(text)
    return text


def ensemble_from_json(source) -> list[DefectOrientation]:
    """Load orientations from a JSON string or file path."""
    text = Path(source).read_text() if isinstance(source, Path) or not str(source).lstrip().startswith("{") else source
    payload = json.loads(text)
    try:
        return [DefectOrientation(tuple(o["quaternion"]), float(o.get("weight", 1.0)))
                for o in payload["orientations"]]
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed ensemble file: {exc}") from exc
