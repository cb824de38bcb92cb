"""Anisotropy tensors, their frame factors and tensor fields.

A symmetric positive definite metric ``G`` is factored as ``G = M^T M``
with ``M = Sigma Q^T``, where ``Q`` holds the orthonormal eigenvectors of
``G`` as columns and ``Sigma = diag(sqrt(lambda))``.  The energy assumes
``det(M) = 1``, so frames handed to the integrator are rescaled by
``det(M)^(-1/3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateFrame, EmptyField, NotPositiveDefinite

PD_EPS = 1e-12
DET_EPS = 1e-14

_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class AnisotropyTensor:
    """Symmetric 3x3 metric stored as its six upper-triangle entries
    ``(g11, g12, g13, g22, g23, g33)``."""

    entries: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.entries)
        if len(vals) != 6:
            raise ValueError("an anisotropy tensor needs exactly 6 entries")
        if not all(np.isfinite(vals)):
            raise ValueError("anisotropy tensor entries must be finite")
        object.__setattr__(self, "entries", vals)

    @classmethod
    def from_matrix(cls, g) -> "AnisotropyTensor":
        g = np.asarray(g, dtype=float)
        if g.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {g.shape}")
        # symmetrize so the stored tensor is symmetric by construction
        g = 0.5 * (g + g.T)
        return cls(tuple(g[i, j] for i, j in _UPPER))

    @classmethod
    def identity(cls) -> "AnisotropyTensor":
        return cls((1.0, 0.0, 0.0, 1.0, 0.0, 1.0))

    @property
    def matrix(self) -> np.ndarray:
        g = np.empty((3, 3))
        for (i, j), v in zip(_UPPER, self.entries):
            g[i, j] = g[j, i] = v
        return g


@dataclass(frozen=True, eq=False)
class FrameMatrix:
    """Factor ``m`` of a metric (``m^T m = G``).

    ``raw_det`` is the determinant of the factor before any normalization,
    kept so callers can reweight energies if they want the unnormalized
    metric volume.
    """

    m: np.ndarray
    raw_det: float = field(default=float("nan"))

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"frame must be 3x3, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        if np.isnan(self.raw_det):
            object.__setattr__(self, "raw_det", float(np.linalg.det(m)))

    @classmethod
    def identity(cls) -> "FrameMatrix":
        return cls(np.eye(3), 1.0)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.m))

    def metric(self) -> np.ndarray:
        return self.m.T @ self.m


def _as_tensor(g) -> AnisotropyTensor:
    if isinstance(g, AnisotropyTensor):
        return g
    return AnisotropyTensor.from_matrix(g)


def spectral_factor(g) -> FrameMatrix:
    """Factor ``g`` as ``M = Sigma Q^T`` so that ``M^T M = g``.

    Eigenvalues are sorted in descending order and every eigenvector is
    signed so that its largest-magnitude component is positive, which makes
    the factor deterministic.  The result is *not* det-normalized.

    Raises
    ------
    NotPositiveDefinite
        If any eigenvalue is ``<= 1e-12``.
    """
    g = _as_tensor(g).matrix
    lam, q = np.linalg.eigh(g)
    # stable, so tied eigenvalues keep the solver's eigenvector order
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    q = q[:, order]
    if lam[-1] <= PD_EPS:
        raise NotPositiveDefinite(
            f"anisotropy tensor is not positive definite (eigenvalues {lam.tolist()})"
        )
    for c in range(3):
        col = q[:, c]
        if col[np.argmax(np.abs(col))] < 0:
            q[:, c] = -col
    # keep det(M) > 0 so the frame can be det-normalized; M^T M is unaffected
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    sigma = np.sqrt(lam)
    m = sigma[:, None] * q.T
    return FrameMatrix(m, float(np.prod(sigma) * np.linalg.det(q)))


def normalize_det(frame: FrameMatrix) -> FrameMatrix:
    """Rescale a frame to unit determinant, keeping its ``raw_det``."""
    m = frame.m if isinstance(frame, FrameMatrix) else np.asarray(frame, dtype=float)
    raw = frame.raw_det if isinstance(frame, FrameMatrix) else float(np.linalg.det(m))
    d = float(np.linalg.det(m))
    if not d > DET_EPS:
        raise DegenerateFrame(f"frame determinant {d:.3e} is not positive")
    return FrameMatrix(m * d ** (-1.0 / 3.0), raw)


def quadratic_form(g, v) -> float:
    """Return ``v^T g v``."""
    v = np.asarray(v, dtype=float)
    return float(v @ _as_tensor(g).matrix @ v)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Anisotropy field: either one constant tensor or nearest-sample lookup.

    ``samples`` is a sequence of ``(position, AnisotropyTensor)`` pairs.
    Frames are factored and det-normalized once, at construction.
    """

    kind: str
    samples: tuple

    def __post_init__(self):
        if self.kind not in ("constant", "nearest"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        samples = tuple(
            (np.asarray(p, dtype=float).reshape(3), _as_tensor(t)) for p, t in self.samples
        )
        if not samples:
            raise EmptyField("a tensor field needs at least one sample")
        if self.kind == "constant" and len(samples) != 1:
            raise ValueError("a constant field has exactly one sample")
        object.__setattr__(self, "samples", samples)
        frames = tuple(normalize_det(spectral_factor(t)) for _, t in samples)
        object.__setattr__(self, "_frames", frames)
        object.__setattr__(self, "_positions", np.array([p for p, _ in samples]))
        object.__setattr__(self, "_stack", np.array([f.m for f in frames]))

    @classmethod
    def constant(cls, g=None) -> "TensorField":
        t = AnisotropyTensor.identity() if g is None else _as_tensor(g)
        return cls("constant", ((np.zeros(3), t),))

    @classmethod
    def nearest(cls, samples: Sequence) -> "TensorField":
        return cls("nearest", tuple(samples))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or len(self.samples) == 1

    @property
    def is_identity(self) -> bool:
        return self.is_constant and np.array_equal(self._stack[0], np.eye(3))

    def frames_at(self, x) -> np.ndarray:
        """Normalized frame matrices, shape ``(n, 3, 3)``, for points ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        if self.is_constant:
            return np.broadcast_to(self._stack[0], (len(x), 3, 3))
        d2 = ((x[:, None, :] - self._positions[None, :, :]) ** 2).sum(-1)
        # argmin returns the first minimum, i.e. the lowest sample index on ties
        return self._stack[np.argmin(d2, axis=1)]


def field_eval(field: TensorField, x) -> FrameMatrix:
    """Det-normalized frame of ``field`` at the point ``x``."""
    if field is None or not field.samples:
        raise EmptyField("cannot evaluate an empty tensor field")
    x = np.asarray(x, dtype=float).reshape(3)
    if field.is_constant:
        return field._frames[0]
    d2 = ((field._positions - x) ** 2).sum(-1)
    return field._frames[int(np.argmin(d2))]
