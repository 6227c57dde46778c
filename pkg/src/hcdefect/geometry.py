"""Cell and defect geometry, material phases and the coefficient field."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class GeometryError(ValueError):
    pass


class PhaseLabel(enum.IntEnum):
    INCLUSION = _kernels.INCLUSION
    MATRIX = _kernels.MATRIX
    DEFECT = _kernels.DEFECT
    BOUNDARY_INCLUSION = _kernels.BOUNDARY_INCLUSION


@dataclass(frozen=True)
class CellGeometry:
    """Disk inclusion Q0 inside the unit cell [0, 1)^2."""

    radius: float = 0.3
    center: tuple[float, float] = (0.5, 0.5)
    shape: str = "disk"

    def __post_init__(self):
        if self.shape != "disk":
            raise GeometryError(f"unsupported inclusion shape {self.shape!r}")
        if not 0.0 < self.radius < 0.5:
            raise GeometryError("inclusion radius must lie in (0, 0.5)")
        cx, cy = self.center
        gap = min(cx, cy, 1.0 - cx, 1.0 - cy) - self.radius
        if gap <= 0.0:
            raise GeometryError("inclusion must sit strictly inside the unit cell")

    @property
    def area(self) -> float:
        return float(np.pi * self.radius ** 2)

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Open-disk membership for points given in cell coordinates."""
        y = np.asarray(y, dtype=float)
        cx, cy = self.center
        return (y[..., 0] - cx) ** 2 + (y[..., 1] - cy) ** 2 < self.radius ** 2


@dataclass(frozen=True)
class DefectGeometry:
    """Defect domain centred at the origin: a disk (size = radius) or square (size = side)."""

    shape: str = "disk"
    size: float = 1.0

    def __post_init__(self):
        if self.shape not in ("disk", "square"):
            raise GeometryError(f"unsupported defect shape {self.shape!r}")
        if not self.size > 0.0:
            raise GeometryError("defect size must be positive")

    @property
    def kind(self) -> int:
        return _kernels.DEFECT_DISK if self.shape == "disk" else _kernels.DEFECT_SQUARE

    @property
    def extent(self) -> float:
        """Radius of the smallest origin-centred disk containing the defect."""
        return self.size if self.shape == "disk" else self.size / np.sqrt(2.0)

    @property
    def inradius(self) -> float:
        return self.size if self.shape == "disk" else 0.5 * self.size

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.shape == "disk":
            return x[..., 0] ** 2 + x[..., 1] ** 2 < self.size ** 2
        s = 0.5 * self.size
        return (np.abs(x[..., 0]) < s) & (np.abs(x[..., 1]) < s)


@dataclass(frozen=True)
class BoundaryPolicy:
    """Coefficient on inclusions cut by the defect boundary.

    ``full`` keeps a0*eps^2, ``removed`` uses the surrounding phase and
    ``scaled`` uses the constant ((A0t + B0t)/2) * eps^(2 - theta).
    """

    kind: str = "full"
    theta: float = 2.0
    A0t: float = 1.0
    B0t: float = 1.0

    def __post_init__(self):
        if self.kind not in ("full", "removed", "scaled"):
            raise GeometryError(f"unknown boundary policy {self.kind!r}")
        if self.kind == "scaled":
            if not 0.0 < self.theta <= 2.0:
                raise GeometryError("scaled policy requires theta in (0, 2]")
            if not 0.0 < self.A0t <= self.B0t:
                raise GeometryError("scaled policy requires 0 < A0t <= B0t")


@dataclass(frozen=True)
class MediumSpec:
    a0: float = 1.0
    a1: float = 1.0
    a2: float = 1.0
    boundary_policy: BoundaryPolicy = field(default_factory=BoundaryPolicy)
    cell: CellGeometry = field(default_factory=CellGeometry)
    defect: DefectGeometry = field(default_factory=DefectGeometry)

    def __post_init__(self):
        for name in ("a0", "a1", "a2"):
            if not getattr(self, name) > 0.0:
                raise GeometryError(f"{name} must be positive")


def classify_points(points, eps: float, spec: MediumSpec) -> np.ndarray:
    """Vectorized phase codes (int8, values of PhaseLabel) for an (n, 2) array."""
    if not eps > 0.0:
        raise GeometryError("eps must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    cell = spec.cell
    return _kernels.classify(pts[:, 0], pts[:, 1], eps, cell.center[0], cell.center[1],
                             cell.radius, spec.defect.kind, spec.defect.size)


def classify_point(p, eps: float, spec: MediumSpec) -> PhaseLabel:
    return PhaseLabel(int(classify_points(np.asarray(p, dtype=float)[None, :], eps, spec)[0]))


def coefficients(points, eps: float, spec: MediumSpec) -> np.ndarray:
    """a(x, eps) at each point."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    labels = classify_points(pts, eps, spec)
    out = np.empty(len(pts))
    out[labels == PhaseLabel.INCLUSION] = spec.a0 * eps ** 2
    out[labels == PhaseLabel.MATRIX] = spec.a1
    out[labels == PhaseLabel.DEFECT] = spec.a2
    bnd = labels == PhaseLabel.BOUNDARY_INCLUSION
    pol = spec.boundary_policy
    if pol.kind == "full":
        out[bnd] = spec.a0 * eps ** 2
    elif pol.kind == "scaled":
        out[bnd] = 0.5 * (pol.A0t + pol.B0t) * eps ** (2.0 - pol.theta)
    else:
        in_def = spec.defect.contains(pts)
        out[bnd & in_def] = spec.a2
        out[bnd & ~in_def] = spec.a1
    return out


def coefficient(p, eps: float, spec: MediumSpec) -> float:
    return float(coefficients(np.asarray(p, dtype=float)[None, :], eps, spec)[0])
