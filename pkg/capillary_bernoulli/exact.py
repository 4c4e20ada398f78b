# capillary_bernoulli/exact.py
"""
Closed-form catalogue of the model functional J.

Half-plane solutions h_{q,m,nu}(x) = (s x.nu + m x_d)^+ with s = sqrt(q^2 - m^2),
the contact-angle law theta = arccos(-m/q), the three 0-homogeneous traces in
d = 2 (half-plane, wedge, degenerate) and the explicit competitors showing that
the wedge and the degenerate solutions are not minimizers.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import spsolve

from .assembly import gauss_coordinates, stiffness_matrix, wall_lumped
from .exceptions import DomainError
from .fields import ScalarField
from .grid import Grid, Region, build_grid

# Setup logging
logger = logging.getLogger(__name__)


# ==============================================================================
# Half-plane solutions and the angle law
# ==============================================================================


@dataclass(frozen=True)
class HalfPlaneParams:
    """(q, m, nu) with q > 0, -q < m < q, |nu| = 1 and nu . e_d = 0."""

    q: float
    m: float
    nu: Tuple[float, ...] = (1.0, 0.0)

    def __post_init__(self) -> None:
        if not self.q > 0:
            raise DomainError(f"Half-plane solution needs q > 0, got {self.q}")
        if not -self.q < self.m < self.q:
            raise DomainError(f"Half-plane solution needs -q < m < q, got m={self.m}")
        nu = np.asarray(self.nu, dtype=float)
        if abs(np.linalg.norm(nu) - 1.0) > 1e-12 or abs(nu[-1]) > 1e-12:
            raise DomainError(f"nu={self.nu} must be a unit vector tangent to the wall")
        object.__setattr__(self, "nu", tuple(float(v) for v in nu))

    @property
    def dim(self) -> int:
        return len(self.nu)

    @property
    def s(self) -> float:
        return math.sqrt(self.q**2 - self.m**2)

    def gradient(self) -> np.ndarray:
        """Gradient s nu + m e_d on the positivity set."""
        grad = self.s * np.asarray(self.nu)
        grad[-1] += self.m
        return grad

    def theta(self) -> float:
        return math.acos(-self.m / self.q)


def half_plane_eval(
    p: HalfPlaneParams, x: np.ndarray, shift: float = 0.0
) -> np.ndarray:
    """h_{q,m,nu}(x + shift nu) at points (..., d)."""
    pts = np.asarray(x, dtype=float)
    along = pts @ np.asarray(p.nu) + shift
    return np.maximum(p.s * along + p.m * pts[..., -1], 0.0)


def half_plane_signed(p: HalfPlaneParams, x: np.ndarray) -> np.ndarray:
    """The affine function s x.nu + m x_d without the positive part."""
    pts = np.asarray(x, dtype=float)
    return p.s * (pts @ np.asarray(p.nu)) + p.m * pts[..., -1]


def half_plane_field(grid: Grid, p: HalfPlaneParams, shift: float = 0.0) -> ScalarField:
    """Nodal samples of h_{q,m,nu}(x + shift nu)."""
    return ScalarField(grid, half_plane_eval(p, grid.coords(), shift))


def contact_angle(Q0: float, beta0: float, a0: float) -> float:
    """
    Contact angle theta = arccos(-m/q) with q = sqrt(Q0), m = beta0/a0.

    Raises:
        DomainError: |beta0| >= a0 sqrt(Q0), outside the admissible range
    """
    if not (Q0 > 0 and a0 > 0):
        raise DomainError(f"contact_angle needs Q0 > 0 and a0 > 0, got {Q0}, {a0}")
    q = math.sqrt(Q0)
    m = beta0 / a0
    if abs(beta0) >= a0 * q:
        raise DomainError(
            f"|beta|={abs(beta0):.6g} must be below a sqrt(Q)={a0 * q:.6g} "
            "for the contact line to exist"
        )
    if beta0 == 0.0:
        return math.pi / 2
    return math.acos(-m / q)


def angle_table(q: float, ms: Sequence[float]) -> List[Dict[str, float]]:
    """Predicted contact angle (radians and degrees) for each m."""
    rows = []
    for m in ms:
        theta = contact_angle(q * q, m, 1.0)
        rows.append({"q": q, "m": m, "theta": theta, "theta_deg": math.degrees(theta)})
    return rows


# ==============================================================================
# 0-homogeneous traces in d = 2
# ==============================================================================


class Family(str, Enum):
    HALF_PLANE = "HALF_PLANE"
    WEDGE = "WEDGE"
    DEGENERATE = "DEGENERATE"
    UNCLASSIFIED = "UNCLASSIFIED"


@dataclass(frozen=True)
class Homog2DSolution:
    """Fitted 0-homogeneous trace on the upper half-circle."""

    family: Family
    q: float
    m: float
    reflected: bool = False
    C: Optional[float] = None
    theta_star: Optional[float] = None
    residual: float = math.inf
    residuals: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, object]:
        return {
            "family": self.family.value,
            "q": self.q,
            "m": self.m,
            "reflected": self.reflected,
            "C": self.C,
            "theta_star": self.theta_star,
            "residual": self.residual,
            "residuals": dict(self.residuals),
        }


def half_plane_profile(
    q: float, m: float, theta: np.ndarray, reflected: bool = False
) -> np.ndarray:
    """(s cos t + m sin t)^+, or its reflection x_1 -> -x_1."""
    s = math.sqrt(q * q - m * m)
    cos = -np.cos(theta) if reflected else np.cos(theta)
    return np.maximum(s * cos + m * np.sin(theta), 0.0)


def wedge_profile(q: float, m: float, theta: np.ndarray) -> np.ndarray:
    """(s |cos t| + m sin t)^+; only a solution for m < 0."""
    s = math.sqrt(q * q - m * m)
    return np.maximum(s * np.abs(np.cos(theta)) + m * np.sin(theta), 0.0)


def degenerate_profile(C: float, theta: np.ndarray) -> np.ndarray:
    return C * np.sin(theta)


def first_zero_angle(q: float, m: float) -> float:
    """theta*_0 = arccos(-m/q): first zero of the half-plane profile."""
    return math.acos(-m / q)


def classify_2d(
    w: np.ndarray,
    q: float,
    m: float,
    tol: float = 1e-2,
    theta: Optional[np.ndarray] = None,
) -> Homog2DSolution:
    """
    Match a half-circle trace against the 0-homogeneous catalogue.

    Residuals are sup-norm distances relative to ||w||_inf. The DEGENERATE
    constant is the least-squares fit against sin. No match within tol gives
    an UNCLASSIFIED verdict carrying all residuals.

    Args:
        w: samples on theta in [0, pi]
        q, m: constants with -q < m < q
        tol: relative acceptance threshold
        theta: sample angles (default: uniform including both ends)
    """
    if not -q < m < q:
        raise DomainError(f"classify_2d needs -q < m < q, got q={q}, m={m}")
    w = np.asarray(w, dtype=float)
    theta = np.linspace(0.0, math.pi, w.size) if theta is None else np.asarray(theta)
    scale = float(np.abs(w).max(initial=0.0))
    if scale == 0.0:
        return Homog2DSolution(Family.UNCLASSIFIED, q, m)

    def rel(profile: np.ndarray) -> float:
        return float(np.abs(w - profile).max() / scale)

    sin = np.sin(theta)
    C = float(w @ sin / (sin @ sin))
    residuals = {
        "half_plane": rel(half_plane_profile(q, m, theta)),
        "half_plane_reflected": rel(half_plane_profile(q, m, theta, reflected=True)),
        "degenerate": rel(degenerate_profile(C, theta)),
    }
    if m < 0:
        residuals["wedge"] = rel(wedge_profile(q, m, theta))

    best = min(residuals, key=lambda k: residuals[k])
    if residuals[best] > tol or (best == "degenerate" and C <= 0):
        logger.debug(f"Trace unclassified, residuals {residuals}")
        return Homog2DSolution(Family.UNCLASSIFIED, q, m, residuals=residuals)

    if best.startswith("half_plane"):
        reflected = best.endswith("reflected")
        theta_star = first_zero_angle(q, m)
        return Homog2DSolution(
            Family.HALF_PLANE,
            q,
            m,
            reflected=reflected,
            theta_star=math.pi - theta_star if reflected else theta_star,
            residual=residuals[best],
            residuals=residuals,
        )
    if best == "wedge":
        return Homog2DSolution(
            Family.WEDGE,
            q,
            m,
            theta_star=math.acos(-m / q) if m < 0 else None,
            residual=residuals[best],
            residuals=residuals,
        )
    return Homog2DSolution(
        Family.DEGENERATE, q, m, C=C, residual=residuals[best], residuals=residuals
    )


def sample_family(
    family: Family,
    q: float,
    m: float,
    theta: np.ndarray,
    reflected: bool = False,
    C: float = 1.0,
) -> np.ndarray:
    """Trace generator for each catalogue family."""
    if family is Family.HALF_PLANE:
        return half_plane_profile(q, m, theta, reflected)
    if family is Family.WEDGE:
        if not -q < m < 0:
            raise DomainError(f"The wedge needs -q < m < 0, got m={m}")
        return wedge_profile(q, m, theta)
    if family is Family.DEGENERATE:
        return degenerate_profile(C, theta)
    raise DomainError(f"No profile for family {family}")


# ==============================================================================
# Wedge instability
# ==============================================================================


def _check_wedge(q: float, m: float) -> float:
    if not -q < m < 0:
        raise DomainError(f"The wedge exists only for -q < m < 0, got q={q}, m={m}")
    return math.sqrt(q * q - m * m)


def wedge_second_variation(q: float, m: float) -> Tuple[float, float]:
    """(f'(0), f''(0)) of t -> J(v_t) for the wedge rectangle variation."""
    s = _check_wedge(q, m)
    return 0.0, 2.0 * (s / abs(m)) * (m * m - q * q)


def wedge_energy_exact(q: float, m: float, t: float) -> float:
    """Closed form of J(v_t) on the rectangle [-1,1] x [0, s/|m|]."""
    s = _check_wedge(q, m)
    if t < 0:
        raise DomainError(f"Wedge variation needs t >= 0, got {t}")
    u = 1.0 / (1.0 + t)
    return (s**3 / abs(m)) * (2.0 + 2.0 * u * u - u - u**3)


def wedge_rectangle_grid(q: float, m: float, h: float) -> Grid:
    """[-1,1] x [0, H] with H the first multiple of h above s/|m|."""
    s = _check_wedge(q, m)
    height = math.ceil(s / abs(m) / h - 1e-9) * h
    return build_grid(2, [(-1.0, 1.0), (0.0, height)], h)


def wedge_competitor(
    q: float,
    m: float,
    t: float,
    grid: Optional[Grid] = None,
    h: float = 1 / 512,
    signed: bool = False,
) -> ScalarField:
    """
    v_t(x) = (s (|x_1| + t)/(1+t) + m x_2)^+ on the rectangle.

    The grid may extend above s/|m|, where v_t vanishes. With signed=True the
    affine expression is returned without the positive part.
    """
    s = _check_wedge(q, m)
    if t < 0:
        raise DomainError(f"Wedge variation needs t >= 0, got {t}")
    grid = grid or wedge_rectangle_grid(q, m, h)
    x = grid.coords()
    raw = s * (np.abs(x[..., 0]) + t) / (1.0 + t) + m * x[..., 1]
    if signed:
        return ScalarField(grid, raw, nonneg=False)
    return ScalarField(grid, np.maximum(raw, 0.0))


def wedge_curvature_fit(
    ts: Sequence[float], energies: Sequence[float], degree: int = 5
) -> float:
    """Second derivative at t = 0 from a polynomial fit of J(v_t)."""
    ts = np.asarray(ts, dtype=float)
    degree = min(degree, ts.size - 1)
    values = np.asarray(energies, dtype=float)
    coeffs = np.polynomial.polynomial.polyfit(ts, values, degree)
    return float(2.0 * coeffs[2])


# ==============================================================================
# Degenerate instability
# ==============================================================================


@dataclass(frozen=True)
class DegenerateGap:
    """J(v + phi) - J(v) on the half-ball and its ingredients."""

    gap: float
    predicted: float
    wall_integral: float
    phi: ScalarField = field(repr=False)
    phi_min_interior: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return {
            "gap": self.gap,
            "predicted": self.predicted,
            "wall_integral": self.wall_integral,
            "phi_min_interior": self.phi_min_interior,
        }


def degenerate_counterexample_gap(
    C: float, q: float, m: float, gamma: float, R: float = 1.0, h: float = 1 / 64
) -> DegenerateGap:
    """
    Energy gap of the competitor v + phi for v = C x_d^+ on B_R^+.

    phi is harmonic in B_R^+, vanishes on the arc and has d phi/d x_d = gamma
    on the flat part; the identity gives J(v+phi) - J(v) = 2(m - C - gamma/2)
    int_wall phi.

    Raises:
        DomainError: parameters outside C >= q > 0, -q < m < q,
            m - C <= gamma/2 < 0
    """
    if not (q > 0 and C >= q):
        raise DomainError(f"Need C >= q > 0, got C={C}, q={q}")
    if not -q < m < q:
        raise DomainError(f"Need -q < m < q, got m={m}")
    if not (m - C <= gamma / 2 < 0):
        raise DomainError(f"Need m - C <= gamma/2 < 0, got gamma={gamma}")

    from .energy import JParams, energy_J

    grid = build_grid(2, (R, R), h)
    region = Region.half_ball(grid, (0.0, 0.0), R)
    A_gauss = np.broadcast_to(np.eye(2), gauss_coordinates(grid).shape[:-1] + (2, 2))
    K = stiffness_matrix(grid, A_gauss, region.cells).tocsc()

    coords = grid.coords()
    free = (np.linalg.norm(coords, axis=-1) < R).ravel()
    ell = wall_lumped(grid, region.wall).ravel()
    b = -gamma * ell

    index = np.flatnonzero(free)
    K_ff = K[index][:, index]
    phi = np.zeros(grid.num_nodes)
    phi[index] = spsolve(K_ff.tocsc(), b[index])
    phi_field = ScalarField(grid, phi.reshape(grid.shape), nonneg=False)

    v = ScalarField(grid, C * coords[..., 1])
    p = JParams(q, m)
    competitor = ScalarField(grid, np.maximum(v.values + phi_field.values, 0.0))
    gap = energy_J(competitor, p, region).total - energy_J(v, p, region).total

    wall_integral = float(ell @ phi)
    predicted = 2.0 * (m - C - gamma / 2.0) * wall_integral
    interior = free.reshape(grid.shape)
    phi_min = float(phi.reshape(grid.shape)[interior].min(initial=math.inf))
    logger.info(
        f"Degenerate competitor C={C}, gamma={gamma}: gap={gap:.6g}, "
        f"predicted={predicted:.6g}, min phi={phi_min:.3e}"
    )
    return DegenerateGap(gap, predicted, wall_integral, phi_field, phi_min)


__all__ = [
    "HalfPlaneParams",
    "half_plane_eval",
    "half_plane_signed",
    "half_plane_field",
    "contact_angle",
    "angle_table",
    "Family",
    "Homog2DSolution",
    "half_plane_profile",
    "wedge_profile",
    "degenerate_profile",
    "first_zero_angle",
    "classify_2d",
    "sample_family",
    "wedge_second_variation",
    "wedge_energy_exact",
    "wedge_rectangle_grid",
    "wedge_competitor",
    "wedge_curvature_fit",
    "DegenerateGap",
    "degenerate_counterexample_gap",
]
