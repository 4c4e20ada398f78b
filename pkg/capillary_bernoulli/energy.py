# capillary_bernoulli/energy.py
"""
Discrete energies: F, the model functional J, the frozen-coefficient pair
(G+, G'), the almost-minimality gap and the boundary-adjusted Weiss energy.

Nodal quadrature (default for F and J): Dirichlet term with Q1 Gauss
gradients, bulk term with the nodal indicator 1{u > tau} and trapezoid
weights, wall term with the trapezoid rule on the wall row.

Cut quadrature (d = 2): every term from the P1 interpolant of the signed
extension, with exact positive-part integration. Exact on clipped
piecewise-linear fields.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assembly import (
    dirichlet_density,
    gauss_coordinates,
    gauss_gradients,
    lumped_mass,
    triangle_centroids,
    triangle_fractions,
    triangle_gradients,
    wall_lumped,
    wall_positive_integrals,
)
from .coefficients import CoeffField, constant_coefficients
from .config import (
    CONST_CA,
    CONST_CBETA,
    CONST_CQ,
    WEISS_SAMPLES_FACTOR,
    positivity_threshold,
)
from .exceptions import (
    ConfigurationError,
    DomainError,
    PreconditionError,
    ResolutionError,
)
from .fields import FrameTransform, ScalarField, sample_field, signed_extension
from .grid import Grid, Region, reference_grid
from .storage import save_csv, save_json

# Setup logging
logger = logging.getLogger(__name__)

QUADRATURES = ("nodal", "cut")


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy terms; total = dirichlet + bulk + wall in that order."""

    dirichlet: float
    bulk: float
    wall: float
    total: float

    @classmethod
    def of(cls, dirichlet: float, bulk: float, wall: float) -> "EnergyBreakdown":
        return cls(dirichlet, bulk, wall, dirichlet + bulk + wall)

    def as_dict(self) -> Dict[str, float]:
        return {
            "dirichlet": self.dirichlet,
            "bulk": self.bulk,
            "wall": self.wall,
            "total": self.total,
        }


@dataclass(frozen=True)
class JParams:
    """Constants (q, m) of the model functional J."""

    q: float
    m: float

    def __post_init__(self) -> None:
        if not self.q > 0:
            raise DomainError(f"J needs q > 0, got q={self.q}")

    @property
    def admissible(self) -> bool:
        return -self.q < self.m < self.q

    def require_admissible(self) -> None:
        if not self.admissible:
            raise DomainError(
                f"Need -q < m < q (|beta| < a sqrt(Q)), got q={self.q}, m={self.m}"
            )

    @property
    def s(self) -> float:
        """Tangential slope sqrt(q^2 - m^2)."""
        self.require_admissible()
        return math.sqrt(self.q**2 - self.m**2)

    @classmethod
    def frozen(cls, c: CoeffField, x0: Sequence[float]) -> "JParams":
        """q = sqrt(Q(x0)), m = beta(x0)/a(x0)."""
        q, m = c.frozen_q_m(x0)
        return cls(q, m)


# ==============================================================================
# Core quadrature
# ==============================================================================

WallIntegrand = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _check_region_nonneg(u: ScalarField, region: Region) -> None:
    touched = region.node_mask()
    bad = touched & (np.asarray(u.values) < 0.0)
    if np.any(bad):
        offending = [tuple(int(i) for i in idx) for idx in np.argwhere(bad)[:10]]
        raise PreconditionError(
            f"{int(bad.sum())} negative nodes inside the energy region, "
            f"e.g. {offending}"
        )


def _check_quadrature(quadrature: str) -> None:
    if quadrature not in QUADRATURES:
        raise ConfigurationError(
            f"Unknown quadrature '{quadrature}' (known: {QUADRATURES})",
            key="quadrature",
        )


def _nodal_energy(
    u: ScalarField,
    region: Region,
    A_sampler: Callable[[np.ndarray], np.ndarray],
    Q_nodes: np.ndarray,
    wall_term: WallIntegrand,
) -> EnergyBreakdown:
    """
    Dirichlet term of the bilinear interpolant by 2^d Gauss points per cell,
    the form stiffness_matrix assembles, weighted by region coverage. Bulk
    and wall terms use trapezoid weights.
    """
    grid = u.grid
    values = np.asarray(u.values)
    A_gauss = A_sampler(gauss_coordinates(grid))
    density = dirichlet_density(grid, values, A_gauss)
    dirichlet = float(np.sum(region.cells.ravel() * density))

    mass = lumped_mass(grid, region.cells)
    indicator = values > u.tau()
    bulk = float(np.sum((mass * Q_nodes * indicator).ravel()))

    weights = wall_lumped(grid, region.wall)[..., 0]
    wall_points = grid.coords()[..., 0, :]
    wall = float(np.sum((weights * wall_term(wall_points, values[..., 0])).ravel()))
    return EnergyBreakdown.of(dirichlet, bulk, wall)


def _cut_energy(
    u: ScalarField,
    region: Region,
    A_sampler: Callable[[np.ndarray], np.ndarray],
    Q_sampler: Callable[[np.ndarray], np.ndarray],
    wall_term: WallIntegrand,
    signed: Optional[ScalarField],
) -> EnergyBreakdown:
    grid = u.grid
    if grid.dim != 2:
        raise ConfigurationError(
            "Cut quadrature is available in d = 2 only", key="quadrature"
        )
    phi_field = signed if signed is not None else signed_extension(u)
    phi = np.asarray(phi_field.values, dtype=float)
    tau = positivity_threshold(np.abs(phi).max(initial=0.0))
    phi = np.where(phi > tau, phi, np.minimum(phi, 0.0))

    area = 0.5 * grid.h**2
    frac = triangle_fractions(grid, phi)
    grads = triangle_gradients(grid, phi)
    centroids = triangle_centroids(grid)
    A_tri = A_sampler(centroids)
    flux = np.einsum("ctkl,ctl->ctk", A_tri, grads)
    density = area * frac * np.einsum("ctk,ctk->ct", grads, flux)
    cells = region.cells.ravel()
    dirichlet = float(np.sum(cells * density.sum(axis=1)))
    bulk = float(np.sum(cells * (area * frac * Q_sampler(centroids)).sum(axis=1)))

    face_centers = grid.wall_face_centers()
    positive_part = wall_positive_integrals(grid, phi)
    # wall_term is linear in u, so it acts on the integral of phi^+ per face
    wall = float(np.sum(region.wall * wall_term(face_centers, positive_part)))
    return EnergyBreakdown.of(dirichlet, bulk, wall)


def energy_F(
    u: ScalarField,
    c: CoeffField,
    region: Optional[Region] = None,
    quadrature: str = "nodal",
    signed: Optional[ScalarField] = None,
) -> EnergyBreakdown:
    """
    F(u) = int grad u . A grad u + Q 1{u>0} + int_wall 2 beta u.

    Args:
        u: nonnegative field
        c: coefficient field
        region: quadrature region (default: whole grid)
        quadrature: "nodal" or "cut" (d = 2)
        signed: signed field for cut quadrature (default: signed_extension(u))

    Raises:
        PreconditionError: negative nodes inside the region
    """
    _check_quadrature(quadrature)
    region = region or Region.full(u.grid)
    _check_region_nonneg(u, region)

    def wall_term(points: np.ndarray, values: np.ndarray) -> np.ndarray:
        return 2.0 * c.beta(points) * values

    if quadrature == "cut":
        return _cut_energy(u, region, c.A, c.Q, wall_term, signed)
    Q_nodes = c.Q(u.grid.coords())
    return _nodal_energy(u, region, c.A, Q_nodes, wall_term)


def _identity_sampler(dim: int) -> Callable[[np.ndarray], np.ndarray]:
    eye = np.eye(dim)

    def sampler(points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(eye, np.asarray(points).shape[:-1] + (dim, dim))

    return sampler


def energy_J(
    u: ScalarField,
    p: JParams,
    region: Optional[Region] = None,
    quadrature: str = "nodal",
    signed: Optional[ScalarField] = None,
) -> EnergyBreakdown:
    """J(u) = int |grad u|^2 + q^2 1{u>0} + 2 m int_wall |u|."""
    _check_quadrature(quadrature)
    region = region or Region.full(u.grid)
    _check_region_nonneg(u, region)
    q2 = p.q**2

    def wall_term(points: np.ndarray, values: np.ndarray) -> np.ndarray:
        return 2.0 * p.m * np.abs(values)

    def Q_sampler(points: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(points).shape[:-1], q2)

    A_sampler = _identity_sampler(u.grid.dim)
    if quadrature == "cut":
        return _cut_energy(u, region, A_sampler, Q_sampler, wall_term, signed)
    return _nodal_energy(u, region, A_sampler, Q_sampler(u.grid.coords()), wall_term)


def energy_G(
    u: ScalarField,
    c: CoeffField,
    x0: Sequence[float],
    region: Optional[Region] = None,
    quadrature: str = "nodal",
) -> Tuple[float, float]:
    """
    Frozen functionals at x0 for a field given in the x0-frame.

    G+(v) = int |grad v|^2 + Q(x0) 1{v>0},  G'(v) = 2 beta(x0)/a(x0) int_wall v.

    Returns:
        (Gplus, Gprime)
    """
    p = JParams.frozen(c, x0)
    energy = energy_J(u, p, region, quadrature)
    return energy.dirichlet + energy.bulk, energy.wall


def frame_energy_F(
    u: ScalarField,
    c: CoeffField,
    x0: Sequence[float],
    r: float,
    frozen: bool = False,
    quadrature: str = "nodal",
) -> EnergyBreakdown:
    """
    F over the frame ellipsoid E_r(x0) = T(B_r), on u's own grid.

    With frozen=True the coefficients are frozen at x0, which gives
    det(A(x0)^{1/2}) (G+ + G')(u^{x0}, B_r).
    """
    T = FrameTransform.from_coefficients(c, x0)
    region = Region.ellipsoid(u.grid, T.x0, T.M, r)
    coeffs = c
    if frozen:
        point = np.asarray(x0, dtype=float)
        coeffs = constant_coefficients(
            u.grid.dim, A=c.A(point), Q=float(c.Q(point)), beta=float(c.beta(point))
        )
    return energy_F(u, coeffs, region, quadrature)


# ==============================================================================
# Almost-minimality
# ==============================================================================


@dataclass(frozen=True)
class GapReport:
    """LHS - RHS of the improved almost-minimality inequality with its terms."""

    gap: float
    energy_u: float
    energy_competitor: float
    wall_l1_term: float
    q_term: float
    a_term: float

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def almost_minimality_gap(
    u: ScalarField,
    competitor: ScalarField,
    c: CoeffField,
    x0: Sequence[float],
    r: float,
    constants: Optional[Dict[str, float]] = None,
    tol: float = 1e-12,
) -> GapReport:
    """
    (G+ + G')(u) - (G+ + G')(competitor) - error terms over B_r in the x0-frame.

    The frame energies are computed on the physical grid as the frozen F
    over E_r(x0) divided by det(A(x0)^{1/2}). Error terms:
    C_beta r^min(d_beta, d_A) ||u - v||_L1(wall), C_Q r^(d + d_Q),
    C_A r^(d + d_A) ||grad u||_inf^2.

    Raises:
        PreconditionError: competitor differs from u outside E_r(x0)
    """
    consts = {"C_A": CONST_CA, "C_Q": CONST_CQ, "C_beta": CONST_CBETA}
    consts.update(constants or {})
    grid = u.grid
    T = FrameTransform.from_coefficients(c, x0)

    region = Region.ellipsoid(grid, T.x0, T.M, r)
    inside = region.node_mask()
    local = T.inverse(grid.coords())
    interior = np.linalg.norm(local, axis=-1) < r
    outside = ~(inside & interior)
    diff = np.abs(np.asarray(u.values) - np.asarray(competitor.values))
    mismatch = float(diff[outside].max(initial=0.0))
    if mismatch > tol:
        raise PreconditionError(
            f"Competitor differs from u outside the frame ball by {mismatch:.3e}"
        )

    energy_u = frame_energy_F(u, c, x0, r, frozen=True).total / T.jacobian
    energy_v = frame_energy_F(competitor, c, x0, r, frozen=True).total / T.jacobian

    d = grid.dim
    weights = wall_lumped(grid, region.wall)[..., 0]
    l1_wall = float(np.sum(weights * diff[..., 0]))
    wall_l1_term = consts["C_beta"] * r ** min(c.delta_beta, c.delta_A) * l1_wall
    q_term = consts["C_Q"] * r ** (d + c.delta_Q)
    grads = gauss_gradients(grid, np.asarray(u.values))
    active = region.cells.ravel() > 0.0
    sup_grad = float(np.linalg.norm(grads[active], axis=-1).max(initial=0.0))
    a_term = consts["C_A"] * r ** (d + c.delta_A) * sup_grad**2

    gap = energy_u - energy_v - wall_l1_term - q_term - a_term
    logger.debug(
        f"Almost-minimality at {list(x0)}, r={r:.4g}: G(u)={energy_u:.6g}, "
        f"G(v)={energy_v:.6g}, gap={gap:.3e}"
    )
    return GapReport(gap, energy_u, energy_v, wall_l1_term, q_term, a_term)


# ==============================================================================
# Weiss energy
# ==============================================================================


@dataclass
class WeissReport:
    """W(r) per radius with its scaled components."""

    x0: List[float]
    radii: List[float]
    W: List[float] = field(default_factory=list)
    dirichlet: List[float] = field(default_factory=list)
    bulk: List[float] = field(default_factory=list)
    wall: List[float] = field(default_factory=list)
    normalization: List[float] = field(default_factory=list)
    tolerance: float = 0.05

    def relative_increments(self) -> List[float]:
        """(W(r_{k+1}) - W(r_k)) / |W(r_k)| for decreasing radii."""
        out = []
        for w_big, w_small in zip(self.W[:-1], self.W[1:]):
            scale = max(abs(w_big), 1e-300)
            out.append((w_small - w_big) / scale)
        return out

    def max_relative_drift(self) -> float:
        """Largest relative violation of monotonicity (0 when monotone)."""
        return max([0.0] + [max(0.0, inc) for inc in self.relative_increments()])

    def is_monotone(self) -> bool:
        """W nondecreasing in r up to the relative drift tolerance."""
        return self.max_relative_drift() <= self.tolerance

    def spread(self) -> float:
        return max(self.W) - min(self.W) if self.W else 0.0

    def drift_exponent(self) -> Optional[float]:
        """Log-log slope of positive increments against r (None if < 2)."""
        pairs = [
            (r, inc)
            for r, inc in zip(self.radii[1:], self.relative_increments())
            if inc > 0.0
        ]
        if len(pairs) < 2:
            return None
        logs = np.log(np.array(pairs))
        slope = np.polyfit(logs[:, 0], logs[:, 1], 1)[0]
        return float(slope)

    def summary(self) -> Dict[str, Any]:
        return {
            "x0": self.x0,
            "radii": self.radii,
            "monotone": self.is_monotone(),
            "max_relative_drift": self.max_relative_drift(),
            "drift_exponent": self.drift_exponent(),
            "spread": self.spread(),
            "tolerance": self.tolerance,
        }

    def rows(self) -> List[List[float]]:
        return [
            [r, w, dr, b, wa, n]
            for r, w, dr, b, wa, n in zip(
                self.radii,
                self.W,
                self.dirichlet,
                self.bulk,
                self.wall,
                self.normalization,
            )
        ]

    def save(self, csv_path: Path, json_path: Path) -> None:
        save_csv(
            csv_path,
            ["r", "W", "dirichlet", "bulk", "wall", "normalization"],
            self.rows(),
        )
        save_json(json_path, self.summary())


def sphere_integral_of_square(
    u: ScalarField, T: FrameTransform, r: float
) -> float:
    """
    Integral of u(T x)^2 over the frame half-sphere of radius r.

    d = 2: midpoint rule on the arc with 4 ceil(pi r / h) samples.
    d = 3: midpoint rule in latitude and longitude.
    """
    h = u.grid.h
    n = WEISS_SAMPLES_FACTOR * math.ceil(math.pi * r / h)
    if u.grid.dim == 2:
        theta = (np.arange(n) + 0.5) * math.pi / n
        points = r * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        values = sample_field(u, T.apply(points))
        return float(np.sum(values**2) * math.pi * r / n)

    n_lat = max(2, n // 2)
    lat = (np.arange(n_lat) + 0.5) * (0.5 * math.pi) / n_lat
    lon = (np.arange(n) + 0.5) * (2.0 * math.pi) / n
    LAT, LON = np.meshgrid(lat, lon, indexing="ij")
    points = r * np.stack(
        [np.sin(LAT) * np.cos(LON), np.sin(LAT) * np.sin(LON), np.cos(LAT)], axis=-1
    )
    values = sample_field(u, T.apply(points))
    cell = (0.5 * math.pi / n_lat) * (2.0 * math.pi / n) * r**2
    return float(np.sum(values**2 * np.sin(LAT)) * cell)


def is_free_boundary_point(u: ScalarField, x0: Sequence[float]) -> bool:
    """u(x0) <= tau and some node within 2h of x0 is positive."""
    point = np.asarray(x0, dtype=float)
    tau = u.tau()
    if float(sample_field(u, point)) > tau:
        return False
    dist = np.linalg.norm(u.grid.coords() - point, axis=-1)
    near = dist <= 2.0 * u.grid.h * (1.0 + 1e-12)
    return bool(np.any(np.asarray(u.values)[near] > tau))


def weiss(
    u: ScalarField,
    x0: Sequence[float],
    radii: Sequence[float],
    c: Optional[CoeffField] = None,
    params: Optional[JParams] = None,
    quadrature: Optional[str] = None,
    tolerance: float = 0.05,
) -> WeissReport:
    """
    Boundary-adjusted Weiss energy at a wall free-boundary point.

    W(r) = r^-d (G+ + G')(u^{x0}, B_r) - r^-(d+1) int_{dB_r, x_d>0} (u^{x0})^2

    Args:
        u: nonnegative field
        x0: wall point on the free boundary
        radii: radii, each >= 4h; reported in decreasing order
        c: coefficient field (frame and frozen q, m); identity frame if None
        params: override of the frozen (q, m)
        quadrature: "cut" (default in d = 2) or "nodal"
        tolerance: relative drift allowed by the monotonicity verdict

    Raises:
        DomainError: x0 is not a free-boundary point
        ResolutionError: some radius below 4h
    """
    grid = u.grid
    h = grid.h
    d = grid.dim
    quadrature = quadrature or ("cut" if d == 2 else "nodal")
    point = [float(v) for v in x0]

    if not is_free_boundary_point(u, point):
        raise DomainError(f"x0={point} is not a free-boundary point of u")
    ordered = sorted({float(r) for r in radii}, reverse=True)
    if not ordered:
        raise ConfigurationError("weiss needs at least one radius", key="weiss_radii")
    if ordered[-1] < 4.0 * h * (1.0 - 1e-12):
        raise ResolutionError(f"Weiss radius {ordered[-1]} below the floor 4h={4 * h}")

    if c is not None:
        T = FrameTransform.from_coefficients(c, point)
        p = params or JParams.frozen(c, point)
    else:
        if params is None:
            raise ConfigurationError("weiss needs coefficients or (q, m) parameters")
        T = FrameTransform.from_matrix(point, np.eye(d))
        p = params

    norm_M = float(np.linalg.norm(T.M, 2))
    report = WeissReport(x0=point, radii=ordered, tolerance=tolerance)
    for r in ordered:
        n = max(2, math.ceil(r * norm_M / h - 1e-9))
        frame_grid = reference_grid(d, r, r / n)
        v = ScalarField(
            frame_grid, sample_field(u, T.apply(frame_grid.coords())), nonneg=True
        )
        region = Region.half_ball(frame_grid, np.zeros(d), r)
        energy = energy_J(v, p, region, quadrature)
        boundary = sphere_integral_of_square(u, T, r)
        scale = r**-d
        norm_term = boundary * r ** -(d + 1)
        report.dirichlet.append(energy.dirichlet * scale)
        report.bulk.append(energy.bulk * scale)
        report.wall.append(energy.wall * scale)
        report.normalization.append(norm_term)
        report.W.append(energy.total * scale - norm_term)
        logger.debug(f"Weiss r={r:.4g}: W={report.W[-1]:.8g}")

    logger.info(
        f"Weiss at {point}: {len(ordered)} radii, spread={report.spread():.3e}, "
        f"monotone={report.is_monotone()}"
    )
    return report


__all__ = [
    "QUADRATURES",
    "EnergyBreakdown",
    "JParams",
    "energy_F",
    "energy_J",
    "energy_G",
    "frame_energy_F",
    "GapReport",
    "almost_minimality_gap",
    "WeissReport",
    "sphere_integral_of_square",
    "is_free_boundary_point",
    "weiss",
]
