# capillary_bernoulli/fbdiag.py
"""
Free-boundary extraction and audits on computed fields (d = 2 contours).

The interface is the marching-squares contour of the signed extension of u at
level tau, which is exact for clipped affine fields. Audits compare measured
gradients against the viscosity conditions and report PASS, FAIL or
INCONCLUSIVE with the measured number and the tolerance used.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import distance_transform_edt

from .assembly import (
    gauss_coordinates,
    lumped_mass,
    stiffness_matrix,
    triangle_fractions,
)
from .coefficients import CoeffField
from .config import THETA_BAND
from .energy import JParams, is_free_boundary_point
from .exact import Family, Homog2DSolution, classify_2d
from .exceptions import ConfigurationError, DomainError, ResolutionError
from .fields import FrameTransform, ScalarField, blowup, sample_field, signed_extension
from .grid import Grid, Region, ball_node_mask
from .solver import dirichlet_mask

# Setup logging
logger = logging.getLogger(__name__)

TRACE_SAMPLES = 181
CURVATURE_WINDOW = 5


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"


class PointLabel(str, Enum):
    REG = "REG"
    SING = "SING"
    INCONCLUSIVE = "INCONCLUSIVE"


# ==============================================================================
# Extraction
# ==============================================================================


@dataclass
class FreeBoundary:
    """Interface polylines, contact points, wetting set and measured angles."""

    grid: Grid
    tau: float
    polylines: List[np.ndarray] = field(default_factory=list)
    simple: List[bool] = field(default_factory=list)
    contact_points: List[np.ndarray] = field(default_factory=list)
    contact_polyline: List[int] = field(default_factory=list)
    wet_direction: List[float] = field(default_factory=list)
    measured_theta: List[float] = field(default_factory=list)
    wetting_intervals: List[Tuple[float, float]] = field(default_factory=list)
    wetting_mask: Optional[np.ndarray] = field(default=None, repr=False)
    curvature: List[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def empty(self) -> bool:
        return not self.polylines

    def vertices(self) -> np.ndarray:
        if not self.polylines:
            return np.zeros((0, self.grid.dim))
        return np.concatenate(self.polylines, axis=0)

    def polyline_rows(self) -> List[List[float]]:
        return [
            [k, n, *point]
            for k, line in enumerate(self.polylines)
            for n, point in enumerate(line)
        ]

    def angle_rows(self) -> List[List[float]]:
        return [
            [k, *point, theta, math.degrees(theta) if math.isfinite(theta) else theta]
            for k, (point, theta) in enumerate(
                zip(self.contact_points, self.measured_theta)
            )
        ]

    def summary(self) -> Dict[str, Any]:
        return {
            "polylines": len(self.polylines),
            "vertices": int(sum(len(p) for p in self.polylines)),
            "simple": self.simple,
            "contact_points": [p.tolist() for p in self.contact_points],
            "measured_theta": self.measured_theta,
            "wetting_intervals": [list(iv) for iv in self.wetting_intervals],
        }


def _edge_point(
    coords: np.ndarray,
    phi: np.ndarray,
    a: Tuple[int, int],
    b: Tuple[int, int],
    level: float,
) -> np.ndarray:
    fa, fb = phi[a], phi[b]
    t = (level - fa) / (fb - fa)
    return coords[a] + float(np.clip(t, 0.0, 1.0)) * (coords[b] - coords[a])


def marching_squares(
    grid: Grid, phi: np.ndarray, level: float
) -> Tuple[List[np.ndarray], List[bool]]:
    """
    Polylines of {phi = level} with phi > level taken as the inside.

    Saddle cells are resolved by the sign of the cell mean. Returns the
    polylines and, per polyline, whether it is closed.
    """
    if grid.dim != 2:
        raise ConfigurationError("Contour extraction is available in d = 2 only")
    coords = grid.coords()
    inside = phi > level
    corners = np.stack(
        [inside[:-1, :-1], inside[1:, :-1], inside[1:, 1:], inside[:-1, 1:]], axis=-1
    )
    mixed = np.argwhere(corners.any(axis=-1) & ~corners.all(axis=-1))

    points: Dict[Tuple[str, int, int], np.ndarray] = {}
    segments: List[Tuple[Tuple[str, int, int], Tuple[str, int, int]]] = []
    for i, j in mixed:
        i, j = int(i), int(j)
        b0, b1, b2, b3 = corners[i, j]
        nodes = ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1))
        keys = (("h", i, j), ("v", i + 1, j), ("h", i, j + 1), ("v", i, j))
        ends = ((0, 1), (1, 2), (3, 2), (0, 3))
        crossing = [b0 != b1, b1 != b2, b3 != b2, b0 != b3]
        for e, crossed in enumerate(crossing):
            if crossed and keys[e] not in points:
                a, b = ends[e]
                points[keys[e]] = _edge_point(coords, phi, nodes[a], nodes[b], level)
        edges = [e for e, crossed in enumerate(crossing) if crossed]
        if len(edges) == 2:
            segments.append((keys[edges[0]], keys[edges[1]]))
            continue
        center = np.mean([phi[n] for n in nodes]) > level
        if center == b0:
            segments.extend([(keys[0], keys[1]), (keys[2], keys[3])])
        else:
            segments.extend([(keys[0], keys[3]), (keys[1], keys[2])])

    incident: Dict[Tuple[str, int, int], List[int]] = {}
    for s, (ka, kb) in enumerate(segments):
        incident.setdefault(ka, []).append(s)
        incident.setdefault(kb, []).append(s)

    used = np.zeros(len(segments), dtype=bool)

    def walk(start: Tuple[str, int, int]) -> List[Tuple[str, int, int]]:
        chain = [start]
        key = start
        while True:
            nxt = [s for s in incident[key] if not used[s]]
            if not nxt:
                return chain
            s = nxt[0]
            used[s] = True
            ka, kb = segments[s]
            key = kb if ka == key else ka
            chain.append(key)

    polylines: List[np.ndarray] = []
    closed: List[bool] = []
    starts = sorted(k for k, segs in incident.items() if len(segs) == 1)
    for key in starts:
        if all(used[s] for s in incident[key]):
            continue
        chain = walk(key)
        polylines.append(np.array([points[k] for k in chain]))
        closed.append(False)
    for s in range(len(segments)):
        if used[s]:
            continue
        chain = walk(segments[s][0])
        polylines.append(np.array([points[k] for k in chain]))
        closed.append(True)
    return [_dedupe(p) for p in polylines], closed


def _dedupe(line: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if len(line) < 2:
        return line
    keep = np.ones(len(line), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(line, axis=0), axis=-1) > tol
    return line[keep]


def is_simple(line: np.ndarray, closed: bool = False, chunk: int = 256) -> bool:
    """No two non-adjacent segments of the polyline cross properly."""
    n = len(line) - 1
    if n < 3:
        return True
    a, b = line[:-1], line[1:]

    def cross(o: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        return (p[..., 0] - o[..., 0]) * (q[..., 1] - o[..., 1]) - (
            p[..., 1] - o[..., 1]
        ) * (q[..., 0] - o[..., 0])

    idx = np.arange(n)
    for start in range(0, n, chunk):
        rows = idx[start : start + chunk]
        A, B = a[rows][:, None, :], b[rows][:, None, :]
        C, D = a[None, :, :], b[None, :, :]
        d1 = cross(A, B, C)
        d2 = cross(A, B, D)
        d3 = cross(C, D, A)
        d4 = cross(C, D, B)
        hit = (d1 * d2 < 0.0) & (d3 * d4 < 0.0)
        gap = idx[None, :] - rows[:, None]
        hit &= gap > 1
        if closed:
            hit &= ~((rows[:, None] == 0) & (idx[None, :] == n - 1))
        if np.any(hit):
            return False
    return True


def _positive_normals(phi: ScalarField, line: np.ndarray) -> np.ndarray:
    """Unit normals of the polyline pointing into {phi > 0}."""
    grid = phi.grid
    tangent = np.gradient(line, axis=0) if len(line) > 1 else np.zeros_like(line)
    norm = np.linalg.norm(tangent, axis=-1, keepdims=True)
    tangent = tangent / np.where(norm > 0.0, norm, 1.0)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=-1)
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    plus = sample_field(phi, np.clip(line + grid.h * normal, lo, hi))
    minus = sample_field(phi, np.clip(line - grid.h * normal, lo, hi))
    return np.where((plus >= minus)[:, None], normal, -normal)


def fit_circle_curvature(points: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Algebraic circle fit A|x|^2 + B x + C y + D = 0 through the points.

    Returns the curvature 1/R (0 for collinear points) and the gradient of the
    implicit function at the middle point, which points away from the center
    when A > 0.
    """
    center = points.mean(axis=0)
    scale = float(np.abs(points - center).max()) or 1.0
    p = (points - center) / scale
    design = np.column_stack([np.sum(p * p, axis=1), p[:, 0], p[:, 1], np.ones(len(p))])
    _, _, vt = np.linalg.svd(design)
    A, B, C, D = vt[-1]
    disc = B * B + C * C - 4.0 * A * D
    mid = p[len(p) // 2]
    grad = 2.0 * A * mid + np.array([B, C])
    if disc <= 0.0 or abs(A) < 1e-12 * math.sqrt(max(disc, 1e-300)):
        return 0.0, grad
    return float(2.0 * abs(A) / math.sqrt(disc) / scale), grad * np.sign(A)


def polyline_curvature(
    phi: ScalarField, line: np.ndarray, window: int = CURVATURE_WINDOW
) -> np.ndarray:
    """
    Signed curvature samples (x, y, H) over sliding windows.

    H > 0 when the center of curvature lies on the zero side, which matches
    H = -grad u . D^2 u grad u / |grad u|^3 for harmonic u.
    """
    half = window // 2
    if len(line) < window:
        return np.zeros((0, 3))
    normals = _positive_normals(phi, line)
    samples = []
    for k in range(half, len(line) - half):
        kappa, outward = fit_circle_curvature(line[k - half : k + half + 1])
        if kappa == 0.0:
            samples.append([*line[k], 0.0])
            continue
        # outward points away from the center
        toward_positive = float(outward @ normals[k])
        samples.append([*line[k], kappa if toward_positive > 0.0 else -kappa])
    return np.array(samples)


def wetting_intervals(grid: Grid, wet: np.ndarray) -> List[Tuple[float, float]]:
    """Maximal runs of wet wall nodes as (x_first, x_last)."""
    x = grid.axes()[0]
    out = []
    padded = np.concatenate([[False], wet, [False]]).astype(int)
    changes = np.diff(padded)
    for start, stop in zip(np.flatnonzero(changes == 1), np.flatnonzero(changes == -1)):
        out.append((float(x[start]), float(x[stop - 1])))
    return out


def tls_direction(points: np.ndarray) -> np.ndarray:
    """Total-least-squares line direction through the points."""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[0]


def measure_contact_angle(
    phi: ScalarField,
    line: np.ndarray,
    band: Tuple[float, float] = THETA_BAND,
) -> Tuple[float, float]:
    """
    Angle between the interface and the wet part of the wall at line[0].

    The interface direction is a total-least-squares fit over vertices with
    x_d in [band[0] h, band[1] h]. Returns (theta, wet direction +1/-1);
    theta is NaN when fewer than two vertices are available.
    """
    grid = phi.grid
    h = grid.h
    start = line[0]
    heights = line[:, -1]
    chosen = line[(heights >= band[0] * h - 1e-12) & (heights <= band[1] * h + 1e-12)]
    if len(chosen) < 2:
        chosen = line[heights <= band[1] * h + 1e-12]

    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    step = np.array([h, 0.0])
    right = float(sample_field(phi, np.clip(start + step, lo, hi)))
    left = float(sample_field(phi, np.clip(start - step, lo, hi)))
    wet = 1.0 if right >= left else -1.0
    if len(chosen) < 2:
        return math.nan, wet

    direction = tls_direction(chosen)
    if direction[-1] < 0.0:
        direction = -direction
    cos = float(np.clip(direction[0] * wet, -1.0, 1.0))
    return math.acos(cos), wet


def extract_fb(u: ScalarField, band: Tuple[float, float] = THETA_BAND) -> FreeBoundary:
    """
    Interface, contact points, wetting set and contact angles of u.

    An empty positivity set gives an empty FreeBoundary.
    """
    grid = u.grid
    if grid.dim != 2:
        raise ConfigurationError("extract_fb is available in d = 2 only")
    tau = u.tau()
    fb = FreeBoundary(grid=grid, tau=tau)
    wet = np.asarray(u.values)[:, 0] > tau
    fb.wetting_mask = wet
    fb.wetting_intervals = wetting_intervals(grid, wet)
    if not np.any(u.positive()):
        logger.info("Empty positivity set: no free boundary")
        return fb

    phi = signed_extension(u)
    lines, closed = marching_squares(grid, np.asarray(phi.values), tau)
    scale = 1e-12 * max(1.0, grid.diameter)
    for k, (line, is_closed) in enumerate(zip(lines, closed)):
        fb.polylines.append(line)
        fb.simple.append(is_simple(line, closed=is_closed))
        fb.curvature.append(polyline_curvature(phi, line))
        if is_closed:
            continue
        for end in (0, -1):
            if abs(line[end, -1]) <= scale:
                oriented = line if end == 0 else line[::-1]
                theta, wet_dir = measure_contact_angle(phi, oriented, band)
                fb.contact_points.append(oriented[0].copy())
                fb.contact_polyline.append(k)
                fb.measured_theta.append(theta)
                fb.wet_direction.append(wet_dir)

    if not all(fb.simple):
        logger.warning("Extracted interface has a self-intersecting polyline")
    logger.info(
        f"Free boundary: {len(fb.polylines)} polylines, "
        f"{len(fb.contact_points)} contact points, "
        f"angles {[round(math.degrees(t), 3) for t in fb.measured_theta]}"
    )
    return fb


# ==============================================================================
# Audit reports
# ==============================================================================


@dataclass(frozen=True)
class AuditCheck:
    name: str
    verdict: Verdict
    value: float
    tolerance: float
    samples: int = 0
    details: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "verdict": self.verdict.value,
            "value": self.value,
            "tolerance": self.tolerance,
            "samples": self.samples,
            "details": self.details,
        }


@dataclass
class AuditReport:
    checks: List[AuditCheck] = field(default_factory=list)

    def add(self, check: AuditCheck) -> None:
        self.checks.append(check)

    def extend(self, checks: Sequence[AuditCheck]) -> None:
        self.checks.extend(checks)

    def get(self, name: str) -> AuditCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    @property
    def verdict(self) -> Verdict:
        verdicts = {c.verdict for c in self.checks}
        if Verdict.FAIL in verdicts:
            return Verdict.FAIL
        if not verdicts or Verdict.INCONCLUSIVE in verdicts:
            return Verdict.INCONCLUSIVE
        return Verdict.PASS

    def as_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "checks": [c.as_dict() for c in self.checks],
        }


def _residual_check(
    name: str, residuals: np.ndarray, tolerance: float, **details: Any
) -> AuditCheck:
    if residuals.size == 0:
        return AuditCheck(name, Verdict.INCONCLUSIVE, math.nan, tolerance, 0, details)
    value = float(np.max(residuals))
    verdict = Verdict.PASS if value <= tolerance else Verdict.FAIL
    return AuditCheck(name, verdict, value, tolerance, int(residuals.size), details)


def default_tolerance(u: ScalarField, c: CoeffField) -> float:
    """5 q sqrt(h) with q = sqrt(max Q) on the grid."""
    q = math.sqrt(float(np.max(c.Q(u.grid.coords()))))
    return 5.0 * q * math.sqrt(u.grid.h)


def gradient_fit(
    phi: ScalarField, x0: np.ndarray, radius: float, threshold: float
) -> Optional[np.ndarray]:
    """Least-squares gradient of phi over nodes within radius with phi > threshold."""
    grid = phi.grid
    coords = grid.coords()
    near = ball_node_mask(grid, x0, radius, strict=False)
    near &= np.asarray(phi.values) > threshold
    if int(near.sum()) < grid.dim + 1:
        return None
    X = coords[near] - x0
    design = np.column_stack([np.ones(len(X)), X])
    sol, *_ = np.linalg.lstsq(design, np.asarray(phi.values)[near], rcond=None)
    return sol[1:]


def viscosity_audit(
    u: ScalarField,
    c: CoeffField,
    fb: FreeBoundary,
    band: Optional[float] = None,
    tolerance: Optional[float] = None,
) -> AuditReport:
    """
    Gradient-residual proxies of the viscosity conditions.

    interior: |div(A grad u)| at nodes farther than `band` from the zero set;
    wall_neumann: |e_d . A grad u - beta| on the wetting set away from the
    contact points; bernoulli: ||A^{1/2} grad u| - sqrt(Q)| at interface
    vertices with one-sided gradients from the positive side; contact_line:
    tangential or conormal condition at each contact point.

    Raises:
        ResolutionError: band thinner than 2h
    """
    grid = u.grid
    h = grid.h
    band = 2.0 * h if band is None else band
    if band < 2.0 * h * (1.0 - 1e-12):
        raise ResolutionError(f"Audit band {band} is thinner than 2h={2 * h}")
    tol = default_tolerance(u, c) if tolerance is None else tolerance
    report = AuditReport()
    values = np.asarray(u.values)
    tau = u.tau()
    positive = values > tau
    coords = grid.coords()
    dirichlet = dirichlet_mask(grid)

    if np.any(positive) and np.any(~positive):
        distance = distance_transform_edt(positive) * h
    else:
        distance = np.where(positive, np.inf, 0.0)
    deep = positive & (distance > band + 1e-12) & ~dirichlet

    # interior equation
    K = stiffness_matrix(grid, c.A(gauss_coordinates(grid)))
    div = (K @ values.ravel()).reshape(grid.shape) / lumped_mass(grid)
    interior = deep.copy()
    interior[:, 0] = False
    report.add(_residual_check("interior", np.abs(div[interior]), tol, band=band))

    # conormal condition on the wetting set
    wall_nodes = deep[:, 0].copy()
    wall_nodes[[0, -1]] = False
    if grid.shape[1] >= 3:
        idx = np.flatnonzero(wall_nodes)
        du_d = (-3.0 * values[idx, 0] + 4.0 * values[idx, 1] - values[idx, 2]) / (
            2.0 * h
        )
        du_t = (values[idx + 1, 0] - values[idx - 1, 0]) / (2.0 * h)
        points = coords[idx, 0]
        A = c.A(points)
        conormal = A[:, -1, 0] * du_t + A[:, -1, -1] * du_d
        residual = np.abs(conormal - c.beta(points))
    else:
        residual = np.zeros(0)
    report.add(_residual_check("wall_neumann", residual, tol))

    # free-boundary condition
    phi = signed_extension(u)
    bern: List[float] = []
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    for line in fb.polylines:
        if len(line) < 2:
            continue
        normals = _positive_normals(phi, line)
        p1 = line + h * normals
        p2 = line + 2.0 * h * normals
        ok = grid.contains(p1) & grid.contains(p2)
        ok &= (line[:, 0] >= lo[0] + 2.0 * h) & (line[:, 0] <= hi[0] - 2.0 * h)
        ok &= (line[:, 1] >= h - 1e-12) & (line[:, 1] <= hi[1] - 2.0 * h)
        if not np.any(ok):
            continue
        f0 = sample_field(phi, line[ok])
        f1 = sample_field(phi, p1[ok])
        f2 = sample_field(phi, p2[ok])
        slope = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
        n = normals[ok]
        A = c.A(line[ok])
        stretch = np.sqrt(np.einsum("ni,nij,nj->n", n, A, n))
        bern.extend(np.abs(slope * stretch - np.sqrt(c.Q(line[ok]))).tolist())
    report.add(_residual_check("bernoulli", np.array(bern), tol))

    # contact-line disjunction
    for k, point in enumerate(fb.contact_points):
        grad = gradient_fit(phi, point, 3.0 * h, tau)
        name = f"contact_line[{k}]"
        if grad is None:
            report.add(AuditCheck(name, Verdict.INCONCLUSIVE, math.nan, tol))
            continue
        A = c.A(point)
        Q = float(c.Q(point))
        beta = float(c.beta(point))
        a = float(c.a(point))
        tangential = grad.copy()
        tangential[-1] = 0.0
        target = math.sqrt(max(Q - beta**2 / a**2, 0.0))
        r_tan = abs(math.sqrt(float(tangential @ A @ tangential)) - target)
        r_con = abs(float((A @ grad)[-1]) - beta)
        value = min(r_tan, r_con)
        verdict = Verdict.PASS if value <= tol else Verdict.FAIL
        report.add(
            AuditCheck(
                name,
                verdict,
                value,
                tol,
                1,
                {"tangential": r_tan, "conormal": r_con, "point": point.tolist()},
            )
        )
    logger.info(f"Viscosity audit: {report.verdict.value}")
    return report


# ==============================================================================
# Non-degeneracy and density
# ==============================================================================


def positivity_density(u: ScalarField, x0: Sequence[float], r: float) -> float:
    """|B_r^+(x0) cap {u > tau}| / |B_r^+(x0)|, interface-aware in d = 2."""
    grid = u.grid
    region = Region.half_ball(grid, x0, r)
    total = region.measure()
    if total == 0.0:
        return math.nan
    if grid.dim == 2:
        phi = np.asarray(signed_extension(u).values)
        phi = np.where(phi > u.tau(), phi, np.minimum(phi, 0.0))
        frac = triangle_fractions(grid, phi).mean(axis=1)
        positive = float(np.sum(region.cells.ravel() * frac) * grid.cell_volume)
    else:
        mass = lumped_mass(grid, region.cells)
        positive = float(np.sum(mass[u.positive()]))
    return positive / total


def nondegeneracy_audit(
    u: ScalarField,
    c: CoeffField,
    fb: FreeBoundary,
    radii: Sequence[float],
    points: Optional[Sequence[Sequence[float]]] = None,
    fail_ratio: float = 0.05,
    density_floor: float = 0.0,
) -> List[AuditCheck]:
    """
    sup_{B_r^+} u / r and the positivity density at FB points over radii.

    FAIL when sup/r decays along the radii to below fail_ratio times its value
    at the largest radius. INCONCLUSIVE when beta + a sqrt(Q) <= 0 somewhere
    on the wall or there is no free-boundary point.
    """
    grid = u.grid
    ordered = sorted((float(r) for r in radii), reverse=True)
    if ordered and ordered[-1] < 2.0 * grid.h * (1.0 - 1e-12):
        raise ResolutionError(f"Radius {ordered[-1]} below the floor 2h={2 * grid.h}")
    gap = float(np.min(c.beta_gap(grid)))
    targets = [np.asarray(p, dtype=float) for p in (points or fb.contact_points)]
    if gap <= 0.0:
        return [
            AuditCheck(
                "nondegeneracy",
                Verdict.INCONCLUSIVE,
                gap,
                0.0,
                details={"reason": "beta + a sqrt(Q) <= 0 on the wall"},
            )
        ]
    if not targets:
        return [AuditCheck("nondegeneracy", Verdict.INCONCLUSIVE, math.nan, 0.0)]

    values = np.asarray(u.values)
    checks = []
    for k, x0 in enumerate(targets):
        ratios, densities = [], []
        for r in ordered:
            near = ball_node_mask(grid, x0, r, strict=False)
            ratios.append(float(values[near].max(initial=0.0)) / r)
            densities.append(positivity_density(u, x0, r))
        decaying = all(b <= a for a, b in zip(ratios[:-1], ratios[1:]))
        collapsed = ratios[-1] <= fail_ratio * max(ratios[0], 1e-300)
        failed = (decaying and collapsed) or ratios[-1] == 0.0
        verdict = Verdict.FAIL if failed else Verdict.PASS
        checks.append(
            AuditCheck(
                f"nondegeneracy[{k}]",
                verdict,
                min(ratios),
                fail_ratio,
                len(ordered),
                {"radii": ordered, "sup_over_r": ratios, "point": x0.tolist()},
            )
        )
        eps0 = float(np.nanmin(densities))
        checks.append(
            AuditCheck(
                f"density[{k}]",
                Verdict.PASS if eps0 > density_floor else Verdict.FAIL,
                eps0,
                density_floor,
                len(ordered),
                {"radii": ordered, "density": densities, "point": x0.tolist()},
            )
        )
    return checks


# ==============================================================================
# Flatness and classification
# ==============================================================================


@dataclass(frozen=True)
class Flatness:
    eps: float
    nu: Tuple[float, ...]
    per_direction: Dict[Tuple[float, ...], float]

    @property
    def inconclusive(self) -> bool:
        return not self.eps <= 1.0


def tangential_directions(dim: int, count: int = 16) -> List[np.ndarray]:
    """Unit vectors orthogonal to e_d: +-e1 in d = 2, an angular grid in d = 3."""
    if dim == 2:
        return [np.array([1.0, 0.0]), np.array([-1.0, 0.0])]
    angles = 2.0 * math.pi * np.arange(count) / count
    return [np.array([math.cos(a), math.sin(a), 0.0]) for a in angles]


def sandwich_eps(v: np.ndarray, x: np.ndarray, p: JParams, nu: np.ndarray) -> float:
    """Smallest eps with h(x - eps nu) <= v <= h(x + eps nu) at the samples."""
    s = p.s
    along = x @ nu
    affine = p.m * x[..., -1]
    lower = along + (affine - v) / s
    upper = np.where(v > 0.0, (v - affine) / s - along, 0.0)
    return float(max(0.0, lower.max(initial=0.0), upper.max(initial=0.0)))


def flatness(
    u: ScalarField,
    x0: Sequence[float],
    r: float,
    p: JParams,
    c: Optional[CoeffField] = None,
    directions: Optional[Sequence[np.ndarray]] = None,
) -> Flatness:
    """
    Flatness of the blow-up u_{x0,r} against h_{q,m,nu} on B_1^+.

    With c given, the blow-up is taken in the frame of A(x0).

    Raises:
        ResolutionError: r < 8h
    """
    if r < 8.0 * u.grid.h * (1.0 - 1e-12):
        raise ResolutionError(f"Flatness radius {r} below the floor 8h={8 * u.grid.h}")
    p.require_admissible()
    v = blowup(u, x0, r, tilde=c is not None, coeffs=c)
    coords = v.grid.coords()
    inside = np.linalg.norm(coords, axis=-1) <= 1.0 + 1e-12
    x = coords[inside]
    vals = np.asarray(v.values)[inside]
    per = {}
    for nu in directions or tangential_directions(u.grid.dim):
        per[tuple(float(t) for t in nu)] = sandwich_eps(vals, x, p, np.asarray(nu))
    best = min(per, key=lambda k: per[k])
    result = Flatness(per[best], best, per)
    if result.inconclusive:
        logger.warning(f"Flatness at {list(x0)}, r={r:.4g}: no direction with eps <= 1")
    return result


def half_circle_trace(
    u: ScalarField,
    x0: Sequence[float],
    r: float,
    c: Optional[CoeffField] = None,
    samples: int = TRACE_SAMPLES,
) -> Tuple[np.ndarray, np.ndarray]:
    """theta and u(T(r(cos, sin)))/r on the unit half circle."""
    theta = np.linspace(0.0, math.pi, samples)
    if c is not None:
        T = FrameTransform.from_coefficients(c, x0)
    else:
        T = FrameTransform.from_matrix(x0, np.eye(u.grid.dim))
    unit = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return theta, sample_field(u, T.apply(r * unit)) / r


@dataclass
class PointClassification:
    label: PointLabel
    x0: List[float]
    q: float
    m: float
    family: Optional[Homog2DSolution]
    flatness: List[float]
    radii: List[float]
    reason: str = ""

    def as_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label.value,
            "x0": self.x0,
            "q": self.q,
            "m": self.m,
            "family": self.family.as_dict() if self.family else None,
            "flatness": self.flatness,
            "radii": self.radii,
            "reason": self.reason,
        }


def classify_point(
    u: ScalarField,
    c: CoeffField,
    x0: Sequence[float],
    radii: Sequence[float],
    tol: float = 5e-2,
    eps_slack: float = 1e-2,
) -> PointClassification:
    """
    REG when the smallest-radius trace is a half-plane profile and the
    flatness does not grow as r decreases; INCONCLUSIVE otherwise. SING is
    never asserted in d = 2.
    """
    point = [float(v) for v in x0]
    if u.grid.dim != 2:
        raise ConfigurationError("classify_point is available in d = 2 only")
    if not is_free_boundary_point(u, point):
        raise DomainError(f"x0={point} is not a free-boundary point of u")
    p = JParams.frozen(c, point)
    p.require_admissible()
    ordered = sorted((float(r) for r in radii), reverse=True)
    eps = [flatness(u, point, r, p, c=c).eps for r in ordered]
    theta, trace = half_circle_trace(u, point, ordered[-1], c=c)
    family = classify_2d(trace, p.q, p.m, tol=tol, theta=theta)

    non_increasing = all(b <= a + eps_slack for a, b in zip(eps[:-1], eps[1:]))
    if family.family is Family.HALF_PLANE and non_increasing:
        label, reason = PointLabel.REG, "half-plane blow-up"
    else:
        label = PointLabel.INCONCLUSIVE
        reason = (
            f"trace family {family.family.value}"
            if family.family is not Family.HALF_PLANE
            else "flatness grows as r decreases"
        )
    logger.info(f"Point {point}: {label.value} ({reason})")
    return PointClassification(label, point, p.q, p.m, family, eps, ordered, reason)


def label_contact_points(
    u: ScalarField, c: CoeffField, fb: FreeBoundary, radii: Sequence[float]
) -> List[PointClassification]:
    """Reg/Sing labelling of every contact point; failures become INCONCLUSIVE."""
    labels = []
    for point in fb.contact_points:
        try:
            labels.append(classify_point(u, c, point, radii))
        except (DomainError, ConfigurationError) as e:
            logger.warning(f"Could not classify {point.tolist()}: {e}")
            q, m = c.frozen_q_m(point)
            labels.append(
                PointClassification(
                    PointLabel.INCONCLUSIVE,
                    point.tolist(),
                    q,
                    m,
                    None,
                    [],
                    list(radii),
                    str(e),
                )
            )
    return labels


def hausdorff_positivity_distance(
    u1: ScalarField,
    u2: ScalarField,
    region: Optional[Union[Region, np.ndarray]] = None,
) -> float:
    """
    Hausdorff distance between {u1 >= tau} and {u2 >= tau} within a region.

    One empty set and one nonempty set give the region diameter.
    """
    grid = u1.grid
    if u2.grid != grid:
        raise ConfigurationError("Hausdorff distance needs fields on a common grid")
    if region is None:
        mask = np.ones(grid.shape, dtype=bool)
    elif isinstance(region, Region):
        mask = region.node_mask()
    else:
        mask = np.asarray(region, dtype=bool)
    S1 = (np.asarray(u1.values) >= u1.tau()) & mask
    S2 = (np.asarray(u2.values) >= u2.tau()) & mask
    if not S1.any() and not S2.any():
        return 0.0
    if not S1.any() or not S2.any():
        coords = grid.coords()[mask]
        return float(np.linalg.norm(coords.max(axis=0) - coords.min(axis=0)))
    to_S2 = distance_transform_edt(~S2) * grid.h
    to_S1 = distance_transform_edt(~S1) * grid.h
    return float(max(to_S2[S1].max(), to_S1[S2].max()))


__all__ = [
    "Verdict",
    "PointLabel",
    "FreeBoundary",
    "marching_squares",
    "is_simple",
    "fit_circle_curvature",
    "polyline_curvature",
    "wetting_intervals",
    "tls_direction",
    "measure_contact_angle",
    "extract_fb",
    "AuditCheck",
    "AuditReport",
    "default_tolerance",
    "gradient_fit",
    "viscosity_audit",
    "positivity_density",
    "nondegeneracy_audit",
    "Flatness",
    "tangential_directions",
    "sandwich_eps",
    "flatness",
    "half_circle_trace",
    "PointClassification",
    "classify_point",
    "label_contact_points",
    "hausdorff_positivity_distance",
]
