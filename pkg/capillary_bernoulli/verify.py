# capillary_bernoulli/verify.py
"""
Invariant suite behind the `verify` subcommand.

Each invariant is a registered function taking `quick` (coarser grids, fewer
samples) and returning an Outcome. run_verify executes all of them, records
failures and exceptions without stopping, and writes verify.json.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .coefficients import constant_coefficients
from .energy import JParams, energy_J, weiss
from .exceptions import ConfigurationError
from .exact import (
    Family,
    HalfPlaneParams,
    classify_2d,
    contact_angle,
    degenerate_counterexample_gap,
    half_plane_field,
    sample_family,
)
from .fbdiag import Verdict, extract_fb, viscosity_audit
from .fields import FrameTransform, ScalarField, matrix_sqrt, transform_field
from .grid import Region, build_grid
from .robin import RobinProblem, hardy_profile, robin_min_d2, subsolution_eval
from .solver import SolveConfig, make_dirichlet, minimize_F, schauder_compare
from .storage import save_json
from .varstab import (
    ETA_FAMILIES,
    expansion_check,
    first_variation_J,
    make_flow,
    taylor_flow_check,
    wedge_variation_check,
)

# Setup logging
logger = logging.getLogger(__name__)


@dataclass
class Outcome:
    passed: bool
    value: float
    tolerance: float
    details: Dict[str, Any] = field(default_factory=dict)


@dataclass
class InvariantResult:
    name: str
    module: str
    passed: bool
    value: float
    tolerance: float
    seconds: float
    details: Dict[str, Any] = field(default_factory=dict)
    error: str = ""

    def as_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "module": self.module,
            "passed": self.passed,
            "value": self.value,
            "tolerance": self.tolerance,
            "seconds": self.seconds,
            "details": self.details,
            "error": self.error,
        }


Invariant = Callable[[bool], Outcome]
INVARIANTS: Dict[str, "RegisteredInvariant"] = {}


@dataclass(frozen=True)
class RegisteredInvariant:
    name: str
    module: str
    fn: Invariant


def register_invariant(name: str, module: str) -> Callable[[Invariant], Invariant]:
    def decorator(fn: Invariant) -> Invariant:
        INVARIANTS[name] = RegisteredInvariant(name, module, fn)
        return fn

    return decorator


def _half_plane_setup(q: float, m: float, h: float) -> ScalarField:
    grid = build_grid(2, [(-1.0, 1.0), (0.0, 1.0)], h)
    return half_plane_field(grid, HalfPlaneParams(q, m))


# ==============================================================================
# field-core
# ==============================================================================


@register_invariant("matrix_sqrt_roundtrip", "field-core")
def _matrix_sqrt(quick: bool) -> Outcome:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100 if quick else 1000):
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        A = (Q * rng.uniform(0.25, 4.0, 3)) @ Q.T
        A = 0.5 * (A + A.T)
        M = matrix_sqrt(A)
        worst = max(worst, float(np.linalg.norm(M @ M - A) / np.linalg.norm(A)))
    return Outcome(worst <= 1e-12, worst, 1e-12)


@register_invariant("identity_transform", "field-core")
def _identity_transform(quick: bool) -> Outcome:
    grid = build_grid(2, [(-1.0, 1.0), (0.0, 1.0)], 1 / 16)
    u = ScalarField.from_function(grid, lambda x: x[..., 0] ** 2 + x[..., 1] ** 2)
    T = FrameTransform.from_matrix(np.zeros(2), np.eye(2))
    error = float(np.abs(transform_field(u, T).values - u.values).max())
    return Outcome(error <= 1e-14, error, 1e-14)


# ==============================================================================
# energy
# ==============================================================================


@register_invariant("weiss_constant_on_half_plane", "energy")
def _weiss_constant(quick: bool) -> Outcome:
    h = 1 / 64 if quick else 1 / 128
    u = _half_plane_setup(1.0, -0.4, h)
    radii = [r for r in (0.4, 0.2, 0.1, 0.05, 0.025) if r >= 8 * h]
    report = weiss(u, (0.0, 0.0), radii, c=constant_coefficients(Q=1.0, beta=-0.4))
    scale = max(abs(w) for w in report.W)
    spread = report.spread() / scale
    return Outcome(spread <= 0.05, spread, 0.05, report.summary())


@register_invariant("energy_additivity", "energy")
def _additivity(quick: bool) -> Outcome:
    u = _half_plane_setup(1.0, 0.3, 1 / 32)
    p = JParams(1.0, 0.3)
    cells = np.zeros(u.grid.cell_shape, dtype=bool)
    cells[: cells.shape[0] // 2] = True
    left = Region.from_cell_mask(u.grid, cells)
    right = Region.from_cell_mask(u.grid, ~cells)
    whole = energy_J(u, p, left | right).total
    parts = energy_J(u, p, left).total + energy_J(u, p, right).total
    error = abs(whole - parts) / max(1.0, abs(whole))
    return Outcome(error <= 1e-12, error, 1e-12)


@register_invariant("bulk_monotone_in_Q", "energy")
def _bulk_monotone(quick: bool) -> Outcome:
    u = _half_plane_setup(1.0, 0.0, 1 / 32)
    bulks = [energy_J(u, JParams(q, 0.0)).bulk for q in (0.5, 1.0, 1.5, 2.0)]
    steps = np.diff(bulks)
    return Outcome(bool(np.all(steps >= 0.0)), float(steps.min()), 0.0)


# ==============================================================================
# exact
# ==============================================================================


@register_invariant("half_plane_gradient", "exact")
def _half_plane_gradient(quick: bool) -> Outcome:
    worst = 0.0
    for m in np.linspace(-0.9, 0.9, 19):
        p = HalfPlaneParams(1.0, float(m))
        g = p.gradient()
        worst = max(worst, abs(float(g @ g) - 1.0), abs(float(g[-1]) - m))
    return Outcome(worst <= 1e-14, worst, 1e-14)


@register_invariant("classify_family_roundtrip", "exact")
def _classify_roundtrip(quick: bool) -> Outcome:
    rng = np.random.default_rng(1)
    theta = np.linspace(0.0, math.pi, 181)
    mismatches = 0
    trials = 100 if quick else 1000
    for _ in range(trials):
        q = float(rng.uniform(0.5, 2.0))
        m = float(rng.uniform(-0.95, 0.95)) * q
        choices = [Family.HALF_PLANE, Family.DEGENERATE]
        if m < 0:
            choices.append(Family.WEDGE)
        family = choices[int(rng.integers(len(choices)))]
        w = sample_family(family, q, m, theta, C=float(rng.uniform(q, 2 * q)))
        if classify_2d(w, q, m, tol=1e-8, theta=theta).family is not family:
            mismatches += 1
    return Outcome(mismatches == 0, float(mismatches), 0.0, {"trials": trials})


@register_invariant("contact_angle_monotone_in_beta", "exact")
def _angle_monotone(quick: bool) -> Outcome:
    betas = np.linspace(-0.99, 0.99, 199)
    angles = np.array([contact_angle(1.0, float(b), 1.0) for b in betas])
    steps = np.diff(angles)
    return Outcome(bool(np.all(steps > 0.0)), float(steps.min()), 0.0)


@register_invariant("wedge_curvature", "exact")
def _wedge_curvature(quick: bool) -> Outcome:
    h = 1 / 128 if quick else 1 / 512
    tolerance = 0.05 if quick else 0.02
    check = wedge_variation_check(1.0, -0.6, h=h)
    return Outcome(check.relative_error <= tolerance, check.relative_error, tolerance)


@register_invariant("degenerate_gap_negative", "exact")
def _degenerate_gap(quick: bool) -> Outcome:
    h = 1 / 32 if quick else 1 / 64
    gap = degenerate_counterexample_gap(1.0, 1.0, 0.0, -1.0, h=h)
    passed = gap.gap < 0.0 and gap.phi_min_interior > 0.0
    return Outcome(passed, gap.gap, 0.0, gap.as_dict())


# ==============================================================================
# solver
# ==============================================================================


@register_invariant("solver_determinism", "solver")
def _determinism(quick: bool) -> Outcome:
    grid = build_grid(2, [1.0, 0.5], 1 / 16)
    cfg = SolveConfig(
        grid=grid,
        coeffs=constant_coefficients(),
        dirichlet=make_dirichlet(2, "half_plane", {"q": 1.0, "m": 0.0}),
        max_inner=200,
        restarts=2,
        seed=7,
    )
    first, second = minimize_F(cfg), minimize_F(cfg)
    identical = bool(np.array_equal(first.u.values, second.u.values))
    return Outcome(identical, 0.0 if identical else 1.0, 0.0)


@register_invariant("schauder_conformal_rate", "solver")
def _schauder(quick: bool) -> Outcome:
    def conformal(eps: float) -> Any:
        return constant_coefficients(A=(1.0 + eps) * np.eye(2))

    report = schauder_compare(
        conformal,
        constant_coefficients(),
        r=0.25,
        epsilons=(0.2, 0.1, 0.05, 0.025),
        h=1 / 32 if quick else 1 / 64,
        source=1.0,
    )
    sigma = report.sigma if report.sigma is not None else math.nan
    return Outcome(abs(sigma - 1.0) <= 0.1, sigma, 0.1, report.as_dict())


# ==============================================================================
# fbdiag
# ==============================================================================


@register_invariant("half_plane_interface_distance", "fbdiag")
def _interface_distance(quick: bool) -> Outcome:
    h = 1 / 64
    worst = 0.0
    for m in (-0.6, 0.0, 0.6):
        p = HalfPlaneParams(1.0, m)
        fb = extract_fb(_half_plane_setup(1.0, m, h))
        distance = np.abs(fb.vertices() @ p.gradient()) / p.q
        worst = max(worst, float(distance.max()) if distance.size else math.inf)
    return Outcome(worst <= h, worst, h)


@register_invariant("catalogue_viscosity_audit", "fbdiag")
def _viscosity(quick: bool) -> Outcome:
    h = 1 / 64
    verdicts = {}
    for m in (-0.6, 0.0, 0.6):
        u = _half_plane_setup(1.0, m, h)
        c = constant_coefficients(Q=1.0, beta=m)
        tolerance = 10 * h * (1.0 + abs(m))
        report = viscosity_audit(u, c, extract_fb(u), tolerance=tolerance)
        verdicts[str(m)] = report.verdict.value
    passed = all(v == Verdict.PASS.value for v in verdicts.values())
    return Outcome(passed, 0.0, 10 * h, verdicts)


# ==============================================================================
# varstab
# ==============================================================================


def _variation_families() -> List[str]:
    return [name for name in ETA_FAMILIES if name != "constant"]


@register_invariant("shape_derivative_expansion", "varstab")
def _expansion(quick: bool) -> Outcome:
    slopes = {}
    passed = True
    for name in _variation_families():
        report = expansion_check(make_flow(name, (0.0, 0.0), radius=0.4), m=-0.4)
        slopes[name] = report.slopes()
        passed &= report.passed(0.9)
    return Outcome(passed, 0.9, 0.9, slopes)


@register_invariant("taylor_along_flow", "varstab")
def _taylor(quick: bool) -> Outcome:
    u = _half_plane_setup(1.0, 0.0, 1 / 16 if quick else 1 / 32)
    slopes = {}
    passed = True
    families = ["tangential", "normal"] if quick else _variation_families()
    for name in families:
        report = taylor_flow_check(u, make_flow(name, (0.0, 0.0), radius=0.4))
        slopes[name] = [report.slope1, report.slope2]
        passed &= report.passed(1.9, 2.5)
    return Outcome(passed, 1.9, 1.9, slopes)


@register_invariant("first_variation_routes", "varstab")
def _first_variation(quick: bool) -> Outcome:
    """Routes agree after the wall correction, relative to the integrand size."""
    h = 1 / 32 if quick else 1 / 64
    u = _half_plane_setup(1.0, -0.4, h)
    p = JParams(1.0, -0.4)
    fb = extract_fb(u)
    worst = 0.0
    details = {}
    for name in _variation_families():
        fv = first_variation_J(u, make_flow(name, (0.0, 0.0), radius=0.4), p, fb)
        worst = max(worst, fv.relative_difference)
        details[name] = fv.as_dict()
    return Outcome(worst <= h, worst, h, details)


@register_invariant("robin_neumann_oracle", "varstab")
def _robin_neumann(quick: bool) -> Outcome:
    worst = 0.0
    for length in (0.5 * math.pi, math.pi):
        worst = max(worst, abs(robin_min_d2(RobinProblem(0.0, length)).Lambda))
    return Outcome(worst <= 1e-6, worst, 1e-6)


@register_invariant("robin_symmetric_oracle", "varstab")
def _robin_symmetric(quick: bool) -> Outcome:
    length, H = 0.5 * math.pi, 1.0
    k = brentq(lambda k: k * math.tanh(0.5 * k * length) - H, 1e-6, 50.0, xtol=1e-15)
    sol = robin_min_d2(RobinProblem(0.0, length, H, H))
    error = abs(sol.Lambda - k * k)
    return Outcome(error <= 1e-6, error, 1e-6, sol.as_dict())


@register_invariant("robin_quotient_consistency", "varstab")
def _robin_consistency(quick: bool) -> Outcome:
    worst = 0.0
    for dom in (
        RobinProblem(0.0, math.pi, 0.5, 0.5),
        RobinProblem(0.25 * math.pi, 0.75 * math.pi, -0.5, 1.0),
    ):
        sol = robin_min_d2(dom)
        worst = max(worst, abs(sol.quotient + sol.Lambda))
    return Outcome(worst <= 1e-8, worst, 1e-8)


@register_invariant("hardy_profile_ratio", "varstab")
def _hardy(quick: bool) -> Outcome:
    worst = 0.0
    for beta, d in ((0.5, 3), (1.5, 4), (3.0, 5)):
        profile = hardy_profile(beta, d)
        worst = max(worst, abs(profile.rayleigh_ratio() - beta) / beta)
    return Outcome(worst <= 1e-6, worst, 1e-6)


@register_invariant("subsolution_quadratic", "varstab")
def _subsolution(quick: bool) -> Outcome:
    grid = build_grid(2, [1.0, 1.0], 1 / 32)
    u = ScalarField.from_function(
        grid, lambda x: np.maximum(x[..., 0] ** 2 - (x[..., 1] - 0.5) ** 2, 0.0)
    )
    worst = 0.0
    for d, expected in ((3, math.sqrt(8.0)), (4, math.sqrt(20.0))):
        result = subsolution_eval(u, d)
        worst = max(worst, float(np.abs(result.phi[result.valid] - expected).max()))
    return Outcome(worst <= 1e-8, worst, 1e-8)


# ==============================================================================
# Runner
# ==============================================================================


def run_invariant(entry: RegisteredInvariant, quick: bool) -> InvariantResult:
    start = time.perf_counter()
    try:
        outcome = entry.fn(quick)
        error = ""
    except Exception as e:  # noqa: BLE001
        logger.error(f"Invariant '{entry.name}' raised: {e}")
        outcome = Outcome(False, math.nan, math.nan)
        error = f"{type(e).__name__}: {e}"
    seconds = time.perf_counter() - start
    mark = "✓" if outcome.passed else "✗"
    logger.info(f"{mark} {entry.module}/{entry.name} ({seconds:.1f}s)")
    return InvariantResult(
        entry.name,
        entry.module,
        bool(outcome.passed),
        float(outcome.value),
        float(outcome.tolerance),
        seconds,
        outcome.details,
        error,
    )


def run_verify(
    out_dir: Path, quick: bool = False, only: Optional[Sequence[str]] = None
) -> Dict[str, Any]:
    """Run the invariant suite and write verify.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(only) if only else list(INVARIANTS)
    unknown = [n for n in names if n not in INVARIANTS]
    if unknown:
        raise ConfigurationError(f"Unknown invariants {unknown}", key="only")

    logger.info("=" * 60)
    logger.info(f"Invariant suite: {len(names)} checks (quick={quick})")
    logger.info("=" * 60)
    results = [run_invariant(INVARIANTS[n], quick) for n in names]
    failed = [r.name for r in results if not r.passed]
    report = {
        "passed": not failed,
        "quick": quick,
        "failed": failed,
        "seconds": sum(r.seconds for r in results),
        "invariants": [r.as_dict() for r in results],
    }
    save_json(out_dir / "verify.json", report)
    logger.info(f"Invariants: {len(results) - len(failed)}/{len(results)} passed")
    return report


__all__ = [
    "Outcome",
    "InvariantResult",
    "INVARIANTS",
    "register_invariant",
    "run_invariant",
    "run_verify",
]
