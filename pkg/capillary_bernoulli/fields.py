# capillary_bernoulli/fields.py
"""
Scalar fields on grids and the A^{1/2} change of coordinates.

The frame transform at a wall point x0 is T(x) = x0 + M R x with
M = A(x0)^{1/2} and R the Householder reflection sending e_d to
e_d^{x0} = M e_d / a(x0). With R in place the frame wall {x_d = 0} lands
exactly on the physical wall and the frame half-space on the physical one.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .coefficients import CoeffField
from .config import positivity_threshold
from .exceptions import DomainError, OutOfDomainError, ResolutionError
from .grid import Grid, reference_grid

# Setup logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalarField:
    """Nodal values of u on a grid; immutable after construction."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    nonneg: bool = True

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, copy=True)
        if values.shape != self.grid.shape:
            raise DomainError(
                f"Field shape {values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("Field values must be finite")
        if self.nonneg and values.min(initial=0.0) < 0.0:
            raise DomainError(
                f"Field flagged nonnegative has minimum {values.min():.3e}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(
        cls,
        grid: Grid,
        fn: Callable[[np.ndarray], np.ndarray],
        nonneg: bool = True,
    ) -> "ScalarField":
        """Evaluate a closed-form sampler fn(points[..., d]) at every node."""
        return cls(grid, fn(grid.coords()), nonneg=nonneg)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max(initial=0.0))

    def tau(self) -> float:
        """Positivity threshold for this field."""
        return positivity_threshold(self.sup_norm())

    def positive(self) -> np.ndarray:
        """Boolean mask of nodes with u > tau."""
        return self.values > self.tau()

    def with_values(
        self, values: np.ndarray, nonneg: Optional[bool] = None
    ) -> "ScalarField":
        return ScalarField(self.grid, values, self.nonneg if nonneg is None else nonneg)


# ==============================================================================
# Matrix square root and frame transforms
# ==============================================================================


def sorted_eigh(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ascending eigen-decomposition with a deterministic eigenvector sign.

    Each eigenvector is flipped so that its first nonzero component is positive.
    Works on stacks (..., d, d).
    """
    w, V = np.linalg.eigh(matrix)
    scale = np.abs(V).max(axis=-2, keepdims=True)
    significant = np.abs(V) > 1e-12 * np.maximum(scale, 1e-300)
    first = np.argmax(significant, axis=-2)
    lead = np.take_along_axis(V, first[..., None, :], axis=-2)
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return w, V * sign


def matrix_sqrt(matrix: np.ndarray) -> np.ndarray:
    """
    Symmetric positive square root via eigendecomposition.

    Args:
        matrix: symmetric positive definite d x d matrix

    Returns:
        SPD M with M @ M equal to the input to ~1e-12 relative error

    Raises:
        DomainError: input not symmetric or not positive definite
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"Expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise DomainError("matrix_sqrt needs a symmetric matrix")
    w, V = sorted_eigh(A)
    if w[0] <= 0.0:
        raise DomainError(
            f"matrix_sqrt needs an SPD matrix, smallest eigenvalue {w[0]:.3e}"
        )
    M = (V * np.sqrt(w)) @ V.T
    return 0.5 * (M + M.T)


def householder_to(target: np.ndarray) -> np.ndarray:
    """Reflection R with R e_d = target (unit vector); identity if already aligned."""
    d = target.shape[0]
    e_d = np.zeros(d)
    e_d[-1] = 1.0
    v = e_d - target
    norm2 = float(v @ v)
    if norm2 < 1e-28:
        return np.eye(d)
    return np.eye(d) - 2.0 * np.outer(v, v) / norm2


@dataclass(frozen=True)
class FrameTransform:
    """T(x) = x0 + M R x with M = A(x0)^{1/2} and R e_d = e_d^{x0}."""

    x0: np.ndarray
    M: np.ndarray
    Minv: np.ndarray
    ed_x0: np.ndarray
    R: np.ndarray
    a0: float

    @classmethod
    def from_matrix(cls, x0: Sequence[float], A0: np.ndarray) -> "FrameTransform":
        x0_arr = np.asarray(x0, dtype=float)
        if abs(x0_arr[-1]) > 1e-12:
            raise DomainError(f"Frame anchor {x0_arr.tolist()} is not on the wall")
        M = matrix_sqrt(A0)
        column = M[:, -1]
        a0 = float(np.linalg.norm(column))
        ed_x0 = column / a0
        return cls(
            x0=x0_arr,
            M=M,
            Minv=np.linalg.inv(M),
            ed_x0=ed_x0,
            R=householder_to(ed_x0),
            a0=a0,
        )

    @classmethod
    def from_coefficients(cls, c: CoeffField, x0: Sequence[float]) -> "FrameTransform":
        return cls.from_matrix(x0, c.A(np.asarray(x0, dtype=float)))

    @property
    def dim(self) -> int:
        return int(self.x0.shape[0])

    @property
    def linear(self) -> np.ndarray:
        """Linear part M R."""
        return self.M @ self.R

    @property
    def jacobian(self) -> float:
        return float(abs(np.linalg.det(self.M)))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.x0 + np.asarray(points, dtype=float) @ self.linear.T

    def inverse(self, points: np.ndarray) -> np.ndarray:
        inv = self.R.T @ self.Minv
        return (np.asarray(points, dtype=float) - self.x0) @ inv.T


# ==============================================================================
# Resampling
# ==============================================================================


def sample_field(u: ScalarField, points: np.ndarray) -> np.ndarray:
    """
    Multilinear interpolation of u at arbitrary points (..., d).

    Points within 1e-12 (relative to the grid diameter) of the box are clipped
    onto it.

    Raises:
        OutOfDomainError: points outside the box, listing their indices
    """
    grid = u.grid
    pts = np.asarray(points, dtype=float)
    inside = grid.contains(pts)
    if not np.all(inside):
        offending = [tuple(int(i) for i in idx) for idx in np.argwhere(~inside)]
        raise OutOfDomainError(
            f"{len(offending)} sample points fall outside the grid", offending
        )
    clipped = np.clip(pts, grid.lower, grid.upper)
    interpolator = RegularGridInterpolator(
        tuple(grid.axes()),
        u.values,
        method="linear",
        bounds_error=False,
        fill_value=None,
    )
    flat = clipped.reshape(-1, grid.dim)
    return interpolator(flat).reshape(pts.shape[:-1])


def transform_field(
    u: ScalarField,
    T: FrameTransform,
    r: float = 1.0,
    target: Optional[Grid] = None,
) -> ScalarField:
    """
    Resample u in the frame of T: value(x) = u(T(r x)).

    Args:
        u: source field
        T: frame transform anchored at a wall point
        r: scale applied to target coordinates before the transform
        target: grid of frame coordinates (defaults to u's grid)

    Raises:
        OutOfDomainError: some T(r x) lies outside u's grid
    """
    target = target or u.grid
    points = T.apply(r * target.coords())
    values = sample_field(u, points)
    return ScalarField(target, values, nonneg=u.nonneg)


def blowup(
    u: ScalarField,
    x0: Sequence[float],
    r: float,
    target: Optional[Grid] = None,
    radius: float = 1.0,
    tilde: bool = False,
    coeffs: Optional[CoeffField] = None,
) -> ScalarField:
    """
    Rescaled field u_{x0,r}(x) = u(x0 + r x) / r on a reference half-ball grid.

    With tilde=True the frame transform at x0 is composed in:
    u(x0 + r M R x) / r.

    Raises:
        ResolutionError: r < 2h
        OutOfDomainError: the rescaled box leaves u's grid
    """
    h = u.grid.h
    if r < 2.0 * h * (1.0 - 1e-12):
        raise ResolutionError(f"Blow-up scale r={r} is below the floor 2h={2 * h}")
    if target is None:
        n = max(2, int(round(radius * r / h)))
        target = reference_grid(u.grid.dim, radius, radius / n)

    if tilde:
        if coeffs is None:
            raise DomainError("Tilde blow-up needs the coefficient field")
        T = FrameTransform.from_coefficients(coeffs, x0)
    else:
        T = FrameTransform.from_matrix(x0, np.eye(u.grid.dim))
    values = sample_field(u, T.apply(r * target.coords())) / r
    logger.debug(f"Blow-up at {list(x0)} with r={r:.4g} on grid {target.shape}")
    return ScalarField(target, values, nonneg=u.nonneg)


# ==============================================================================
# Signed extension
# ==============================================================================


def _shifted(values: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    """out[i] = values[i + offset], NaN where i + offset leaves the array."""
    out = np.full(values.shape, np.nan)
    src, dst = [], []
    for o, n in zip(offset, values.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = values[tuple(src)]
    return out


def signed_extension(u: ScalarField) -> ScalarField:
    """
    Extend a clipped field negatively across its zero set.

    Zero nodes next to the positivity set get the mean of the linear
    extrapolations u(z+e)*2 - u(z+2e) over directions e (axis and diagonal)
    with both z+e and z+2e positive, capped at 0. Other zero nodes keep 0.
    Exact for clipped affine fields.
    """
    tau = u.tau()
    vals = np.asarray(u.values, dtype=float)
    positive = vals > tau
    total = np.zeros(vals.shape)
    count = np.zeros(vals.shape)

    for offset in np.ndindex(*([3] * u.grid.dim)):
        e = [o - 1 for o in offset]
        if not any(e):
            continue
        one = _shifted(vals, e)
        two = _shifted(vals, [2 * k for k in e])
        usable = (~positive) & (one > tau) & (two > tau)
        usable &= np.isfinite(one) & np.isfinite(two)
        total[usable] += 2.0 * one[usable] - two[usable]
        count[usable] += 1.0

    out = vals.copy()
    extended = count > 0
    out[extended] = np.minimum(total[extended] / count[extended], 0.0)
    out[~positive & ~extended] = 0.0
    return ScalarField(u.grid, out, nonneg=False)


__all__ = [
    "ScalarField",
    "FrameTransform",
    "sorted_eigh",
    "matrix_sqrt",
    "householder_to",
    "sample_field",
    "transform_field",
    "blowup",
    "signed_extension",
]
