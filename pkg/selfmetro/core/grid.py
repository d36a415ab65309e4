"""Uniform 1D grid, trap potential and the single-particle Hamiltonian."""

import logging
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError, GridMismatchError, NumericalError

logger = logging.getLogger(__name__)

RealFunction = npt.NDArray[np.float64]
ComplexFunction = npt.NDArray[np.complex128]

MIN_POINTS = 16
PARITY_TOLERANCE = 0.05
SIGN_THRESHOLD = 1e-6


class Grid(BaseModel):
    """Uniform mesh on [-half_width, half_width], symmetric about x=0."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    half_width: float = Field(..., gt=0.0, description="Half extent of the box")
    n_points: int = Field(..., ge=MIN_POINTS, description="Number of nodes")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @property
    def nodes(self) -> RealFunction:
        return _nodes(self.half_width, self.n_points)

    @property
    def center_index(self) -> int:
        """Index of the x=0 node (odd grids) or of the first node right of 0."""
        return self.n_points // 2


@lru_cache(maxsize=32)
def _nodes(half_width: float, n_points: int) -> RealFunction:
    # Integer offsets from the center keep mirrored nodes exactly antisymmetric.
    spacing = 2.0 * half_width / (n_points - 1)
    x = spacing * (np.arange(n_points, dtype=np.float64) - (n_points - 1) / 2.0)
    x.setflags(write=False)
    return x


class PotentialParams(BaseModel):
    """Trap V(x) = p1 x^2/2 + p2 exp(-x^2/(2 p3^2)) + p4 x."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    p1: float = Field(default=0.5, gt=0.0, description="Harmonic curvature")
    p2: float = Field(default=50.0, ge=0.0, description="Barrier height")
    p3: float = Field(default=1.0, gt=0.0, description="Barrier width")
    p4: float = Field(default=0.1, description="Tilt slope, the estimated parameter")

    def with_tilt(self, p4: float) -> "PotentialParams":
        return self.model_copy(update={"p4": float(p4)})


def build_grid(half_width: float, n_points: int) -> Grid:
    """Build a grid, rejecting fewer than 16 points or a non-positive width."""
    try:
        return Grid(half_width=half_width, n_points=n_points)
    except ValidationError as e:
        raise ConfigError(
            f"Invalid grid (half_width={half_width}, n_points={n_points}): {e}"
        ) from e


def eval_potential(params: PotentialParams, grid: Grid) -> RealFunction:
    x = grid.nodes
    v = (
        0.5 * params.p1 * x * x
        + params.p2 * np.exp(-(x * x) / (2.0 * params.p3 * params.p3))
        + params.p4 * x
    )
    return np.asarray(v, dtype=np.float64)


def check_on_grid(grid: Grid, values: np.ndarray, name: str = "function") -> None:
    """Raise ``GridMismatchError`` unless the last axis matches the grid."""
    if values.ndim == 0 or values.shape[-1] != grid.n_points:
        raise GridMismatchError(
            f"{name} has {values.shape[-1] if values.ndim else 0} samples, "
            f"grid has {grid.n_points}"
        )


def inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> complex:
    """Discrete inner product <f|g> = dx * sum(conj(f) * g)."""
    check_on_grid(grid, f, "bra")
    check_on_grid(grid, g, "ket")
    return complex(grid.spacing * np.vdot(f, g))


def norm(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(max(inner(grid, f, f).real, 0.0)))


def gram_matrix(grid: Grid, orbitals: np.ndarray) -> np.ndarray:
    """Overlap matrix S_ij = <phi_i|phi_j> of an (M, n) orbital array."""
    check_on_grid(grid, orbitals, "orbitals")
    return grid.spacing * (orbitals.conj() @ orbitals.T)


def orthonormality_defect(grid: Grid, orbitals: np.ndarray) -> float:
    overlap = gram_matrix(grid, orbitals)
    return float(np.max(np.abs(overlap - np.eye(overlap.shape[0]))))


def apply_h(grid: Grid, potential: RealFunction, psi: np.ndarray) -> np.ndarray:
    """
    Apply h = -1/2 d^2/dx^2 + V(x) along the last axis of ``psi``.

    Second-order central differences; the wavefunction vanishes just outside
    the first and last node (hard walls).
    """
    check_on_grid(grid, potential, "potential")
    check_on_grid(grid, psi, "wavefunction")
    pad = [(0, 0)] * (psi.ndim - 1) + [(1, 1)]
    padded = np.pad(psi, pad)
    laplacian = padded[..., 2:] - 2.0 * psi + padded[..., :-2]
    return -0.5 * laplacian / grid.spacing**2 + potential * psi


def _is_mirror_symmetric(potential: RealFunction) -> bool:
    return bool(np.array_equal(potential, potential[::-1]))


def _solve_tridiagonal(
    diagonal: np.ndarray, offdiagonal: np.ndarray, k: int
) -> Tuple[np.ndarray, np.ndarray]:
    k = min(k, diagonal.size)
    try:
        return scipy.linalg.eigh_tridiagonal(
            diagonal, offdiagonal, select="i", select_range=(0, k - 1)
        )
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"Tridiagonal eigensolver failed: {e}") from e


def _mirror_sector_states(
    grid: Grid, potential: RealFunction, k: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Diagonalize the even and odd parity blocks separately.

    Near-degenerate tunneling doublets are resolved exactly this way; the
    sectors are interleaved even, odd, even, ... which is the node ordering
    of a 1D spectrum.
    """
    n = grid.n_points
    off = -0.5 / grid.spacing**2
    diag = 1.0 / grid.spacing**2 + potential
    c = n // 2
    root2 = np.sqrt(2.0)

    if n % 2 == 1:
        even_d = diag[c:].copy()
        even_e = np.full(even_d.size - 1, off)
        even_e[0] = root2 * off
        odd_d = diag[c + 1 :].copy()
        odd_e = np.full(odd_d.size - 1, off)
    else:
        even_d = diag[c:].copy()
        even_d[0] += off
        even_e = np.full(even_d.size - 1, off)
        odd_d = diag[c:].copy()
        odd_d[0] -= off
        odd_e = np.full(odd_d.size - 1, off)

    n_even = (k + 1) // 2
    n_odd = k // 2
    e_vals, e_vecs = _solve_tridiagonal(even_d, even_e, max(n_even, 1))
    o_vals, o_vecs = _solve_tridiagonal(odd_d, odd_e, max(n_odd, 1))

    def unfold_even(v: np.ndarray) -> np.ndarray:
        full = np.zeros(n)
        if n % 2 == 1:
            full[c] = v[0]
            full[c + 1 :] = v[1:] / root2
            full[:c] = v[1:][::-1] / root2
        else:
            full[c:] = v / root2
            full[:c] = v[::-1] / root2
        return full

    def unfold_odd(v: np.ndarray) -> np.ndarray:
        full = np.zeros(n)
        if n % 2 == 1:
            full[c + 1 :] = v / root2
            full[:c] = -v[::-1] / root2
        else:
            full[c:] = v / root2
            full[:c] = -v[::-1] / root2
        return full

    energies: List[float] = []
    vectors: List[np.ndarray] = []
    for i in range(k):
        idx, sector = divmod(i, 2)
        if sector == 0:
            energies.append(float(e_vals[idx]))
            vectors.append(unfold_even(e_vecs[:, idx]))
        else:
            energies.append(float(o_vals[idx]))
            vectors.append(unfold_odd(o_vecs[:, idx]))
    return np.array(energies), np.array(vectors).T


def _fix_sign(psi: RealFunction) -> RealFunction:
    significant = np.flatnonzero(np.abs(psi) > SIGN_THRESHOLD)
    if significant.size and psi[significant[0]] < 0:
        return -psi
    return psi


def lowest_eigenstates(
    grid: Grid, potential: RealFunction, k: int
) -> List[Tuple[float, RealFunction]]:
    """
    Return the ``k`` lowest eigenpairs of the discretized h.

    Eigenfunctions are orthonormal under the dx-weighted inner product and
    signed so the leftmost value above 1e-6 in magnitude is positive.
    """
    check_on_grid(grid, potential, "potential")
    if k < 1 or k > grid.n_points:
        raise ConfigError(f"Requested {k} eigenstates on a {grid.n_points}-point grid")

    if _is_mirror_symmetric(potential):
        energies, vectors = _mirror_sector_states(grid, potential, k)
    else:
        diagonal = 1.0 / grid.spacing**2 + potential
        offdiagonal = np.full(grid.n_points - 1, -0.5 / grid.spacing**2)
        energies, vectors = _solve_tridiagonal(diagonal, offdiagonal, k)

    if not np.all(np.isfinite(energies)):
        raise NumericalError("Eigensolver returned non-finite energies")

    scale = 1.0 / np.sqrt(grid.spacing)
    states = [
        (float(energies[i]), _fix_sign(np.asarray(vectors[:, i] * scale)))
        for i in range(k)
    ]
    logger.debug(f"Lowest {k} energies: {[round(e, 8) for e, _ in states]}")
    return states


def parity_expectation(grid: Grid, f: np.ndarray) -> float:
    """<f|Pi|f> with Pi the reflection x -> -x."""
    return inner(grid, f, f[::-1]).real


def side_weights(grid: Grid) -> Tuple[RealFunction, RealFunction]:
    """
    Quadrature weights for x<0 and x>0, consistent with ``inner``.

    The x=0 node of an odd grid contributes half its weight to each side.
    """
    n = grid.n_points
    left = np.zeros(n)
    right = np.zeros(n)
    c = n // 2
    left[:c] = grid.spacing
    if n % 2 == 1:
        left[c] = 0.5 * grid.spacing
        right[c] = 0.5 * grid.spacing
        right[c + 1 :] = grid.spacing
    else:
        right[c:] = grid.spacing
    return left, right


def localized_orbitals(
    grid: Grid, phi0: RealFunction, phi1: RealFunction
) -> Tuple[RealFunction, RealFunction]:
    """Combine a parity doublet into (phi_L, phi_R) = (phi0 +- phi1)/sqrt(2)."""
    even = parity_expectation(grid, phi0)
    odd = parity_expectation(grid, phi1)
    if abs(even - 1.0) >= PARITY_TOLERANCE or abs(odd + 1.0) >= PARITY_TOLERANCE:
        raise NumericalError(
            f"Parity check failed: <phi0|Pi|phi0>={even:.4f}, <phi1|Pi|phi1>={odd:.4f}"
        )

    plus = (phi0 + phi1) / np.sqrt(2.0)
    minus = (phi0 - phi1) / np.sqrt(2.0)
    left_w, _ = side_weights(grid)
    if float(np.sum(left_w * np.abs(plus) ** 2)) >= float(
        np.sum(left_w * np.abs(minus) ** 2)
    ):
        return plus, minus
    return minus, plus


def single_particle_energy(
    grid: Grid, potential: RealFunction, phi: np.ndarray
) -> float:
    """h_i = <phi|h|phi> for a normalized orbital."""
    defect = abs(inner(grid, phi, phi).real - 1.0)
    if defect > 1e-6:
        raise ConfigError(f"Orbital is not normalized (norm defect {defect:.3e})")
    value = inner(grid, phi, apply_h(grid, potential, phi))
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise NumericalError(f"Energy has imaginary part {value.imag:.3e}")
    return value.real


def dipole_moment(grid: Grid, phi: np.ndarray) -> float:
    """<phi|x|phi>."""
    check_on_grid(grid, phi, "orbital")
    return float(grid.spacing * np.sum(grid.nodes * np.abs(phi) ** 2))


def stack_orbitals(grid: Grid, orbitals: Sequence[np.ndarray]) -> np.ndarray:
    """Stack orbitals into a complex (M, n) array after checking the grid."""
    array = np.asarray(np.stack([np.asarray(o) for o in orbitals]), dtype=np.complex128)
    check_on_grid(grid, array, "orbitals")
    return array
