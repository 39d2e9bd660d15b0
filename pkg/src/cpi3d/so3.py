"""Real spherical harmonics, Wigner rotation matrices, and real-basis
Clebsch-Gordan coupling tensors for degrees l <= 2.

Conventions: real harmonics in the standard (Wikipedia) normalization with
integral of |Y|^2 over the sphere equal to 1; blocks ordered l = 0..lmax
with components m = -l..l, so the l=1 block of a unit vector (x, y, z) is
sqrt(3/4pi) * (y, z, x). Coupling tensors are built from exact complex
Clebsch-Gordan coefficients via the real-harmonic change of basis and have
orthonormal rows, so each degree-l3 slice intertwines the Wigner matrices:
D(l3) C = C (D(l1) x D(l2)).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import ValidationError

LMAX = 2

# permutation taking a cartesian (x, y, z) vector to l=1 component order (m=-1,0,1)
P_YZX = np.array([
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
])

_C1 = math.sqrt(3.0 / (4.0 * math.pi))
_C2XY = 0.5 * math.sqrt(15.0 / math.pi)
_C20 = 0.25 * math.sqrt(5.0 / math.pi)
_C22 = 0.25 * math.sqrt(15.0 / math.pi)

Y00 = 0.5 / math.sqrt(math.pi)


def sh_width(lmax: int) -> int:
    return (lmax + 1) ** 2


def sh_slice(l: int) -> slice:
    """Index range of the degree-l block inside a flattened SH vector."""
    return slice(l * l, (l + 1) * (l + 1))


def real_spherical_harmonics(unit_vec, lmax: int = LMAX) -> np.ndarray:
    """Real spherical harmonics of a unit vector, blocks l = 0..lmax.

    The input must already be normalized (callers divide the edge vector by
    its length); deviations beyond 1e-6 raise.
    """
    v = np.asarray(unit_vec, dtype=np.float64)
    if v.shape != (3,):
        raise ValidationError(f"expected a 3-vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError(f"input must be a unit vector, |v| = {norm}")
    return _sh_batch_unchecked(v[None, :], lmax)[0]


def spherical_harmonics_batch(unit_vecs: np.ndarray, lmax: int = LMAX) -> np.ndarray:
    """Vectorized harmonics for rows of unit vectors, shape (n, (lmax+1)^2).

    Zero rows (degenerate coincident-point edges) yield the constant l=0
    component and zeros for l > 0.
    """
    v = np.asarray(unit_vecs, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1)
    ok = norms > 1e-10
    if np.any(np.abs(norms[ok] - 1.0) > 1e-6):
        raise ValidationError("rows must be unit vectors (or exactly zero)")
    out = _sh_batch_unchecked(v, lmax)
    if not np.all(ok):
        out[~ok] = 0.0
        out[~ok, 0] = Y00
    return out


def _sh_batch_unchecked(v: np.ndarray, lmax: int) -> np.ndarray:
    if not 0 <= lmax <= LMAX:
        raise ValidationError(f"lmax must be in [0, {LMAX}], got {lmax}")
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    cols = [np.full_like(x, Y00)]
    if lmax >= 1:
        cols += [_C1 * y, _C1 * z, _C1 * x]
    if lmax >= 2:
        cols += [
            _C2XY * x * y,
            _C2XY * y * z,
            _C20 * (3.0 * z * z - 1.0),
            _C2XY * z * x,
            _C22 * (x * x - y * y),
        ]
    return np.stack(cols, axis=-1)


def _factorial(n: int) -> int:
    return math.factorial(n)


def _complex_cg(j1: int, m1: int, j2: int, m2: int, j3: int, m3: int) -> float:
    """<j1 m1 j2 m2 | j3 m3> in the Condon-Shortley convention (Racah)."""
    if m3 != m1 + m2 or not abs(j1 - j2) <= j3 <= j1 + j2:
        return 0.0
    pre = math.sqrt(
        (2 * j3 + 1)
        * _factorial(j3 + j1 - j2) * _factorial(j3 - j1 + j2)
        * _factorial(j1 + j2 - j3) / _factorial(j1 + j2 + j3 + 1)
    )
    pre *= math.sqrt(
        _factorial(j3 + m3) * _factorial(j3 - m3)
        * _factorial(j1 - m1) * _factorial(j1 + m1)
        * _factorial(j2 - m2) * _factorial(j2 + m2)
    )
    total = 0.0
    for k in range(0, j1 + j2 - j3 + 1):
        denoms = (k, j1 + j2 - j3 - k, j1 - m1 - k, j2 + m2 - k,
                  j3 - j2 + m1 + k, j3 - j1 - m2 + k)
        if any(d < 0 for d in denoms):
            continue
        term = (-1.0) ** k
        for d in denoms:
            term /= _factorial(d)
        total += term
    return pre * total


def _real_basis_change(l: int) -> np.ndarray:
    """Unitary q with Y_complex = q @ Y_real, phased so couplings are real."""
    q = np.zeros((2 * l + 1, 2 * l + 1), dtype=np.complex128)
    for m in range(-l, 0):
        q[l + m, l + abs(m)] = 1.0 / math.sqrt(2.0)
        q[l + m, l - abs(m)] = -1j / math.sqrt(2.0)
    q[l, l] = 1.0
    for m in range(1, l + 1):
        q[l + m, l + abs(m)] = (-1.0) ** m / math.sqrt(2.0)
        q[l + m, l - abs(m)] = 1j * (-1.0) ** m / math.sqrt(2.0)
    return (-1j) ** l * q


@lru_cache(maxsize=None)
def clebsch_gordan(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real coupling tensor C[m3, m1, m2] with orthonormal m3-rows.

    Contracting features u (degree l1) and v (degree l2) as
    w[m3] = sum C[m3, m1, m2] u[m1] v[m2] yields a degree-l3 feature.
    """
    if not abs(l1 - l2) <= l3 <= l1 + l2:
        raise ValidationError(f"({l1}, {l2}) -> {l3} violates the triangle rule")
    cc = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1), dtype=np.complex128)
    for i, m1 in enumerate(range(-l1, l1 + 1)):
        for j, m2 in enumerate(range(-l2, l2 + 1)):
            for k, m3 in enumerate(range(-l3, l3 + 1)):
                cc[i, j, k] = _complex_cg(l1, m1, l2, m2, l3, m3)
    q1 = _real_basis_change(l1)
    q2 = _real_basis_change(l2)
    q3 = _real_basis_change(l3)
    real = np.einsum("ia,jb,kc,ijk->abc", q1, q2, np.conj(q3), cc)
    if np.abs(real.imag).max() > 1e-12:
        raise AssertionError("real-basis coupling has residual imaginary part")
    out = np.ascontiguousarray(np.moveaxis(real.real, 2, 0))
    out.setflags(write=False)
    return out


def _check_rotation(R: np.ndarray):
    if R.shape != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got {R.shape}")
    if np.abs(R @ R.T - np.eye(3)).max() > 1e-8 or np.linalg.det(R) < 0:
        raise ValidationError("matrix is not a proper rotation")


@lru_cache(maxsize=None)
def _cg112() -> np.ndarray:
    return clebsch_gordan(1, 1, 2)


def wigner_d(R, l: int) -> np.ndarray:
    """Rotation matrix acting on a degree-l block of real harmonics.

    D(0) is [1]; D(1) conjugates R into (y, z, x) component order; D(2) is
    the l=2 projection of D(1) x D(1) through the coupling tensor.
    """
    R = np.asarray(R, dtype=np.float64)
    _check_rotation(R)
    if l == 0:
        return np.ones((1, 1))
    d1 = P_YZX @ R @ P_YZX.T
    if l == 1:
        return d1
    if l == 2:
        c = _cg112()
        return np.einsum("Mab,ac,bd,Ncd->MN", c, d1, d1, c)
    raise ValidationError(f"degree {l} not supported (lmax = {LMAX})")


def wigner_d_blocks(R, lmax: int = LMAX) -> list[np.ndarray]:
    return [wigner_d(R, l) for l in range(lmax + 1)]


def allowed_paths(lmax: int = LMAX, parity_even_only: bool = True) -> tuple[tuple[int, int, int], ...]:
    """Coupling paths (l_in, l_filter, l_out) within the triangle rule.

    With parity_even_only, paths with odd l_in + l_filter + l_out are
    dropped; this keeps every block at parity (-1)^l so the scalar output
    is invariant under point inversion as well as rotation.
    """
    paths = []
    for li in range(lmax + 1):
        for ls in range(lmax + 1):
            for lo in range(abs(li - ls), min(li + ls, lmax) + 1):
                if parity_even_only and (li + ls + lo) % 2 == 1:
                    continue
                paths.append((li, ls, lo))
    return tuple(paths)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random proper rotation via QR of a Gaussian matrix."""
    A = rng.normal(size=(3, 3))
    Q, upper = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(upper))
    if np.linalg.det(Q) < 0:
        Q[:, [0, 1]] = Q[:, [1, 0]]
    return Q


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about an arbitrary axis."""
    u = np.asarray(axis, dtype=np.float64)
    u = u / np.linalg.norm(u)
    K = np.array([
        [0.0, -u[2], u[1]],
        [u[2], 0.0, -u[0]],
        [-u[1], u[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)
