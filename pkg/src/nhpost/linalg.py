"""Dense complex-matrix toolkit: SVD, polar, exponential, biorthogonal spectra.

All operators are plain ``numpy`` arrays of dtype ``complex128``. Functions
never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import DimensionError, NotDiagonalizableError, NumericalError, PreconditionError

#: eigenvector-matrix condition number above which H is treated as defective
DEFECTIVE_CONDITION = 1e8
#: above this condition number ``matrix_exp`` falls back from the spectral route to Pade
SPECTRAL_EXP_CONDITION = 1e3

_TIE_RTOL = 1e-12


def as_operator(a, name: str = "operator") -> np.ndarray:
    """Return ``a`` as a finite square complex matrix or raise."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise PreconditionError(f"{name} has non-finite entries")
    return m


def num_qubits(dim: int) -> int:
    """Number of qubits addressed by a ``dim``-dimensional operator."""
    if dim < 1 or dim & (dim - 1):
        raise DimensionError(f"dimension {dim} is not a power of 2")
    return dim.bit_length() - 1


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return np.allclose(u @ dagger(u), np.eye(u.shape[0]), rtol=0, atol=atol)


def is_hermitian(a: np.ndarray, atol: float = 1e-12) -> bool:
    a = np.asarray(a)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= atol * scale)


def _first_nonzero(v: np.ndarray, tol: float = 1e-12) -> int:
    idx = np.flatnonzero(np.abs(v) > tol * max(1.0, float(np.max(np.abs(v)))))
    return int(idx[0]) if idx.size else 0


def fix_column_phases(v: np.ndarray) -> np.ndarray:
    """Rotate each column so its first nonzero entry is real and positive."""
    v = np.array(v, dtype=complex)
    for j in range(v.shape[1]):
        i = _first_nonzero(v[:, j])
        if v[i, j] != 0:
            v[:, j] *= abs(v[i, j]) / v[i, j]
    return v


# ---------------------------------------------------------------------------
# Singular value decomposition


@dataclass(frozen=True)
class SingularDecomposition:
    """``U = V @ diag(singulars) @ W^dagger`` with singulars nonincreasing."""

    V: np.ndarray
    singulars: np.ndarray
    W: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.V * self.singulars) @ dagger(self.W)


def svd(u) -> SingularDecomposition:
    """Deterministic SVD.

    Columns are phase-fixed (first nonzero entry of each ``V`` column real and
    positive, ``W`` rotated to match) and runs of equal singular values are
    ordered by the position and value of that first nonzero entry.
    """
    u = as_operator(u, "U")
    v, s, wh = np.linalg.svd(u)
    w = dagger(wh)
    for j in range(v.shape[1]):
        i = _first_nonzero(v[:, j])
        if v[i, j] != 0:
            phase = v[i, j] / abs(v[i, j])
            v[:, j] /= phase
            w[:, j] /= phase

    scale = s[0] if s[0] > 0 else 1.0
    order = list(range(len(s)))
    start = 0
    while start < len(s):
        stop = start + 1
        while stop < len(s) and abs(s[stop] - s[start]) <= _TIE_RTOL * scale:
            stop += 1
        if stop - start > 1:
            block = order[start:stop]
            block.sort(key=lambda j: (_first_nonzero(v[:, j]), -v[_first_nonzero(v[:, j]), j].real))
            order[start:stop] = block
        start = stop
    return SingularDecomposition(V=v[:, order], singulars=s[order], W=w[:, order])


# ---------------------------------------------------------------------------
# Polar decomposition


@dataclass(frozen=True)
class PolarFactors:
    """``K = Q @ R`` with ``Q`` unitary and ``R = (K^dagger K)^{1/2}``."""

    Q: np.ndarray
    R: np.ndarray


def polar_decompose(k) -> PolarFactors:
    """Right polar decomposition via the SVD.

    For singular ``K`` the unitary ``V W^dagger`` is already a valid completion
    of ``Q`` on the kernel of ``R``.
    """
    dec = svd(k)
    q = dec.V @ dagger(dec.W)
    r = (dec.W * dec.singulars) @ dagger(dec.W)
    r = (r + dagger(r)) / 2
    return PolarFactors(Q=q, R=r)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Positive square root of a Hermitian PSD matrix (negative eigenvalues clipped)."""
    a = as_operator(a)
    w, vecs = np.linalg.eigh((a + dagger(a)) / 2)
    return (vecs * np.sqrt(np.clip(w, 0.0, None))) @ dagger(vecs)


# ---------------------------------------------------------------------------
# Biorthogonal spectra


@dataclass(frozen=True)
class BiorthogonalSpectrum:
    """Right eigenvectors (columns, unit norm) and left eigenvectors (rows).

    Eigenvalues are ordered by decreasing imaginary part, then increasing
    real part; ``lefts @ rights`` is the identity.
    """

    eigenvalues: np.ndarray
    rights: np.ndarray
    lefts: np.ndarray

    @property
    def decay_rates(self) -> np.ndarray:
        """``gamma_j = -Im(nu_j)``."""
        return -self.eigenvalues.imag

    def reconstruct(self) -> np.ndarray:
        return (self.rights * self.eigenvalues) @ self.lefts

    def evolution(self, t: float) -> np.ndarray:
        """``exp(-i H t)`` through the spectral form."""
        return (self.rights * np.exp(-1j * self.eigenvalues * t)) @ self.lefts


def _spectral_order(eigenvalues: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(eigenvalues))))
    im = np.round(eigenvalues.imag / scale, 10)
    re = np.round(eigenvalues.real / scale, 10)
    return np.lexsort((re, -im))


def _nearest_pair(eigenvalues: np.ndarray) -> tuple[complex, complex]:
    best = (np.inf, 0, 0)
    for i in range(len(eigenvalues)):
        for j in range(i + 1, len(eigenvalues)):
            gap = abs(eigenvalues[i] - eigenvalues[j])
            if gap < best[0]:
                best = (gap, i, j)
    return complex(eigenvalues[best[1]]), complex(eigenvalues[best[2]])


def biorthogonal_spectrum(h, max_condition: float = DEFECTIVE_CONDITION) -> BiorthogonalSpectrum:
    """Biorthonormal eigen-decomposition ``H = sum_j nu_j |r_j><l_j|``.

    Hermitian input goes through ``eigh`` so that ``lefts == rights^dagger``.
    Raises :class:`NotDiagonalizableError` when the eigenvector matrix has
    condition number above ``max_condition``.
    """
    h = as_operator(h, "H")
    if is_hermitian(h):
        w, vecs = np.linalg.eigh((h + dagger(h)) / 2)
        vals = w.astype(complex)
    else:
        vals, vecs = np.linalg.eig(h)
    order = _spectral_order(vals)
    vals = vals[order]
    rights = vecs[:, order]
    rights = rights / np.linalg.norm(rights, axis=0)
    rights = fix_column_phases(rights)
    cond = np.linalg.cond(rights)
    if not np.isfinite(cond) or cond > max_condition:
        a, b = _nearest_pair(vals) if len(vals) > 1 else (vals[0], vals[0])
        raise NotDiagonalizableError(
            f"eigenvector matrix condition number {cond:.3g} exceeds {max_condition:.3g}; "
            f"near-degenerate cluster around eigenvalues {a:.6g} and {b:.6g}"
        )
    if is_hermitian(h):
        lefts = dagger(rights)
    else:
        lefts = np.linalg.inv(rights)
    return BiorthogonalSpectrum(eigenvalues=vals, rights=rights, lefts=lefts)


# ---------------------------------------------------------------------------
# Matrix exponential


def _is_normal(a: np.ndarray) -> bool:
    scale = max(1.0, float(np.linalg.norm(a)) ** 2)
    return bool(np.linalg.norm(a @ dagger(a) - dagger(a) @ a) <= 1e-12 * scale)


def matrix_exp(a, method: str = "auto") -> np.ndarray:
    """Matrix exponential ``exp(A)``.

    ``method`` is one of ``"auto"``, ``"spectral"`` or ``"pade"``. Hermitian and
    anti-Hermitian generators use ``eigh``; other inputs use the biorthogonal
    spectral form when the eigenvector matrix is well conditioned and
    scaling-and-squaring Pade otherwise.
    """
    a = as_operator(a, "A")
    if method not in ("auto", "spectral", "pade"):
        raise ValueError(f"unknown method {method!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        if method == "pade":
            out = scipy.linalg.expm(a)
        elif is_hermitian(a):
            w, v = np.linalg.eigh((a + dagger(a)) / 2)
            out = (v * np.exp(w)) @ dagger(v)
        elif is_hermitian(1j * a):
            w, v = np.linalg.eigh((1j * a + dagger(1j * a)) / 2)
            out = (v * np.exp(-1j * w)) @ dagger(v)
        elif method == "auto" and _is_normal(a):
            t, z = scipy.linalg.schur(a, output="complex")
            out = (z * np.exp(np.diag(t))) @ dagger(z)
        else:
            try:
                spec = biorthogonal_spectrum(a)
                cond = np.linalg.cond(spec.rights)
            except NotDiagonalizableError:
                if method == "spectral":
                    raise
                spec, cond = None, np.inf
            if method == "spectral" or cond <= SPECTRAL_EXP_CONDITION:
                out = (spec.rights * np.exp(spec.eigenvalues)) @ spec.lefts
            else:
                out = scipy.linalg.expm(a)
    if not np.all(np.isfinite(out)):
        raise NumericalError(
            f"matrix exponential overflowed (norm of A = {np.linalg.norm(a, 2):.3g}); "
            "scale-and-square failed"
        )
    return out


# ---------------------------------------------------------------------------
# Distance from unitarity


def normalized_singular_radius(u) -> float:
    """``1 - lambda_min / lambda_max``; zero iff ``U`` is proportional to a unitary."""
    s = np.linalg.svd(as_operator(u, "U"), compute_uv=False)
    if s[0] == 0:
        raise PreconditionError("normalized singular radius is undefined for the zero matrix")
    return float(np.clip(1.0 - s[-1] / s[0], 0.0, 1.0))


class UnitaryDistance(NamedTuple):
    distance: float
    alpha_star: float
    unitary: np.ndarray


def distance_to_unitary(u) -> UnitaryDistance:
    """Operator-norm distance from the rescaled family ``alpha U`` to the unitary group.

    Returns the minimal distance ``(l1 - ld) / (l1 + ld)``, the optimal scale
    ``2 / (l1 + ld)`` and the nearest unitary ``V W^dagger``.
    """
    dec = svd(u)
    l1, ld = dec.singulars[0], dec.singulars[-1]
    if l1 == 0:
        raise PreconditionError("distance to unitary is undefined for the zero matrix")
    return UnitaryDistance(
        distance=float((l1 - ld) / (l1 + ld)),
        alpha_star=float(2.0 / (l1 + ld)),
        unitary=dec.V @ dagger(dec.W),
    )


# ---------------------------------------------------------------------------
# JSON matrix encoding: nested rows of [re, im] pairs


def encode_matrix(m) -> list:
    m = np.asarray(m, dtype=complex)
    if not np.all(np.isfinite(m)):
        raise PreconditionError("cannot encode non-finite matrix")
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def decode_matrix(data) -> np.ndarray:
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"malformed matrix encoding: {exc}") from None
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise DimensionError(f"matrix encoding must be rows of [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_vector(v) -> list:
    v = np.asarray(v, dtype=complex)
    return [[float(z.real), float(z.imag)] for z in v]


def decode_vector(data) -> np.ndarray:
    arr = np.array(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionError(f"vector encoding must be a list of [re, im] pairs, got shape {arr.shape}")
    return arr[:, 0] + 1j * arr[:, 1]


# ---------------------------------------------------------------------------
# Small helpers used across modules


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random ``d x d`` unitary (QR of a Ginibre matrix with phase fix)."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def embed(op: np.ndarray, targets, n: int) -> np.ndarray:
    """Full ``2^n x 2^n`` matrix of ``op`` acting on ``targets`` (qubit 0 is the MSB)."""
    targets = list(targets)
    k = len(targets)
    op = np.asarray(op, dtype=complex)
    if op.shape != (2**k, 2**k):
        raise DimensionError(f"operator of shape {op.shape} cannot act on {k} qubits")
    rest = [q for q in range(n) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest)))
    perm = targets + rest
    t = full.reshape([2] * (2 * n))
    inv = np.argsort(perm)
    t = t.transpose(list(inv) + [n + i for i in inv])
    return t.reshape(2**n, 2**n)
