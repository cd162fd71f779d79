"""Structure of non-Hermitian Hamiltonians.

Hermitian/anti-Hermitian split ``H = H0 - i Gamma``, pseudo-Hermitian metric
search, the similarity transform to a Hermitian partner, the canonical
single-qubit PT form and the long-time decay subspace.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import BrokenPhaseError, DimensionError, PreconditionError
from .linalg import as_operator, biorthogonal_spectrum, dagger, is_hermitian

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)

#: eigenvalues are paired under conjugation within this fraction of max |nu|
PAIRING_RTOL = 1e-8
#: a metric counts as positive definite when its smallest eigenvalue exceeds this
METRIC_PD_TOL = 1e-10
METRIC_ASCENT_STEPS = 200


@dataclass(frozen=True)
class NHHamiltonian:
    """``H = H0 - i Gamma`` with ``H0`` and ``Gamma`` Hermitian."""

    H: np.ndarray
    H0: np.ndarray
    Gamma: np.ndarray


def split_parts(h) -> NHHamiltonian:
    h = as_operator(h, "H")
    h0 = (h + dagger(h)) / 2
    gamma = 1j * (h - dagger(h)) / 2
    return NHHamiltonian(H=h, H0=h0, Gamma=gamma)


class GammaVerdict(str, enum.Enum):
    INDEFINITE = "indefinite"
    ZERO = "zero"
    SEMIDEFINITE = "semidefinite-nonpseudohermitian"


def unpaired_eigenvalues(eigenvalues, rtol: float = PAIRING_RTOL) -> list[complex]:
    """Eigenvalues without a complex-conjugate partner in the same spectrum.

    The matching is a minimum-cost assignment between ``nu`` and ``conj(nu)``,
    so repeated eigenvalues are paired one-to-one.
    """
    nu = np.asarray(eigenvalues, dtype=complex)
    if nu.size == 0:
        return []
    tol = rtol * max(float(np.max(np.abs(nu))), 1e-300)
    cost = np.abs(nu[:, None] - np.conj(nu)[None, :])
    rows, cols = linear_sum_assignment(cost)
    return [complex(nu[i]) for i, j in zip(rows, cols) if cost[i, j] > tol]


def check_gamma_indefinite(h) -> GammaVerdict:
    """Classify the anti-Hermitian part of a pseudo-Hermitian ``H``.

    A diagonalizable pseudo-Hermitian Hamiltonian has a spectrum closed under
    conjugation, hence real trace and traceless ``Gamma``; so ``Gamma`` is
    either zero or has eigenvalues of both signs. The verdict is computed from
    the actual eigenvalues of ``Gamma`` rather than assumed.
    """
    parts = split_parts(h)
    spec = biorthogonal_spectrum(parts.H)
    missing = unpaired_eigenvalues(spec.eigenvalues)
    if missing:
        listed = ", ".join(f"{z:.6g}" for z in missing)
        raise PreconditionError(f"spectrum is not closed under conjugation; unpaired eigenvalues: {listed}")
    scale = max(1.0, float(np.linalg.norm(parts.H, 2)))
    g = np.linalg.eigvalsh(parts.Gamma)
    tol = 1e-12 * scale
    if np.max(np.abs(g)) <= tol:
        return GammaVerdict.ZERO
    if g[0] < -tol and g[-1] > tol:
        return GammaVerdict.INDEFINITE
    return GammaVerdict.SEMIDEFINITE


# ---------------------------------------------------------------------------
# Metric operator


@dataclass(frozen=True)
class MetricSolution:
    eta: np.ndarray
    positive_definite: bool
    min_eigenvalue: float


def hermitian_basis(d: int) -> list[np.ndarray]:
    """Orthonormal (Hilbert-Schmidt) basis of the real space of ``d x d`` Hermitian matrices."""
    basis = []
    for i in range(d):
        e = np.zeros((d, d), dtype=complex)
        e[i, i] = 1.0
        basis.append(e)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = e[j, i] = 1 / np.sqrt(2)
            basis.append(e)
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = -1j / np.sqrt(2)
            e[j, i] = 1j / np.sqrt(2)
            basis.append(e)
    return basis


def metric_nullspace(h, rtol: float = 1e-10) -> list[np.ndarray]:
    """Orthonormal basis of Hermitian solutions of ``H^dagger eta = eta H``."""
    h = as_operator(h, "H")
    d = h.shape[0]
    basis = hermitian_basis(d)
    cols = []
    for b in basis:
        r = (dagger(h) @ b - b @ h).ravel()
        cols.append(np.concatenate([r.real, r.imag]))
    a = np.array(cols).T
    _, s, vt = np.linalg.svd(a)
    smax = s[0] if s.size and s[0] > 0 else 1.0
    rank = int(np.sum(s > rtol * smax))
    null = vt[rank:]
    out = []
    for coeffs in null:
        m = sum(c * b for c, b in zip(coeffs, basis))
        out.append((m + dagger(m)) / 2)
    return out


def _coords(m: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    return np.array([np.real(np.vdot(b, m)) for b in basis])


def _combine(c: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    m = np.tensordot(c, np.array(basis), axes=1)
    return (m + dagger(m)) / 2


def find_metric(h, steps: int = METRIC_ASCENT_STEPS) -> MetricSolution | None:
    """Search the Hermitian solutions of the metric equation for a positive definite one.

    The smallest eigenvalue is concave in the nullspace coordinates, so it is
    maximized over the unit ball by projected supergradient ascent. When the
    spectrum is real the biorthogonal metric ``L^dagger L`` seeds the ascent.
    The returned metric has trace ``dim`` when its trace is nonzero and
    Frobenius norm ``sqrt(dim)`` otherwise.
    """
    h = as_operator(h, "H")
    d = h.shape[0]
    if d > 64:
        raise DimensionError("metric search is limited to dimension 64")
    basis = metric_nullspace(h)
    if not basis:
        return None

    seeds = [np.eye(d, dtype=complex)]
    try:
        spec = biorthogonal_spectrum(h)
        if np.all(np.abs(spec.eigenvalues.imag) <= 1e-10 * max(1.0, np.max(np.abs(spec.eigenvalues)))):
            seeds.insert(0, dagger(spec.lefts) @ spec.lefts)
    except Exception:
        pass
    candidates = [_coords(s, basis) for s in seeds] + [np.eye(len(basis))[0]]
    c = max(candidates, key=lambda v: _ball_score(v, basis))
    c = c / np.linalg.norm(c) if np.linalg.norm(c) > 0 else np.eye(len(basis))[0]

    best_c, best_val = c, _ball_score(c, basis)
    for k in range(steps):
        w, v = np.linalg.eigh(_combine(c, basis))
        if w[0] > 0 and len(basis) == 1:
            break
        vec = v[:, 0]
        grad = np.array([np.real(np.vdot(vec, b @ vec)) for b in basis])
        c = c + grad / np.sqrt(k + 1)
        c = c / max(1.0, np.linalg.norm(c))
        val = _ball_score(c, basis)
        if val > best_val:
            best_c, best_val = c, val

    eta = _combine(best_c, basis)
    tr = float(np.real(np.trace(eta)))
    if abs(tr) > 1e-10 * np.linalg.norm(eta):
        eta = eta * (d / tr)
    else:
        eta = eta * (np.sqrt(d) / np.linalg.norm(eta))
    eta = (eta + dagger(eta)) / 2
    lam = float(np.linalg.eigvalsh(eta)[0])
    return MetricSolution(eta=eta, positive_definite=lam > METRIC_PD_TOL, min_eigenvalue=lam)


def _ball_score(c: np.ndarray, basis) -> float:
    n = np.linalg.norm(c)
    if n == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(_combine(c / n, basis))[0])


def metric_residual(h, eta) -> float:
    h = np.asarray(h, dtype=complex)
    return float(np.linalg.norm(dagger(h) @ eta - eta @ h, 2))


def similarity_factors(eta, h) -> tuple[np.ndarray, np.ndarray]:
    """Return ``S = eta^{-1/2}`` and the Hermitian partner ``H0 = S^{-1} H S``."""
    eta = as_operator(eta, "eta")
    h = as_operator(h, "H")
    if eta.shape != h.shape:
        raise DimensionError("eta and H must have the same shape")
    if not is_hermitian(eta, atol=1e-10):
        raise PreconditionError("metric must be Hermitian")
    w, v = np.linalg.eigh((eta + dagger(eta)) / 2)
    if w[0] <= METRIC_PD_TOL * max(1.0, w[-1]):
        raise PreconditionError(f"metric is not positive definite (min eigenvalue {w[0]:.3g})")
    res = metric_residual(h, eta)
    if res > 1e-8 * max(1.0, np.linalg.norm(h, 2)) * np.linalg.norm(eta, 2):
        raise PreconditionError(f"metric equation residual {res:.3g} too large")
    s = (v / np.sqrt(w)) @ dagger(v)
    s_inv = (v * np.sqrt(w)) @ dagger(v)
    h0 = s_inv @ h @ s
    return s, (h0 + dagger(h0)) / 2


# ---------------------------------------------------------------------------
# Single-qubit PT canonical form


@dataclass(frozen=True)
class PTCanonicalForm:
    """``B^dagger (H - shift I) B = [[0, g - gamma], [g + gamma, 0]]``."""

    g: float
    gamma: float
    basis_change: np.ndarray
    scalar_shift: complex

    @property
    def omega(self) -> float:
        return float(np.sqrt(self.g**2 - self.gamma**2))

    def canonical_matrix(self) -> np.ndarray:
        return pt_hamiltonian(self.g, self.gamma)


def pt_hamiltonian(g: float, gamma: float) -> np.ndarray:
    """``g sigma_x - i gamma sigma_y``."""
    return np.array([[0, g - gamma], [g + gamma, 0]], dtype=complex)


def bloch_vector(a: np.ndarray) -> np.ndarray:
    """Real Pauli coefficients of a traceless Hermitian 2x2 matrix."""
    return np.array([np.real(np.trace(a @ p)) / 2 for p in PAULIS])


def pt_canonical_2x2(h) -> PTCanonicalForm:
    """Bring a single-qubit quasi-Hermitian ``H`` to ``g sigma_x - i gamma sigma_y``.

    With ``H - (tr H / 2) I = g n.sigma - i gamma m.sigma``, a real spectrum
    requires ``n`` orthogonal to ``m`` and ``gamma < g``. The basis change
    rotates ``n`` to ``x`` and ``m`` to ``y``.
    """
    h = as_operator(h, "H")
    if h.shape != (2, 2):
        raise DimensionError("pt_canonical_2x2 needs a 2x2 matrix")
    shift = complex(np.trace(h) / 2)
    parts = split_parts(h - shift * np.eye(2))
    nvec, mvec = bloch_vector(parts.H0), bloch_vector(parts.Gamma)
    g, gamma = float(np.linalg.norm(nvec)), float(np.linalg.norm(mvec))
    scale = max(g, gamma, 1e-300)
    if g <= 1e-12 * scale or gamma <= 1e-12 * scale:
        raise PreconditionError("both the Hermitian and anti-Hermitian parts must be nonzero")
    n, m = nvec / g, mvec / gamma
    cross = np.cross(n, m)
    if np.linalg.norm(cross) <= 1e-10:
        raise PreconditionError("Hermitian and anti-Hermitian Bloch vectors are parallel; H is not quasi-Hermitian")
    if abs(np.dot(n, m)) > 1e-8:
        raise BrokenPhaseError(
            f"Bloch vectors are not orthogonal (n.m = {np.dot(n, m):.3g}); spectrum is complex"
        )
    if gamma >= g:
        raise BrokenPhaseError(f"gamma = {gamma:.6g} >= g = {g:.6g}: PT symmetry is broken")
    # Columns: eigenvectors of (n x m).sigma with eigenvalues +1, -1, phased so
    # that <0'|n.sigma|1'> is real positive.
    z = cross / np.linalg.norm(cross)
    _, vecs = np.linalg.eigh(sum(c * p for c, p in zip(z, PAULIS)))
    b = vecs[:, ::-1].copy()
    nsig = sum(c * p for c, p in zip(n, PAULIS))
    off = dagger(b[:, 0]) @ nsig @ b[:, 1]
    b[:, 1] *= abs(off) / off
    return PTCanonicalForm(g=g, gamma=gamma, basis_change=b, scalar_shift=shift)


# ---------------------------------------------------------------------------
# Long-time behaviour


def long_time_subspace(h, rho, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the subspace the normalized state decays into.

    Among right eigenvectors whose left partner has weight above ``tol`` in
    ``rho``, keep those with the largest imaginary part of the eigenvalue.
    """
    h = as_operator(h, "H")
    rho = as_operator(rho, "rho")
    if rho.shape != h.shape:
        raise DimensionError("rho and H must have the same shape")
    spec = biorthogonal_spectrum(h)
    weights = np.real(np.einsum("ji,ik,jk->j", spec.lefts, rho, spec.lefts.conj()))
    support = np.flatnonzero(weights > tol * max(1.0, float(np.real(np.trace(rho)))))
    if support.size == 0:
        raise PreconditionError("rho has no weight on any eigenvector of H")
    im = spec.eigenvalues.imag[support]
    top = support[im >= im.max() - 1e-9 * max(1.0, float(np.max(np.abs(spec.eigenvalues))))]
    return scipy.linalg.orth(spec.rights[:, top])
