"""Unitary dilations of non-unitary operators with meter postselection.

Register layout for every dilation: system qubits first (most significant),
meter qubits appended after them. The effective operator of a dilation is
``C_s = <s| U |phi>`` contracted over the meter register.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .circuit import ApplyNonUnitary, CircuitProgram, PureState, postselect, unitary
from .errors import DimensionError, PreconditionError
from .linalg import as_operator, dagger, embed, num_qubits, polar_decompose, psd_sqrt


@dataclass(frozen=True)
class DilationGadget:
    """Unitary on system (x) meter with ``<outcome| unitary |init>_meter = scalar * source``."""

    unitary: np.ndarray
    system_qubits: int
    meter_qubits: int
    meter_init: np.ndarray
    postselect_outcome: tuple[int, ...]
    scalar: float
    source: np.ndarray
    local_gates: tuple = ()

    @property
    def num_qubits(self) -> int:
        return self.system_qubits + self.meter_qubits


def _meter_vector(bits: Sequence[int]) -> np.ndarray:
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int("".join(map(str, bits)), 2) if bits else 0] = 1.0
    return v


def effective_operator(g: DilationGadget) -> np.ndarray:
    """``C_s = <s|_B U |phi>_B`` as a system operator."""
    ds, dm = 2**g.system_qubits, 2**g.meter_qubits
    u = np.asarray(g.unitary).reshape(ds, dm, ds, dm)
    bra = _meter_vector(g.postselect_outcome).conj()
    return np.einsum("m,imjn,n->ij", bra, u, np.asarray(g.meter_init, dtype=complex))


def contraction_dilation(r) -> np.ndarray:
    """``U_R = [[R, sqrt(I - R^2)], [sqrt(I - R^2), -R]]`` in the meter basis, meter as last qubit.

    ``R`` must be Hermitian with spectrum in ``[0, 1]``.
    """
    r = as_operator(r, "R")
    w = np.linalg.eigvalsh((r + dagger(r)) / 2)
    if w[0] < -1e-10 or w[-1] > 1 + 1e-10:
        raise PreconditionError(f"R must satisfy 0 <= R <= I (spectrum [{w[0]:.3g}, {w[-1]:.3g}])")
    c = psd_sqrt(np.eye(r.shape[0]) - r @ r)
    blocks = [[r, c], [c, -r]]
    d = r.shape[0]
    out = np.zeros((2 * d, 2 * d), dtype=complex)
    for a in range(2):
        for b in range(2):
            out[a::2, b::2] = blocks[a][b]  # system (x) meter ordering
    return out


def polar_dilation(u) -> DilationGadget:
    """One-meter dilation of ``alpha U`` with ``alpha = 1 / ||U||``, via ``alpha U = QR``."""
    u = as_operator(u, "U")
    n = num_qubits(u.shape[0])
    lam1 = float(np.linalg.norm(u, 2))
    if lam1 == 0:
        raise PreconditionError("cannot dilate the zero operator")
    alpha = 1.0 / lam1
    pf = polar_decompose(alpha * u)
    ur = contraction_dilation(pf.R)
    full = np.kron(pf.Q, np.eye(2)) @ ur
    return DilationGadget(
        unitary=full,
        system_qubits=n,
        meter_qubits=1,
        meter_init=_meter_vector((0,)),
        postselect_outcome=(0,),
        scalar=alpha,
        source=u,
    )


# ---------------------------------------------------------------------------
# Whole-program dilation


@dataclass(frozen=True)
class DilatedProgram:
    program: CircuitProgram
    scalars: tuple[float, ...]
    meters: tuple[int, ...]
    system_qubits: int

    def initial_state(self, system_state: PureState) -> PureState:
        return system_state.tensor(PureState.zeros(len(self.meters))) if self.meters else system_state

    def system_state(self, state: PureState) -> PureState:
        """Drop the meters from a state whose meters are all in ``|0>``."""
        if not self.meters:
            return state
        amps = state.amplitudes.reshape(2**self.system_qubits, 2 ** len(self.meters))[:, 0]
        return PureState.from_amplitudes(amps)


def dilate_with_scalars(program: CircuitProgram) -> DilatedProgram:
    """Replace every non-unitary step by its polar dilation on a fresh meter plus a postselection."""
    n = program.num_qubits
    n_meters = sum(isinstance(s, ApplyNonUnitary) for s in program.steps)
    steps = []
    scalars = []
    meters = []
    for step in program.steps:
        if isinstance(step, ApplyNonUnitary):
            meter = n + len(meters)
            gadget = polar_dilation(step.op)
            steps.append(unitary(gadget.unitary, tuple(step.targets) + (meter,)))
            steps.append(postselect([meter], 0))
            scalars.append(gadget.scalar)
            meters.append(meter)
        else:
            steps.append(step)
    out = CircuitProgram(n + n_meters, steps)
    return DilatedProgram(out, tuple(scalars), tuple(meters), n)


def dilate_circuit(program: CircuitProgram) -> CircuitProgram:
    return dilate_with_scalars(program).program


# ---------------------------------------------------------------------------
# Similarity-transform dilations


def _check_pd(s: np.ndarray, name: str) -> np.ndarray:
    s = as_operator(s, name)
    if np.max(np.abs(s - dagger(s))) > 1e-10 * max(1.0, np.max(np.abs(s))):
        raise PreconditionError(f"{name} must be Hermitian positive definite")
    w = np.linalg.eigvalsh((s + dagger(s)) / 2)
    if w[0] <= 1e-12 * w[-1]:
        raise PreconditionError(f"{name} is not positive definite (min eigenvalue {w[0]:.3g})")
    return (s + dagger(s)) / 2


def two_meter_pt_dilation(s, u0) -> DilationGadget:
    """Dilation of ``S U0 S^{-1}`` with meters ``B`` (for ``V_S``) and ``B'`` (for ``V_{S^{-1}}``).

    Layout: system, then ``B``, then ``B'``. The scalar is ``alpha beta`` with
    ``alpha = 1/lambda_max(S)`` and ``beta = 1/lambda_max(S^{-1})``.
    """
    s = _check_pd(s, "S")
    u0 = as_operator(u0, "U0")
    if u0.shape != s.shape:
        raise DimensionError("S and U0 must have the same shape")
    n = num_qubits(s.shape[0])
    w = np.linalg.eigvalsh(s)
    alpha, beta = 1.0 / w[-1], w[0]
    s_inv = np.linalg.inv(s)
    v_s = contraction_dilation(alpha * s)
    v_sinv = contraction_dilation(beta * s_inv)
    sys = list(range(n))
    total = n + 2
    full = (
        embed(v_s, sys + [n], total)
        @ embed(u0, sys, total)
        @ embed(v_sinv, sys + [n + 1], total)
    )
    return DilationGadget(
        unitary=full,
        system_qubits=n,
        meter_qubits=2,
        meter_init=_meter_vector((0, 0)),
        postselect_outcome=(0, 0),
        scalar=float(alpha * beta),
        source=s @ u0 @ s_inv,
        local_gates=((tuple(sys + [n + 1]), v_sinv), (tuple(sys), u0), (tuple(sys + [n]), v_s)),
    )


def product_dilation(factors: Sequence) -> DilationGadget:
    """``V_S`` as a tensor product of local dilations, one meter per factor.

    Factor ``j`` acts on its own block of system qubits and couples only to
    meter ``j``; the composite scalar is the product of ``1/lambda_max(S_j)``.
    """
    if not factors:
        raise ValueError("need at least one factor")
    mats = [_check_pd(f, f"factor {j}") for j, f in enumerate(factors)]
    sizes = [num_qubits(m.shape[0]) for m in mats]
    n_sys = sum(sizes)
    total = n_sys + len(mats)
    full = np.eye(2**total, dtype=complex)
    gates = []
    scalar = 1.0
    offset = 0
    for j, (m, k) in enumerate(zip(mats, sizes)):
        alpha = 1.0 / np.linalg.eigvalsh(m)[-1]
        scalar *= alpha
        local = contraction_dilation(alpha * m)
        qubits = list(range(offset, offset + k)) + [n_sys + j]
        gates.append((tuple(qubits), local))
        full = embed(local, qubits, total) @ full
        offset += k
    return DilationGadget(
        unitary=full,
        system_qubits=n_sys,
        meter_qubits=len(mats),
        meter_init=_meter_vector((0,) * len(mats)),
        postselect_outcome=(0,) * len(mats),
        scalar=float(scalar),
        source=reduce(np.kron, mats),
        local_gates=tuple(gates),
    )


# ---------------------------------------------------------------------------
# Matchgates


def matchgate(f, g) -> np.ndarray:
    """``U(F, G)``: ``F`` on the even-parity pair ``{|00>, |11>}``, ``G`` on ``{|01>, |10>}``."""
    f, g = np.asarray(f, dtype=complex), np.asarray(g, dtype=complex)
    return np.array(
        [
            [f[0, 0], 0, 0, f[0, 1]],
            [0, g[0, 0], g[0, 1], 0],
            [0, g[1, 0], g[1, 1], 0],
            [f[1, 0], 0, 0, f[1, 1]],
        ],
        dtype=complex,
    )


def phase_fix_matchgate(f, g) -> tuple[np.ndarray, np.ndarray]:
    """Rephase the second row of ``F`` so that ``det F = det G``.

    That row never enters the induced map, so the induced operator is unchanged.
    """
    f = as_operator(f, "F").copy()
    g = as_operator(g, "G")
    if f.shape != (2, 2) or g.shape != (2, 2):
        raise DimensionError("F and G must be 2x2")
    for name, m in (("F", f), ("G", g)):
        if not np.allclose(m @ dagger(m), np.eye(2), atol=1e-10):
            raise PreconditionError(f"{name} must be unitary")
    df, dg = np.linalg.det(f), np.linalg.det(g)
    f[1] *= dg / df
    if abs(np.linalg.det(f) - dg) > 1e-10:
        raise PreconditionError("could not match determinants of F and G")
    return f, g


def matchgate_induced(f, g) -> np.ndarray:
    """``<0|_B U(F, G) |+>_B`` with the meter as the second qubit, by dense contraction."""
    f, g = phase_fix_matchgate(f, g)
    u = matchgate(f, g).reshape(2, 2, 2, 2)
    plus = np.array([1, 1], dtype=complex) / np.sqrt(2)
    return np.einsum("ikl,l->ik", u[:, 0, :, :], plus)


def matchgate_dilation(f, g) -> DilationGadget:
    f, g = phase_fix_matchgate(f, g)
    plus = np.array([1, 1], dtype=complex) / np.sqrt(2)
    induced = matchgate_induced(f, g)
    return DilationGadget(
        unitary=matchgate(f, g),
        system_qubits=1,
        meter_qubits=1,
        meter_init=plus,
        postselect_outcome=(0,),
        scalar=1.0,
        source=induced,
    )


def matchgate_for_target(t) -> tuple[np.ndarray, np.ndarray]:
    """``(F, G)`` whose induced map is ``T / sqrt(2)`` for a single-qubit unitary ``T``."""
    t = as_operator(t, "T")
    if t.shape != (2, 2) or not np.allclose(t @ dagger(t), np.eye(2), atol=1e-10):
        raise PreconditionError("T must be a 2x2 unitary")
    a, b = t[0]
    c, d = t[1]
    f = np.array([[a, b], [-np.conj(b), np.conj(a)]])
    g = np.array([[np.conj(d), -np.conj(c)], [c, d]])
    return phase_fix_matchgate(f, g)
