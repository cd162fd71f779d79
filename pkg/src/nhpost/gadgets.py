"""Postselection gadgets built from a single non-unitary gate.

A gadget acts on ``m`` qubits: ``m - 1`` ancillas (qubits ``0 .. m-2``, all
starting in ``|0>``) and a target (qubit ``m - 1``, the least significant
bit). One repetition applies ``W``, then the non-unitary gate ``U`` with
renormalization, then ``V^dagger``, so that the target sees the core
``V^dagger U W`` restricted to ``span{|0^m>, |0^{m-1}1>}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .circuit import CircuitProgram, PureState, Step, measure, nonunitary, run, unitary
from .errors import BrokenPhaseError, NumericalError, PreconditionError
from .hamiltonian import pt_hamiltonian
from .linalg import as_operator, biorthogonal_spectrum, dagger, matrix_exp, num_qubits, svd

#: repetition counts are computed as ``ceil(x - CEIL_SLACK)`` so that exact
#: integers are not pushed up by rounding noise
CEIL_SLACK = 1e-9


def _ceil(x: float) -> int:
    return int(math.ceil(x - CEIL_SLACK))


@dataclass(frozen=True)
class GadgetBudget:
    """Analytic error budget: ``r >= ln(2^k / epsilon) / (2 delta)``."""

    epsilon: float
    k: float
    delta: float
    r: int


@dataclass(frozen=True)
class PostselectionGadget:
    """Compiled gadget with ``left @ core @ right^dagger == source``.

    The program applies ``right_unitary``, the source gate and
    ``left_unitary^dagger`` in that order, ``repetitions`` times.
    """

    source: np.ndarray
    core: np.ndarray
    left_unitary: np.ndarray
    right_unitary: np.ndarray
    repetitions: int
    ancilla_qubits: int
    target_qubit: int
    permutation: np.ndarray | None = None
    budget: GadgetBudget | None = None

    @property
    def num_qubits(self) -> int:
        return self.ancilla_qubits + 1

    def with_repetitions(self, r: int) -> "PostselectionGadget":
        if r < 1:
            raise ValueError("repetitions must be positive")
        return replace(self, repetitions=int(r))


def repetitions_for(epsilon: float, k: float, delta: float) -> int:
    """Smallest integer ``r >= ln(2^k / epsilon) / (2 delta)`` (and ``r = 1`` when ``delta = 1``)."""
    if not 0 < epsilon < 1:
        raise PreconditionError("epsilon must lie in (0, 1)")
    if not 0 < delta <= 1:
        raise PreconditionError(f"normalized singular radius {delta:.3g} must lie in (0, 1]")
    if delta >= 1.0:
        return 1
    return max(1, _ceil((k * math.log(2) - math.log(epsilon)) / (2 * delta)))


def build_svd_gadget(u, epsilon: float, k: float) -> tuple[PostselectionGadget, GadgetBudget]:
    """SVD gadget with the largest singular value on ``|0^m>`` and the smallest on ``|0^{m-1}1>``."""
    u = as_operator(u, "U")
    m = num_qubits(u.shape[0])
    if m < 1:
        raise PreconditionError("gadget gate must act on at least one qubit")
    dec = svd(u)
    s = dec.singulars
    if s[0] == 0:
        raise PreconditionError("zero gate")
    delta = float(np.clip(1 - s[-1] / s[0], 0.0, 1.0))
    if delta <= 1e-12:
        raise PreconditionError("gate is proportional to a unitary (normalized singular radius 0)")
    d = u.shape[0]
    order = [0, d - 1] + list(range(1, d - 1))
    perm = np.eye(d)[:, order]  # perm[:, i] = e_{order[i]}
    left = dec.V @ perm
    right = dec.W @ perm
    core = np.diag(s[order]).astype(complex)
    r = repetitions_for(epsilon, k, delta)
    budget = GadgetBudget(epsilon=float(epsilon), k=float(k), delta=delta, r=r)
    gadget = PostselectionGadget(
        source=u,
        core=core,
        left_unitary=left,
        right_unitary=right,
        repetitions=r,
        ancilla_qubits=m - 1,
        target_qubit=m - 1,
        permutation=perm,
        budget=budget,
    )
    return gadget, budget


def svd_gadget_error_bound(a_sq: float, lambda1: float, lambdad: float, r: int) -> tuple[float, float]:
    """Exact two-level failure probability and its ``(1/|a|^2)(lambda_d/lambda_1)^{2r}`` bound."""
    if not 0 < a_sq <= 1:
        raise PreconditionError("a_sq must lie in (0, 1]")
    if lambda1 <= 0 or lambdad < 0 or lambdad > lambda1:
        raise PreconditionError("need lambda1 > 0 and 0 <= lambdad <= lambda1")
    ratio = (lambdad / lambda1) ** (2 * r)
    b_sq = 1.0 - a_sq
    exact = b_sq * ratio / (a_sq + b_sq * ratio)
    return exact, ratio / a_sq


# ---------------------------------------------------------------------------
# Diagonalization gadget


@dataclass(frozen=True)
class DiagonalizationGadget(PostselectionGadget):
    t: float = 0.0
    a_r: float = 1.0
    b_r: complex = 0.0
    G: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=complex))
    gap: float = 0.0


def complete_unitary(columns: Sequence[np.ndarray], d: int) -> np.ndarray:
    """Extend orthonormal ``columns`` to a unitary by Gram-Schmidt over the standard basis in index order."""
    cols = [np.asarray(c, dtype=complex) for c in columns]
    for i in range(d):
        if len(cols) == d:
            break
        v = np.zeros(d, dtype=complex)
        v[i] = 1.0
        for _ in range(2):
            for c in cols:
                v = v - np.vdot(c, v) * c
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            cols.append(v / nrm)
    return np.column_stack(cols)


def _round_up_sig(x: float, digits: int = 3) -> float:
    if x <= 0:
        return x
    q = 10.0 ** (math.floor(math.log10(x)) - digits + 1)
    return float(round(math.ceil(x / q - CEIL_SLACK) * q, 12))


def diag_gadget_time(gap: float, epsilon: float, k: float) -> float:
    """Smallest ``t >= ln(2^k / epsilon) / (2 gap)``, rounded up to three significant figures."""
    if gap <= 0:
        raise PreconditionError("decay-rate gap must be positive")
    if not 0 < epsilon < 1:
        raise PreconditionError("epsilon must lie in (0, 1)")
    return _round_up_sig((k * math.log(2) - math.log(epsilon)) / (2 * gap))


def build_diag_gadget(h, t: float | None = None, epsilon: float | None = None, k: float = 0.0) -> DiagonalizationGadget:
    """Gadget for ``U = exp(-iHt)`` from the biorthogonal eigenbasis of a diagonalizable ``H``.

    ``t`` is taken from ``epsilon`` and ``k`` when not given explicitly.
    """
    h = as_operator(h, "H")
    m = num_qubits(h.shape[0])
    d = h.shape[0]
    spec = biorthogonal_spectrum(h)
    rates = spec.decay_rates
    i1, id_ = int(np.argmin(rates)), int(np.argmax(rates))
    gap = float(rates[id_] - rates[i1])
    if gap <= 1e-12 * max(1.0, float(np.max(np.abs(spec.eigenvalues)))):
        raise PreconditionError("all eigenvalues have the same imaginary part; no decay gap")
    if t is None:
        if epsilon is None:
            raise ValueError("give either t or epsilon")
        t = diag_gadget_time(gap, epsilon, k)
    if t <= 0:
        raise PreconditionError("t must be positive")
    r1, rd = spec.rights[:, i1], spec.rights[:, id_]
    h1, hd = spec.eigenvalues[i1].real, spec.eigenvalues[id_].real
    b_r = complex(np.vdot(rd, r1))
    a_r = 1.0 / math.sqrt(1.0 - abs(b_r) ** 2)
    r1_perp = a_r * (r1 - b_r * rd)
    rd_perp = a_r * (rd - np.conj(b_r) * r1)
    w_hat = complete_unitary([np.exp(1j * h1 * t) * r1_perp, np.exp(1j * hd * t) * rd], d)
    v_hat = complete_unitary([r1, rd_perp], d)
    u = matrix_exp(-1j * t * h)
    core = dagger(v_hat) @ u @ w_hat
    phase = np.exp(1j * (h1 - hd) * t)
    g = np.array(
        [
            [-abs(b_r) ** 2 * phase, np.conj(b_r) / a_r],
            [-(b_r / a_r) * phase, 1 - abs(b_r) ** 2],
        ]
    )
    return DiagonalizationGadget(
        source=u,
        core=core,
        left_unitary=v_hat,
        right_unitary=w_hat,
        repetitions=1,
        ancilla_qubits=m - 1,
        target_qubit=m - 1,
        t=float(t),
        a_r=a_r,
        b_r=b_r,
        G=g,
        gap=gap,
    )


def diag_gadget_bound(a_sq: float, gap: float, t: float) -> float:
    """``(1/|a|^2) exp(-2 gap t)``."""
    return math.exp(-2 * gap * t) / a_sq


# ---------------------------------------------------------------------------
# Single-qubit PT gadget


def build_pt_gadget(g: float, gamma: float, epsilon: float) -> PostselectionGadget:
    """Gadget for ``H = g sigma_x - i gamma sigma_y`` evolved to ``t = pi / (2 omega)``.

    There ``U = -iH/omega`` and ``i sigma_x U = diag(lambda_+, lambda_-)``.
    """
    if not (g > 0 and gamma > 0):
        raise PreconditionError("need g > 0 and gamma > 0")
    if gamma >= g:
        raise BrokenPhaseError(f"gamma = {gamma} >= g = {g}: PT symmetry is broken")
    if not 0 < epsilon < 1:
        raise PreconditionError("epsilon must lie in (0, 1)")
    omega = math.sqrt(g * g - gamma * gamma)
    lam_p, lam_m = (g + gamma) / omega, (g - gamma) / omega
    h = pt_hamiltonian(g, gamma)
    u = matrix_exp(-1j * (math.pi / (2 * omega)) * h)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    left = -1j * sx  # left^dagger = i sigma_x
    core = dagger(left) @ u
    r = max(1, _ceil(-math.log(epsilon) / math.log(lam_p / lam_m)))
    budget = GadgetBudget(epsilon=float(epsilon), k=0.0, delta=1 - lam_m / lam_p, r=r)
    return PostselectionGadget(
        source=u,
        core=core,
        left_unitary=left,
        right_unitary=np.eye(2, dtype=complex),
        repetitions=r,
        ancilla_qubits=0,
        target_qubit=0,
        budget=budget,
    )


# ---------------------------------------------------------------------------
# Programs and verification


def gadget_steps(gadget: PostselectionGadget, qubits: Sequence[int] | None = None) -> list[Step]:
    """Circuit steps for ``gadget``; ``qubits`` lists ancillas first and the target last."""
    qubits = tuple(range(gadget.num_qubits)) if qubits is None else tuple(qubits)
    if len(qubits) != gadget.num_qubits:
        raise ValueError(f"gadget acts on {gadget.num_qubits} qubits, got {len(qubits)}")
    one = [
        unitary(gadget.right_unitary, qubits),
        nonunitary(gadget.source, qubits),
        unitary(dagger(gadget.left_unitary), qubits),
    ]
    return one * gadget.repetitions


def to_program(gadget: PostselectionGadget, measure_target: bool = False) -> CircuitProgram:
    steps = gadget_steps(gadget)
    if measure_target:
        steps.append(measure([gadget.target_qubit]))
    return CircuitProgram(gadget.num_qubits, steps)


def gadget_input(gadget: PostselectionGadget, a: complex, b: complex) -> PureState:
    """``|0^{m-1}> (a|0> + b|1>)``."""
    amps = np.zeros(2**gadget.num_qubits, dtype=complex)
    amps[0], amps[1] = a, b
    return PureState.from_amplitudes(amps)


def gadget_output(gadget: PostselectionGadget, a: complex, b: complex) -> PureState:
    if abs(abs(a) ** 2 + abs(b) ** 2 - 1) > 1e-9:
        raise PreconditionError("need |a|^2 + |b|^2 = 1")
    return run(to_program(gadget), gadget_input(gadget, a, b)).state


def ancilla_fidelity(gadget: PostselectionGadget, state: PureState) -> float:
    """Weight of the output on ``|0^{m-1}>`` for the ancilla register."""
    if gadget.ancilla_qubits == 0:
        return 1.0
    return float(np.sum(state.probabilities()[:2]))


def verify_gadget(gadget: PostselectionGadget, a: complex, b: complex) -> float:
    """Probability of the undesired target outcome after running the gadget.

    Also checks that the ancillas return to ``|0^{m-1}>``.
    """
    out = gadget_output(gadget, a, b)
    fid = ancilla_fidelity(gadget, out)
    if fid < 1 - 1e-10:
        raise NumericalError(f"ancillas left the |0> state (fidelity {fid:.3g})")
    p = out.probabilities()
    return float(np.sum(p[1::2]))
