"""Dense statevector and density-matrix simulation with renormalization and postselection.

Qubit 0 is the most significant bit of the amplitude index. Pure states are
kept in a canonical global phase: the first nonzero amplitude is real and
positive after every normalized step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DimensionError, NumericalError, PreconditionError, WellFormednessError
from .hamiltonian import split_parts
from .linalg import as_operator, dagger, decode_matrix, encode_matrix, matrix_exp, num_qubits

#: a branch whose norm is below this fraction of the operator norm counts as zero
ZERO_BRANCH_RTOL = 1e-14
MAX_QUBITS = 12


def _phase_fix(amps: np.ndarray) -> np.ndarray:
    mags = np.abs(amps)
    top = mags.max() if mags.size else 0.0
    if top == 0:
        return amps
    i = int(np.flatnonzero(mags > 1e-10 * top)[0])
    return amps * (mags[i] / amps[i])


def _bits(outcome, k: int) -> tuple[int, ...]:
    """Normalize an outcome given as int, bit string or bit sequence to a bit tuple."""
    if isinstance(outcome, (int, np.integer)):
        if not 0 <= outcome < 2**k:
            raise ValueError(f"outcome {outcome} out of range for {k} qubit(s)")
        return tuple((int(outcome) >> (k - 1 - i)) & 1 for i in range(k))
    if isinstance(outcome, str):
        outcome = [int(c) for c in outcome]
    bits = tuple(int(b) for b in outcome)
    if len(bits) != k or any(b not in (0, 1) for b in bits):
        raise ValueError(f"outcome {outcome!r} is not a {k}-bit string")
    return bits


def _check_targets(targets, n: int) -> tuple[int, ...]:
    t = tuple(int(q) for q in targets)
    if not t:
        raise DimensionError("targets must be non-empty")
    if len(set(t)) != len(t):
        raise DimensionError(f"targets {t} are not distinct")
    if any(q < 0 or q >= n for q in t):
        raise DimensionError(f"targets {t} out of range for {n} qubits")
    return t


def _apply_tensor(tensor: np.ndarray, op: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    k = len(axes)
    opt = op.reshape([2] * (2 * k))
    out = np.tensordot(opt, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


# ---------------------------------------------------------------------------
# States


@dataclass(frozen=True)
class PureState:
    num_qubits: int
    amplitudes: np.ndarray

    @classmethod
    def from_amplitudes(cls, amps, normalize: bool = True) -> "PureState":
        a = np.asarray(amps, dtype=complex).ravel()
        n = num_qubits(a.size)
        nrm = np.linalg.norm(a)
        if nrm == 0:
            raise WellFormednessError("zero state vector")
        if normalize:
            a = a / nrm
        return cls(n, _phase_fix(a))

    @classmethod
    def basis(cls, bits, n: int | None = None) -> "PureState":
        if isinstance(bits, (int, np.integer)):
            if n is None:
                raise ValueError("n is required for an integer basis label")
            index = int(bits)
        else:
            b = _bits(bits, len(bits))
            n = len(b)
            index = int("".join(map(str, b)), 2) if b else 0
        a = np.zeros(2**n, dtype=complex)
        a[index] = 1.0
        return cls(n, a)

    @classmethod
    def zeros(cls, n: int) -> "PureState":
        return cls.basis(0, n)

    def density(self) -> "DensityState":
        return DensityState(self.num_qubits, np.outer(self.amplitudes, self.amplitudes.conj()))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def tensor(self, other: "PureState") -> "PureState":
        return PureState(self.num_qubits + other.num_qubits, np.kron(self.amplitudes, other.amplitudes))

    # backend protocol used by run()/enumerate_branches()
    def _apply_raw(self, op, targets):
        t = _apply_tensor(self.amplitudes.reshape([2] * self.num_qubits), op, targets)
        return PureState(self.num_qubits, t.ravel())

    def _weight(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def _normalized(self) -> "PureState":
        return PureState(self.num_qubits, _phase_fix(self.amplitudes / np.sqrt(self._weight())))

    def _outcome_probs(self, targets) -> np.ndarray:
        p = self.probabilities().reshape([2] * self.num_qubits)
        rest = tuple(q for q in range(self.num_qubits) if q not in targets)
        p = p.sum(axis=rest) if rest else p
        # remaining axes are in increasing qubit order; put them in target order
        ranks = np.argsort(np.argsort(targets))
        return np.transpose(p, [int(r) for r in ranks]).ravel()

    def _project(self, targets, bits) -> "PureState":
        t = self.amplitudes.reshape([2] * self.num_qubits).copy()
        for q, b in zip(targets, bits):
            idx = [slice(None)] * self.num_qubits
            idx[q] = 1 - b
            t[tuple(idx)] = 0
        return PureState(self.num_qubits, t.ravel())


@dataclass(frozen=True)
class DensityState:
    num_qubits: int
    matrix: np.ndarray

    @classmethod
    def from_matrix(cls, m, normalize: bool = True) -> "DensityState":
        m = as_operator(m, "rho")
        n = num_qubits(m.shape[0])
        if normalize:
            tr = np.trace(m).real
            if tr <= 0:
                raise WellFormednessError("density matrix has nonpositive trace")
            m = m / tr
        return cls(n, m)

    @classmethod
    def maximally_mixed(cls, n: int) -> "DensityState":
        return cls(n, np.eye(2**n, dtype=complex) / 2**n)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def _apply_raw(self, op, targets):
        n = self.num_qubits
        t = self.matrix.reshape([2] * (2 * n))
        t = _apply_tensor(t, op, targets)
        t = _apply_tensor(t, op.conj(), [n + q for q in targets])
        return DensityState(n, t.reshape(2**n, 2**n))

    def _weight(self) -> float:
        return float(np.trace(self.matrix).real)

    def _normalized(self) -> "DensityState":
        m = self.matrix / self._weight()
        return DensityState(self.num_qubits, (m + dagger(m)) / 2)

    def _outcome_probs(self, targets) -> np.ndarray:
        diag = np.clip(np.real(np.diag(self.matrix)), 0, None)
        return PureState(self.num_qubits, np.sqrt(diag).astype(complex))._outcome_probs(targets)

    def _project(self, targets, bits) -> "DensityState":
        n = self.num_qubits
        mask = np.ones([2] * n, dtype=bool)
        for q, b in zip(targets, bits):
            idx = [slice(None)] * n
            idx[q] = 1 - b
            mask[tuple(idx)] = False
        keep = mask.ravel()
        m = self.matrix * np.outer(keep, keep)
        return DensityState(n, m)


State = Union[PureState, DensityState]


def _well_formed(raw_weight: float, prior_weight: float, op: np.ndarray) -> bool:
    scale = np.linalg.norm(op, 2) ** 2 * prior_weight
    return raw_weight > (ZERO_BRANCH_RTOL**2) * scale and raw_weight > 0


def apply_normalized(state: PureState, op, targets) -> PureState:
    """Apply ``op`` on ``targets`` and renormalize.

    Raises :class:`WellFormednessError` when the branch has zero norm.
    """
    op = as_operator(op, "op")
    targets = _check_targets(targets, state.num_qubits)
    if op.shape[0] != 2 ** len(targets):
        raise DimensionError(f"operator of dimension {op.shape[0]} cannot act on {len(targets)} qubit(s)")
    raw = state._apply_raw(op, targets)
    if not _well_formed(raw._weight(), state._weight(), op):
        raise WellFormednessError("renormalization of a zero-norm branch")
    return raw._normalized()


def apply_normalized_density(rho: DensityState, op, targets) -> tuple[DensityState, float]:
    """Return ``op rho op^dagger / Tr[...]`` and the pre-normalization trace."""
    op = as_operator(op, "op")
    targets = _check_targets(targets, rho.num_qubits)
    if op.shape[0] != 2 ** len(targets):
        raise DimensionError(f"operator of dimension {op.shape[0]} cannot act on {len(targets)} qubit(s)")
    raw = rho._apply_raw(op, targets)
    w = raw._weight()
    if not _well_formed(w, rho._weight(), op):
        raise WellFormednessError("renormalization of a zero-trace branch")
    return raw._normalized(), w


# ---------------------------------------------------------------------------
# Programs


@dataclass(frozen=True)
class ApplyUnitary:
    op: np.ndarray
    targets: tuple[int, ...]
    tag = "unitary"


@dataclass(frozen=True)
class ApplyNonUnitary:
    """Apply an arbitrary operator and renormalize."""

    op: np.ndarray
    targets: tuple[int, ...]
    tag = "nonunitary"


@dataclass(frozen=True)
class Measure:
    targets: tuple[int, ...]
    tag = "measure"


@dataclass(frozen=True)
class Postselect:
    targets: tuple[int, ...]
    outcome: tuple[int, ...]
    tag = "postselect"


Step = Union[ApplyUnitary, ApplyNonUnitary, Measure, Postselect]


def unitary(op, targets) -> ApplyUnitary:
    return ApplyUnitary(np.asarray(op, dtype=complex), tuple(targets))


def nonunitary(op, targets) -> ApplyNonUnitary:
    return ApplyNonUnitary(np.asarray(op, dtype=complex), tuple(targets))


def measure(targets) -> Measure:
    return Measure(tuple(targets))


def postselect(targets, outcome) -> Postselect:
    targets = tuple(targets)
    return Postselect(targets, _bits(outcome, len(targets)))


@dataclass(frozen=True)
class CircuitProgram:
    num_qubits: int
    steps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise DimensionError(f"num_qubits must be in [1, {MAX_QUBITS}]")
        object.__setattr__(self, "steps", tuple(self.steps))
        for i, step in enumerate(self.steps):
            try:
                t = _check_targets(step.targets, self.num_qubits)
            except DimensionError as exc:
                raise DimensionError(f"step {i}: {exc}") from None
            if isinstance(step, (ApplyUnitary, ApplyNonUnitary)):
                op = as_operator(step.op, f"step {i} operator")
                if op.shape[0] != 2 ** len(t):
                    raise DimensionError(f"step {i}: operator dimension {op.shape[0]} does not match {len(t)} target(s)")
            elif isinstance(step, Postselect):
                _bits(step.outcome, len(t))
            elif not isinstance(step, Measure):
                raise TypeError(f"step {i}: unknown step type {type(step).__name__}")

    def then(self, *steps: Step) -> "CircuitProgram":
        return CircuitProgram(self.num_qubits, self.steps + tuple(steps))

    # JSON -----------------------------------------------------------------

    def to_dict(self) -> dict:
        out = []
        for s in self.steps:
            d: dict = {"type": s.tag, "targets": list(s.targets)}
            if isinstance(s, (ApplyUnitary, ApplyNonUnitary)):
                d["op"] = encode_matrix(s.op)
            if isinstance(s, Postselect):
                d["outcome"] = list(s.outcome)
            out.append(d)
        return {"num_qubits": self.num_qubits, "steps": out}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CircuitProgram":
        steps: list[Step] = []
        for i, d in enumerate(data["steps"]):
            tag = d.get("type")
            targets = tuple(d["targets"])
            if tag == "unitary":
                steps.append(ApplyUnitary(decode_matrix(d["op"]), targets))
            elif tag == "nonunitary":
                steps.append(ApplyNonUnitary(decode_matrix(d["op"]), targets))
            elif tag == "measure":
                steps.append(Measure(targets))
            elif tag == "postselect":
                steps.append(Postselect(targets, _bits(d["outcome"], len(targets))))
            else:
                raise ValueError(f"step {i}: unknown step type {tag!r}")
        return cls(int(data["num_qubits"]), tuple(steps))

    @classmethod
    def from_json(cls, text: str) -> "CircuitProgram":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RunResult:
    state: State
    record: tuple  # ((step index, outcome bits), ...) for measure and postselect steps
    record_probability: float
    nonunitary_weights: tuple = ()

    def outcome(self, step_index: int) -> tuple[int, ...]:
        for i, bits in self.record:
            if i == step_index:
                return bits
        raise KeyError(step_index)


def _check_initial(program: CircuitProgram, initial: State) -> None:
    if initial.num_qubits != program.num_qubits:
        raise DimensionError(
            f"initial state has {initial.num_qubits} qubits, program expects {program.num_qubits}"
        )


def _evolve(state: State, step: Step, index: int) -> tuple[State, float]:
    """Apply a unitary or nonunitary step; return the normalized state and raw weight."""
    raw = state._apply_raw(np.asarray(step.op, dtype=complex), step.targets)
    w = raw._weight()
    if isinstance(step, ApplyNonUnitary):
        if not _well_formed(w, 1.0, step.op):
            raise WellFormednessError(f"step {index}: renormalization of a zero-norm branch")
        return raw._normalized(), w
    return raw._normalized(), w


def run(program: CircuitProgram, initial: State, rng_seed=None) -> RunResult:
    """Execute ``program`` once, sampling every ``Measure`` step.

    ``record_probability`` is the product of Born weights of measured and
    postselected outcomes; renormalization weights of nonunitary steps are
    reported separately.
    """
    _check_initial(program, initial)
    rng = np.random.default_rng(rng_seed)
    state = initial
    record = []
    prob = 1.0
    nu_weights = []
    for i, step in enumerate(program.steps):
        if isinstance(step, (ApplyUnitary, ApplyNonUnitary)):
            state, w = _evolve(state, step, i)
            if isinstance(step, ApplyNonUnitary):
                nu_weights.append(w)
        elif isinstance(step, Measure):
            p = state._outcome_probs(step.targets)
            p = p / p.sum()
            idx = int(rng.choice(p.size, p=p))
            bits = _bits(idx, len(step.targets))
            state = state._project(step.targets, bits)._normalized()
            prob *= float(p[idx])
            record.append((i, bits))
        else:
            p = state._outcome_probs(step.targets)
            idx = int("".join(map(str, step.outcome)), 2)
            pk = float(p[idx] / p.sum())
            if pk <= ZERO_BRANCH_RTOL**2:
                raise WellFormednessError(f"step {i}: postselected outcome {step.outcome} has probability zero")
            state = state._project(step.targets, step.outcome)._normalized()
            prob *= pk
            record.append((i, step.outcome))
    return RunResult(state=state, record=tuple(record), record_probability=prob, nonunitary_weights=tuple(nu_weights))


@dataclass(frozen=True)
class Branch:
    record: tuple
    probability: float
    state: State


def enumerate_branches(program: CircuitProgram, initial: State, min_probability: float = 0.0) -> list[Branch]:
    """All measurement branches with their record probabilities.

    Branches with probability at most ``min_probability`` (and exactly-zero
    branches) are dropped. A nonunitary step that annihilates a branch raises
    :class:`WellFormednessError`.
    """
    _check_initial(program, initial)
    branches = [Branch((), 1.0, initial)]
    for i, step in enumerate(program.steps):
        nxt = []
        for br in branches:
            if isinstance(step, (ApplyUnitary, ApplyNonUnitary)):
                st, _ = _evolve(br.state, step, i)
                nxt.append(Branch(br.record, br.probability, st))
                continue
            p = br.state._outcome_probs(step.targets)
            p = p / p.sum()
            choices = range(p.size) if isinstance(step, Measure) else [int("".join(map(str, step.outcome)), 2)]
            for idx in choices:
                pk = br.probability * float(p[idx])
                if p[idx] <= ZERO_BRANCH_RTOL**2 or pk <= min_probability:
                    continue
                bits = _bits(idx, len(step.targets))
                st = br.state._project(step.targets, bits)._normalized()
                nxt.append(Branch(br.record + ((i, bits),), pk, st))
        if not nxt and isinstance(step, Postselect):
            raise WellFormednessError(f"step {i}: postselected outcome {step.outcome} has probability zero")
        branches = nxt
    return branches


def _marginal(state: State, query: Mapping[int, int]) -> float:
    if not query:
        return 1.0
    targets = tuple(query)
    p = state._outcome_probs(targets)
    p = p / p.sum()
    idx = int("".join(str(int(query[q])) for q in targets), 2)
    return float(p[idx])


def conditional_probability(
    program: CircuitProgram,
    initial: State,
    outcome_query: Mapping[int, int],
    given_record: Mapping[int, Iterable[int] | int] | None = None,
) -> float:
    """Exact ``P(x | s)`` by summing branch weights.

    ``outcome_query`` maps qubit index to bit in the final computational-basis
    readout; ``given_record`` maps measure-step index to the required outcome.
    Postselect steps are always part of the conditioning event.
    """
    given = {}
    for k, v in (given_record or {}).items():
        step = program.steps[k]
        if not isinstance(step, (Measure, Postselect)):
            raise ValueError(f"step {k} is not a measurement")
        given[k] = _bits(v, len(step.targets))
    for q in outcome_query:
        if not 0 <= q < program.num_qubits:
            raise DimensionError(f"query qubit {q} out of range")
    try:
        branches = enumerate_branches(program, initial)
    except WellFormednessError as exc:
        raise PreconditionError(f"conditioning event has probability zero: {exc}") from None
    num = den = 0.0
    for br in branches:
        rec = dict(br.record)
        if all(rec.get(k) == v for k, v in given.items()):
            den += br.probability
            num += br.probability * _marginal(br.state, outcome_query)
    if den <= 0:
        raise PreconditionError("conditioning event has probability zero")
    return num / den


# ---------------------------------------------------------------------------
# Continuous normalized evolution


def _nonlinear_rhs(h: np.ndarray, rho: np.ndarray) -> np.ndarray:
    hd = dagger(h)
    return -1j * (h @ rho - rho @ hd) - 1j * rho * np.trace(rho @ (hd - h))


def integrate_nonlinear_eom(h, rho0, t: float, dt: float) -> DensityState:
    """Integrate the trace-normalized quadratic equation of motion with RK4.

    The state is renormalized after each step; a per-step trace drift above
    ``1e-6`` is reported as a :class:`NumericalError`.
    """
    h = as_operator(h, "H")
    rho = rho0.matrix if isinstance(rho0, DensityState) else as_operator(rho0, "rho0")
    if rho.shape != h.shape:
        raise DimensionError("rho0 and H must have the same shape")
    if not (0 < dt <= t or t == 0):
        raise PreconditionError("need 0 < dt <= t")
    if t == 0:
        return DensityState.from_matrix(rho)
    if np.linalg.norm(h, 2) * dt > 0.1 + 1e-12:
        raise PreconditionError(f"||H|| dt = {np.linalg.norm(h, 2) * dt:.3g} exceeds 0.1; reduce dt")
    nsteps = int(np.ceil(t / dt - 1e-9))
    step = t / nsteps
    rho = rho / np.trace(rho).real
    for _ in range(nsteps):
        k1 = _nonlinear_rhs(h, rho)
        k2 = _nonlinear_rhs(h, rho + step / 2 * k1)
        k3 = _nonlinear_rhs(h, rho + step / 2 * k2)
        k4 = _nonlinear_rhs(h, rho + step * k3)
        rho = rho + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tr = np.trace(rho)
        if abs(tr - 1) > 1e-6 or not np.all(np.isfinite(rho)):
            raise NumericalError(f"trace drift {abs(tr - 1):.3g} in one step; use a smaller dt")
        rho = rho / tr.real
        rho = (rho + dagger(rho)) / 2
    return DensityState(num_qubits(rho.shape[0]), rho)


def normalized_evolution(h, rho0, t: float) -> DensityState:
    """Exact ``U rho U^dagger / Tr[...]`` with ``U = exp(-i H t)``."""
    h = as_operator(h, "H")
    rho = rho0.matrix if isinstance(rho0, DensityState) else as_operator(rho0, "rho0")
    u = matrix_exp(-1j * t * h)
    out = u @ rho @ dagger(u)
    tr = np.trace(out).real
    if tr <= 0:
        raise WellFormednessError("evolved state has zero trace")
    out = out / tr
    return DensityState(num_qubits(out.shape[0]), (out + dagger(out)) / 2)


def trace_decay_rate(h, rho) -> float:
    """``d/dt Tr[rho_t]`` at ``t = 0`` for the unnormalized no-jump map: ``-2 Tr[Gamma rho]``."""
    gamma = split_parts(h).Gamma
    m = rho.matrix if isinstance(rho, DensityState) else np.asarray(rho, dtype=complex)
    return float(-2 * np.real(np.trace(gamma @ m)))
