"""Stabilizer simulation with forced (postselected) measurement outcomes.

Gate set is {H, S, CNOT}; X, Y, Z, SDG and CZ are accepted and decomposed
when a circuit is ingested. Record probabilities are exact powers of two.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NHPostError, PreconditionError, WellFormednessError

_LETTERS = {(0, 0): "I", (1, 0): "X", (1, 1): "Y", (0, 1): "Z"}
_BITS = {v: k for k, v in _LETTERS.items()}


class CircuitParseError(NHPostError, ValueError):
    """Malformed stabilizer circuit text."""


# ---------------------------------------------------------------------------
# Pauli strings


def _g(x1: int, z1: int, x2: int, z2: int) -> int:
    """Exponent of ``i`` picked up when multiplying single-qubit Paulis (x1,z1)(x2,z2)."""
    if x1 == 0 and z1 == 0:
        return 0
    if x1 == 1 and z1 == 1:
        return z2 - x2
    if x1 == 1 and z1 == 0:
        return z2 * (2 * x2 - 1)
    return x2 * (1 - 2 * z2)


@dataclass(frozen=True)
class PauliString:
    """``i^phase`` times a tensor product of I, X, Y, Z letters (qubit 0 first)."""

    phase: int
    x: tuple[int, ...]
    z: tuple[int, ...]

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        label = label.strip()
        phase = 0
        for prefix, p in (("+i", 1), ("-i", 3), ("i", 1), ("+", 0), ("-", 2)):
            if label.startswith(prefix) and len(label) > len(prefix) and label[len(prefix)] in "IXYZ":
                phase = p
                label = label[len(prefix):]
                break
        if not label or any(c not in "IXYZ" for c in label):
            raise ValueError(f"invalid Pauli label {label!r}")
        bits = [_BITS[c] for c in label]
        return cls(phase, tuple(b[0] for b in bits), tuple(b[1] for b in bits))

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(0, (0,) * n, (0,) * n)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def letters(self) -> str:
        return "".join(_LETTERS[(a, b)] for a, b in zip(self.x, self.z))

    @property
    def coefficient(self) -> complex:
        return 1j ** (self.phase % 4)

    def __str__(self) -> str:
        return ["+", "+i", "-", "-i"][self.phase % 4] + self.letters

    def __mul__(self, other: "PauliString") -> "PauliString":
        if self.n != other.n:
            raise ValueError("Pauli strings act on different numbers of qubits")
        ph = self.phase + other.phase + sum(_g(a, b, c, d) for a, b, c, d in zip(self.x, self.z, other.x, other.z))
        return PauliString(
            ph % 4,
            tuple(a ^ c for a, c in zip(self.x, other.x)),
            tuple(b ^ d for b, d in zip(self.z, other.z)),
        )

    def commutes_with(self, other: "PauliString") -> bool:
        s = sum(a * d + b * c for a, b, c, d in zip(self.x, self.z, other.x, other.z))
        return s % 2 == 0

    def matrix(self) -> np.ndarray:
        mats = {
            "I": np.eye(2),
            "X": np.array([[0, 1], [1, 0]]),
            "Y": np.array([[0, -1j], [1j, 0]]),
            "Z": np.diag([1, -1]),
        }
        out = np.array([[1.0 + 0j]])
        for c in self.letters:
            out = np.kron(out, mats[c])
        return self.coefficient * out

    def insert(self, position: int, letter: str) -> "PauliString":
        b = _BITS[letter]
        return PauliString(self.phase, self.x[:position] + (b[0],) + self.x[position:], self.z[:position] + (b[1],) + self.z[position:])

    def remove(self, position: int) -> "PauliString":
        return PauliString(self.phase, self.x[:position] + self.x[position + 1 :], self.z[:position] + self.z[position + 1 :])

    def conjugate(self, circuit: Iterable[tuple]) -> "PauliString":
        """``U P U^dagger`` for the Clifford unitary ``U`` of ``circuit`` (gates applied in order)."""
        x, z = list(self.x), list(self.z)
        phase = self.phase
        for g in circuit:
            op = g[0]
            if op == "H":
                q = g[1]
                phase += 2 * (x[q] & z[q])
                x[q], z[q] = z[q], x[q]
            elif op == "S":
                q = g[1]
                phase += 2 * (x[q] & z[q])
                z[q] ^= x[q]
            elif op == "CNOT":
                c, t = g[1], g[2]
                phase += 2 * (x[c] & z[t] & (x[t] ^ z[c] ^ 1))
                x[t] ^= x[c]
                z[c] ^= z[t]
            elif op in ("FORCE", "MEASURE"):
                raise PreconditionError("conjugation is defined for unitary Clifford circuits only")
            else:
                raise ValueError(f"unknown gate {op!r}")
        return PauliString(phase % 4, tuple(x), tuple(z))


# ---------------------------------------------------------------------------
# Circuits


_DECOMP = {
    "Z": lambda q: [("S", q), ("S", q)],
    "SDG": lambda q: [("S", q)] * 3,
    "X": lambda q: [("H", q), ("S", q), ("S", q), ("H", q)],
    "Y": lambda q: [("S", q), ("S", q), ("H", q), ("S", q), ("S", q), ("H", q)],
}


def normalize_circuit(steps: Iterable[Sequence]) -> list[tuple]:
    """Validate steps and decompose extra Cliffords into {H, S, CNOT}.

    ``Y`` is decomposed up to a global phase, which never affects stabilizer
    states or probabilities.
    """
    out: list[tuple] = []
    for s in steps:
        op = str(s[0]).upper()
        args = tuple(int(a) for a in s[1:])
        if op in ("H", "S", "MEASURE") and len(args) == 1:
            out.append((op,) + args)
        elif op in _DECOMP and len(args) == 1:
            out.extend(_DECOMP[op](args[0]))
        elif op == "CNOT" and len(args) == 2 and args[0] != args[1]:
            out.append(("CNOT",) + args)
        elif op == "CZ" and len(args) == 2 and args[0] != args[1]:
            c, t = args
            out.extend([("H", t), ("CNOT", c, t), ("H", t)])
        elif op == "FORCE" and len(args) == 2 and args[1] in (0, 1):
            out.append(("FORCE",) + args)
        else:
            raise ValueError(f"invalid step {tuple(s)!r}")
    return out


def circuit_width(steps: Iterable[tuple]) -> int:
    width = 0
    for s in steps:
        qubits = s[1:] if s[0] != "FORCE" else s[1:2]
        width = max([width] + [q + 1 for q in qubits])
    return width


_LINE = re.compile(r"^\s*([A-Za-z]+)((?:\s+-?\d+)*)\s*$")
_ARITY = {"H": 1, "S": 1, "X": 1, "Y": 1, "Z": 1, "SDG": 1, "MEASURE": 1, "CNOT": 2, "CZ": 2, "FORCE": 2}


def parse_circuit(text: str) -> list[tuple]:
    """Parse one gate per line: ``H q``, ``S q``, ``CNOT c t``, ``FORCE q b`` (plus ``MEASURE q``).

    Blank lines and ``#`` comments are ignored. Errors name the offending line.
    """
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            raise CircuitParseError(f"line {lineno}: cannot parse {raw.strip()!r}")
        op = m.group(1).upper()
        args = [int(a) for a in m.group(2).split()]
        if op not in _ARITY:
            raise CircuitParseError(f"line {lineno}: unknown gate {m.group(1)!r}")
        if len(args) != _ARITY[op]:
            raise CircuitParseError(f"line {lineno}: {op} takes {_ARITY[op]} argument(s), got {len(args)}")
        if any(a < 0 for a in (args if op != "FORCE" else args[:1])):
            raise CircuitParseError(f"line {lineno}: negative qubit index")
        if op == "FORCE" and args[1] not in (0, 1):
            raise CircuitParseError(f"line {lineno}: forced outcome must be 0 or 1")
        if op in ("CNOT", "CZ") and args[0] == args[1]:
            raise CircuitParseError(f"line {lineno}: control and target coincide")
        try:
            steps.extend(normalize_circuit([(op, *args)]))
        except ValueError as exc:
            raise CircuitParseError(f"line {lineno}: {exc}") from None
    return steps


# ---------------------------------------------------------------------------
# Tableau


class StabilizerTableau:
    """Destabilizer/stabilizer tableau for an ``n``-qubit stabilizer state.

    Rows ``0 .. n-1`` are destabilizers and ``n .. 2n-1`` stabilizers; ``r``
    holds sign bits. Mutable during a run.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("need at least one qubit")
        self.n = n
        self.x = np.zeros((2 * n + 1, n), dtype=np.uint8)
        self.z = np.zeros((2 * n + 1, n), dtype=np.uint8)
        self.r = np.zeros(2 * n + 1, dtype=np.uint8)
        for i in range(n):
            self.x[i, i] = 1
            self.z[n + i, i] = 1

    def copy(self) -> "StabilizerTableau":
        t = StabilizerTableau.__new__(StabilizerTableau)
        t.n, t.x, t.z, t.r = self.n, self.x.copy(), self.z.copy(), self.r.copy()
        return t

    def _check(self, *qubits: int) -> None:
        for q in qubits:
            if not 0 <= q < self.n:
                raise IndexError(f"qubit {q} out of range for {self.n} qubits")

    def h(self, q: int) -> None:
        self._check(q)
        self.r ^= self.x[:, q] & self.z[:, q]
        self.x[:, q], self.z[:, q] = self.z[:, q].copy(), self.x[:, q].copy()

    def s(self, q: int) -> None:
        self._check(q)
        self.r ^= self.x[:, q] & self.z[:, q]
        self.z[:, q] ^= self.x[:, q]

    def cnot(self, c: int, t: int) -> None:
        self._check(c, t)
        self.r ^= self.x[:, c] & self.z[:, t] & (self.x[:, t] ^ self.z[:, c] ^ 1)
        self.x[:, t] ^= self.x[:, c]
        self.z[:, c] ^= self.z[:, t]

    def _rowsum(self, h: int, i: int) -> None:
        total = 2 * int(self.r[h]) + 2 * int(self.r[i])
        for j in range(self.n):
            total += _g(int(self.x[i, j]), int(self.z[i, j]), int(self.x[h, j]), int(self.z[h, j]))
        self.r[h] = 1 if total % 4 == 2 else 0
        self.x[h] ^= self.x[i]
        self.z[h] ^= self.z[i]

    def is_random(self, q: int) -> bool:
        """Whether a Z measurement of ``q`` has a uniformly random outcome."""
        self._check(q)
        return bool(np.any(self.x[self.n : 2 * self.n, q]))

    def measure(self, q: int, forced: int | None = None, rng: np.random.Generator | None = None) -> tuple[int, int]:
        """Measure ``Z_q``; return ``(outcome, exponent)`` with probability ``2^-exponent``.

        A forced outcome that contradicts a determined result raises
        :class:`WellFormednessError`.
        """
        self._check(q)
        n = self.n
        rows = np.flatnonzero(self.x[n : 2 * n, q])
        if rows.size:
            p = n + int(rows[0])
            for i in range(2 * n):
                if i != p and self.x[i, q]:
                    self._rowsum(i, p)
            self.x[p - n], self.z[p - n], self.r[p - n] = self.x[p].copy(), self.z[p].copy(), self.r[p]
            self.x[p] = 0
            self.z[p] = 0
            self.z[p, q] = 1
            if forced is None:
                forced = int((rng or np.random.default_rng()).integers(2))
            self.r[p] = forced
            return int(forced), 1
        scratch = 2 * n
        self.x[scratch] = 0
        self.z[scratch] = 0
        self.r[scratch] = 0
        for i in range(n):
            if self.x[i, q]:
                self._rowsum(scratch, i + n)
        outcome = int(self.r[scratch])
        if forced is not None and forced != outcome:
            raise WellFormednessError(f"forced outcome {forced} on qubit {q} has probability zero")
        return outcome, 0

    def stabilizers(self) -> list[PauliString]:
        n = self.n
        return [
            PauliString(2 * int(self.r[i]), tuple(int(v) for v in self.x[i]), tuple(int(v) for v in self.z[i]))
            for i in range(n, 2 * n)
        ]

    def destabilizers(self) -> list[PauliString]:
        return [
            PauliString(2 * int(self.r[i]), tuple(int(v) for v in self.x[i]), tuple(int(v) for v in self.z[i]))
            for i in range(self.n)
        ]

    def check_invariants(self) -> bool:
        """Stabilizers commute, each destabilizer anticommutes only with its partner, rank is ``n``."""
        st, de = self.stabilizers(), self.destabilizers()
        for i, a in enumerate(st):
            for j, b in enumerate(st):
                if not a.commutes_with(b):
                    return False
            for j, d in enumerate(de):
                if a.commutes_with(d) != (i != j):
                    return False
        m = np.concatenate([self.x[self.n : 2 * self.n], self.z[self.n : 2 * self.n]], axis=1).astype(int)
        return _gf2_rank(m) == self.n

    def statevector(self) -> np.ndarray:
        """Dense state (global phase fixed so the first nonzero amplitude is positive); small ``n`` only."""
        if self.n > 12:
            raise PreconditionError("statevector export is limited to 12 qubits")
        proj = np.eye(2**self.n, dtype=complex)
        for p in self.stabilizers():
            proj = proj @ (np.eye(2**self.n) + p.matrix()) / 2
        col = proj[:, int(np.argmax(np.linalg.norm(proj, axis=0)))]
        col = col / np.linalg.norm(col)
        i = int(np.flatnonzero(np.abs(col) > 1e-12)[0])
        return col * (abs(col[i]) / col[i])


def _gf2_rank(m: np.ndarray) -> int:
    m = m.copy() % 2
    rank = 0
    rows, cols = m.shape
    for c in range(cols):
        pivot = next((r for r in range(rank, rows) if m[r, c]), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(rows):
            if r != rank and m[r, c]:
                m[r] ^= m[rank]
        rank += 1
    return rank


@dataclass
class CliffordRun:
    tableau: StabilizerTableau
    exponent: int  # record probability is 2^-exponent
    outcomes: list  # (qubit, bit) per measurement, in order

    @property
    def record_probability(self) -> Fraction:
        return Fraction(1, 2**self.exponent)


def run_postselected_clifford(steps: Iterable[Sequence], n: int | None = None, rng_seed=None) -> CliffordRun:
    """Run a Clifford circuit with forced and sampled measurements."""
    steps = normalize_circuit(steps)
    n = circuit_width(steps) if n is None else n
    if n < circuit_width(steps):
        raise ValueError(f"circuit needs {circuit_width(steps)} qubits, got {n}")
    rng = np.random.default_rng(rng_seed)
    tab = StabilizerTableau(n)
    exponent = 0
    outcomes = []
    for s in steps:
        op = s[0]
        if op == "H":
            tab.h(s[1])
        elif op == "S":
            tab.s(s[1])
        elif op == "CNOT":
            tab.cnot(s[1], s[2])
        else:
            forced = s[2] if op == "FORCE" else None
            bit, e = tab.measure(s[1], forced=forced, rng=rng)
            exponent += e
            outcomes.append((s[1], bit))
    return CliffordRun(tab, exponent, outcomes)


def postselected_marginal(
    steps: Iterable[Sequence],
    query_bits: Mapping[int, int],
    forced_record: Mapping[int, int] | None = None,
    n: int | None = None,
) -> Fraction:
    """Exact ``P(query | forced outcomes)`` for a circuit whose only measurements are forced.

    ``forced_record`` adds end-of-circuit forced outcomes on top of the
    ``FORCE`` steps already in the circuit.
    """
    steps = normalize_circuit(steps)
    if any(s[0] == "MEASURE" for s in steps):
        raise PreconditionError("postselected_marginal needs a circuit without sampled measurements")
    tail = [("FORCE", q, b) for q, b in (forced_record or {}).items()]
    try:
        run = run_postselected_clifford(steps + tail, n=n)
    except WellFormednessError as exc:
        raise PreconditionError(f"conditioning record has probability zero: {exc}") from None
    tab = run.tableau
    exponent = 0
    for q, b in query_bits.items():
        try:
            _, e = tab.measure(q, forced=int(b))
        except WellFormednessError:
            return Fraction(0)
        exponent += e
    return Fraction(1, 2**exponent)


def effective_conjugation(steps: Iterable[Sequence], meter: int, sigma: PauliString) -> list[tuple[Fraction, PauliString]]:
    """``C sigma C^dagger`` for ``C = <0|U|0>_meter`` as at most two weighted Pauli strings.

    Computes ``(<0|sigma_1|0> + <0|sigma_2|0>) / 2`` with ``sigma_1 = U (sigma (x) I) U^dagger``
    and ``sigma_2 = U (sigma (x) Z) U^dagger``; terms with meter letter X or Y vanish.
    Equal strings are combined and zero totals dropped.
    """
    steps = normalize_circuit(steps)
    terms: dict[tuple, Fraction] = {}
    for letter in ("I", "Z"):
        full = sigma.insert(meter, letter).conjugate(steps)
        if full.x[meter]:
            continue
        reduced = full.remove(meter)
        base = PauliString(0, reduced.x, reduced.z)
        sign = reduced.phase
        key = (base.x, base.z)
        coeff = terms.get(key, (Fraction(0), Fraction(0)))
        # store real and imaginary parts of the accumulated coefficient
        re, im = coeff
        c = [(1, 0), (0, 1), (-1, 0), (0, -1)][sign % 4]
        terms[key] = (re + Fraction(c[0], 2), im + Fraction(c[1], 2))
    out = []
    for (x, z), (re, im) in terms.items():
        if re == 0 and im == 0:
            continue
        if im == 0:
            phase, mag = (0, re) if re > 0 else (2, -re)
        elif re == 0:
            phase, mag = (1, im) if im > 0 else (3, -im)
        else:
            raise AssertionError("Pauli coefficients are always real or imaginary")
        out.append((mag, PauliString(phase, x, z)))
    return out


def effective_conjugation_matrix(terms: Sequence[tuple[Fraction, PauliString]], n: int) -> np.ndarray:
    if not terms:
        return np.zeros((2**n, 2**n), dtype=complex)
    return sum(float(c) * p.matrix() for c, p in terms)


def dense_unitary(steps: Iterable[Sequence], n: int) -> np.ndarray:
    """Dense matrix of a unitary Clifford circuit (qubit 0 most significant)."""
    from .linalg import embed

    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    s = np.diag([1, 1j])
    cx = np.eye(4)[[0, 1, 3, 2]].astype(complex)
    u = np.eye(2**n, dtype=complex)
    for g in normalize_circuit(steps):
        if g[0] == "H":
            u = embed(h, [g[1]], n) @ u
        elif g[0] == "S":
            u = embed(s, [g[1]], n) @ u
        elif g[0] == "CNOT":
            u = embed(cx, [g[1], g[2]], n) @ u
        else:
            raise PreconditionError("dense_unitary accepts unitary gates only")
    return u


def to_dense_program(steps: Iterable[Sequence], n: int | None = None):
    """The same circuit as a dense state-vector program (``FORCE`` becomes a postselection)."""
    from .circuit import CircuitProgram, measure, postselect, unitary

    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    s = np.diag([1, 1j])
    cx = np.eye(4)[[0, 1, 3, 2]].astype(complex)
    steps = normalize_circuit(steps)
    n = circuit_width(steps) if n is None else n
    out = []
    for g in steps:
        if g[0] == "H":
            out.append(unitary(h, [g[1]]))
        elif g[0] == "S":
            out.append(unitary(s, [g[1]]))
        elif g[0] == "CNOT":
            out.append(unitary(cx, [g[1], g[2]]))
        elif g[0] == "FORCE":
            out.append(postselect([g[1]], g[2]))
        else:
            out.append(measure([g[1]]))
    return CircuitProgram(n, out)
