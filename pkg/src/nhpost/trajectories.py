"""Trotterized system-meter realization of quantum trajectories.

The system ``A`` couples to a ``d_B``-level meter ``B`` through

    H = sum_k H_k (x) |k><k|  +  delta^{-1/2} sum_{j != k} L_jk (x) |j><k|

and each timestep applies ``exp(-i H delta)`` with the meter prepared in a
fixed level, then reads the meter out. Conditioning on the outcome gives the
no-jump and jump Kraus maps; tracing it out gives a Lindblad step.
Matrices on ``A (x) B`` use the system as the most significant factor.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .circuit import DensityState
from .errors import DimensionError, PreconditionError
from .linalg import as_operator, dagger, decode_matrix, embed, encode_matrix, is_hermitian, matrix_exp, num_qubits

#: records with weight below this are dropped in enumeration mode
PRUNE_WEIGHT = 1e-14
#: errors below this are indistinguishable from rounding in ``estimate_order``
ERROR_FLOOR = 1e-13

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|
SIGMA_PLUS = SIGMA_MINUS.T.copy()  # |1><0|


@dataclass(frozen=True)
class TrajectoryModel:
    """System Hamiltonians ``H_k`` per meter level and couplings ``L_jk`` (``j != k``).

    ``jumps`` maps ``(j, k)`` to ``L_jk``; missing partners are filled with
    ``L_kj = L_jk^dagger`` and inconsistent pairs are rejected.
    """

    meter_levels: int
    system_hamiltonians: tuple
    jumps: Mapping = field(default_factory=dict)
    delta: float = 1e-3
    meter_init: int = 0
    local_terms: tuple = ()  # (site, meter qubit, L) for locality-preserving models

    def __post_init__(self):
        if self.meter_levels < 2:
            raise DimensionError("meter needs at least two levels")
        if not self.delta > 0:
            raise PreconditionError("delta must be positive")
        if not 0 <= self.meter_init < self.meter_levels:
            raise DimensionError(f"meter_init {self.meter_init} out of range")
        hs = tuple(as_operator(h, f"H_{k}") for k, h in enumerate(self.system_hamiltonians))
        if len(hs) == 1:
            hs = hs * self.meter_levels
        if len(hs) != self.meter_levels:
            raise DimensionError(f"need {self.meter_levels} system Hamiltonians, got {len(hs)}")
        d = hs[0].shape[0]
        num_qubits(d)
        for k, h in enumerate(hs):
            if h.shape != (d, d):
                raise DimensionError(f"H_{k} has shape {h.shape}, expected {(d, d)}")
            if not is_hermitian(h, atol=1e-12):
                raise PreconditionError(f"H_{k} is not Hermitian")
        jumps: dict = {}
        for (j, k), op in dict(self.jumps).items():
            j, k = int(j), int(k)
            if j == k or not (0 <= j < self.meter_levels and 0 <= k < self.meter_levels):
                raise DimensionError(f"invalid jump levels ({j}, {k})")
            op = as_operator(op, f"L_{j}{k}")
            if op.shape != (d, d):
                raise DimensionError(f"L_{j}{k} has shape {op.shape}, expected {(d, d)}")
            jumps[(j, k)] = op
        for (j, k), op in list(jumps.items()):
            partner = jumps.get((k, j))
            if partner is None:
                jumps[(k, j)] = dagger(op)
            elif np.max(np.abs(partner - dagger(op))) > 1e-12 * max(1.0, np.max(np.abs(op))):
                raise PreconditionError(f"L_{k}{j} must equal L_{j}{k}^dagger")
        object.__setattr__(self, "system_hamiltonians", hs)
        object.__setattr__(self, "jumps", dict(sorted(jumps.items())))

    @property
    def system_dim(self) -> int:
        return self.system_hamiltonians[0].shape[0]

    def with_delta(self, delta: float) -> "TrajectoryModel":
        return replace(self, delta=float(delta))

    # JSON ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "meter_levels": self.meter_levels,
            "hamiltonians": [encode_matrix(h) for h in self.system_hamiltonians],
            "jumps": [{"j": j, "k": k, "op": encode_matrix(op)} for (j, k), op in self.jumps.items() if j > k],
            "delta": self.delta,
            "meter_init": self.meter_init,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrajectoryModel":
        return cls(
            meter_levels=int(data["meter_levels"]),
            system_hamiltonians=tuple(decode_matrix(h) for h in data["hamiltonians"]),
            jumps={(int(e["j"]), int(e["k"])): decode_matrix(e["op"]) for e in data.get("jumps", [])},
            delta=float(data["delta"]),
            meter_init=int(data.get("meter_init", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "TrajectoryModel":
        return cls.from_dict(json.loads(text))


def _level_projector(j: int, k: int, d: int) -> np.ndarray:
    m = np.zeros((d, d), dtype=complex)
    m[j, k] = 1.0
    return m


def system_part(model: TrajectoryModel) -> np.ndarray:
    """``H_A = sum_k H_k (x) |k><k|``."""
    dB = model.meter_levels
    return sum(np.kron(h, _level_projector(k, k, dB)) for k, h in enumerate(model.system_hamiltonians))


def coupling_part(model: TrajectoryModel) -> np.ndarray:
    """``H_AB = sum_{j != k} L_jk (x) |j><k|`` (without the ``delta^{-1/2}`` factor)."""
    dA, dB = model.system_dim, model.meter_levels
    out = np.zeros((dA * dB, dA * dB), dtype=complex)
    for (j, k), op in model.jumps.items():
        out += np.kron(op, _level_projector(j, k, dB))
    return out


def assemble(model: TrajectoryModel) -> np.ndarray:
    """Full system-meter Hamiltonian ``H_A + H_AB / sqrt(delta)``."""
    h = system_part(model) + coupling_part(model) / math.sqrt(model.delta)
    if not is_hermitian(h, atol=1e-12):
        raise PreconditionError("assembled Hamiltonian is not Hermitian")
    return (h + dagger(h)) / 2


def meter_block(op: np.ndarray, k: int, j: int, dA: int, dB: int) -> np.ndarray:
    """``<k|_B op |j>_B`` as a system operator."""
    return np.asarray(op).reshape(dA, dB, dA, dB)[:, k, :, j]


def step_unitary(model: TrajectoryModel) -> np.ndarray:
    return matrix_exp(-1j * model.delta * assemble(model))


def kraus_operators(model: TrajectoryModel, j: int | None = None) -> list[np.ndarray]:
    """``[<k| U |j>_B for k in levels]`` for meter prepared in ``j`` (default ``meter_init``)."""
    j = model.meter_init if j is None else j
    u = step_unitary(model)
    return [meter_block(u, k, j, model.system_dim, model.meter_levels) for k in range(model.meter_levels)]


def step_kraus(model: TrajectoryModel, j: int, k: int) -> np.ndarray:
    """Kraus operator ``<k| exp(-i H delta) |j>_B`` for meter prepared in ``j`` and read as ``k``."""
    for lvl in (j, k):
        if not 0 <= lvl < model.meter_levels:
            raise DimensionError(f"meter level {lvl} out of range")
    return meter_block(step_unitary(model), k, j, model.system_dim, model.meter_levels)


def effective_hamiltonian(model: TrajectoryModel, k: int | None = None) -> np.ndarray:
    """``H_k - (i/2) sum_{j != k} L_jk^dagger L_jk``."""
    k = model.meter_init if k is None else k
    h = model.system_hamiltonians[k].copy()
    for (j, kk), op in model.jumps.items():
        if kk == k:
            h = h - 0.5j * dagger(op) @ op
    return h


def effective_hamiltonian_from_dilation(model: TrajectoryModel, k: int | None = None) -> np.ndarray:
    """``<k|H_A|k> - (i/2) <k|H_AB^2|k>`` computed by projecting the assembled dense Hamiltonian."""
    k = model.meter_init if k is None else k
    dA, dB = model.system_dim, model.meter_levels
    full = assemble(model)
    ha = np.zeros_like(full)
    for lvl in range(dB):
        sel = np.zeros(dB)
        sel[lvl] = 1
        proj = np.kron(np.eye(dA), np.diag(sel))
        ha += proj @ full @ proj
    hab = (full - ha) * math.sqrt(model.delta)
    return meter_block(ha, k, k, dA, dB) - 0.5j * meter_block(hab @ hab, k, k, dA, dB)


def lindblad_generator(model: TrajectoryModel, rho: np.ndarray, j: int | None = None) -> np.ndarray:
    """``-i[H_j, rho] + sum_{k != j} (L_kj rho L_kj^dagger - {L_kj^dagger L_kj, rho}/2)``."""
    j = model.meter_init if j is None else j
    h = model.system_hamiltonians[j]
    out = -1j * (h @ rho - rho @ h)
    for (k, jj), op in model.jumps.items():
        if jj == j:
            ldl = dagger(op) @ op
            out = out + op @ rho @ dagger(op) - 0.5 * (ldl @ rho + rho @ ldl)
    return out


def unconditional_step(model: TrajectoryModel, rho, kraus: Sequence[np.ndarray] | None = None) -> DensityState:
    """``Tr_B[U (rho (x) |j><j|) U^dagger]`` with ``j`` the configured meter level."""
    m = rho.matrix if isinstance(rho, DensityState) else as_operator(rho, "rho")
    ks = kraus_operators(model) if kraus is None else kraus
    out = sum(k @ m @ dagger(k) for k in ks)
    out = (out + dagger(out)) / 2
    return DensityState(num_qubits(out.shape[0]), out)


def iterate_unconditional(model: TrajectoryModel, rho, steps: int) -> DensityState:
    ks = kraus_operators(model)
    state = rho if isinstance(rho, DensityState) else DensityState(num_qubits(len(rho)), as_operator(rho))
    for _ in range(steps):
        state = unconditional_step(model, state, ks)
    return state


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class TrajectoryRecord:
    outcomes: tuple[int, ...]
    weight: float
    final_state: np.ndarray

    def jumps_from(self, level: int) -> int:
        return sum(1 for o in self.outcomes if o != level)


def _normalize(psi: np.ndarray) -> np.ndarray:
    return psi / np.linalg.norm(psi)


def _check_psi(model: TrajectoryModel, psi0) -> np.ndarray:
    psi = np.asarray(psi0, dtype=complex).ravel()
    if psi.size != model.system_dim:
        raise DimensionError(f"psi0 has dimension {psi.size}, model system dimension is {model.system_dim}")
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise PreconditionError("psi0 must be normalized")
    return psi


Feedback = Callable[[int, int, TrajectoryModel], TrajectoryModel]


@dataclass(frozen=True)
class SampledTrajectory:
    outcomes: tuple[int, ...]
    weights: tuple[float, ...]  # cumulative Born weight after each step
    final_state: np.ndarray

    @property
    def weight(self) -> float:
        return self.weights[-1] if self.weights else 1.0

    def record(self) -> TrajectoryRecord:
        return TrajectoryRecord(self.outcomes, self.weight, self.final_state)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "outcome", "weight"])
        for i, (o, wt) in enumerate(zip(self.outcomes, self.weights)):
            w.writerow([i, o, repr(float(wt))])
        return buf.getvalue()


def sample_trajectory(
    model: TrajectoryModel,
    psi0,
    steps: int,
    rng_seed=None,
    feedback: Feedback | None = None,
) -> SampledTrajectory:
    """Sample one meter record by the Born rule, resetting the meter after every step.

    ``feedback(step, outcome, model)`` may return the model for the next step.
    """
    psi = _check_psi(model, psi0)
    rng = np.random.default_rng(rng_seed)
    ks = kraus_operators(model)
    outcomes, weights = [], []
    w = 1.0
    for step in range(steps):
        branches = [k @ psi for k in ks]
        probs = np.array([np.vdot(b, b).real for b in branches])
        probs = probs / probs.sum()
        o = int(rng.choice(len(probs), p=probs))
        psi = _normalize(branches[o])
        w *= float(probs[o])
        outcomes.append(o)
        weights.append(w)
        if feedback is not None:
            new = feedback(step, o, model)
            if new is not model:
                model = new
                ks = kraus_operators(model)
    return SampledTrajectory(tuple(outcomes), tuple(weights), psi)


@dataclass(frozen=True)
class Ensemble:
    final_states: np.ndarray  # (n, dA)
    jump_counts: np.ndarray  # (n,) number of non-init outcomes

    def average_density(self) -> np.ndarray:
        s = self.final_states
        return np.einsum("ni,nj->ij", s, s.conj()) / len(s)

    def population(self, level: int) -> tuple[float, float]:
        """Mean and standard error of ``|<level|psi>|^2`` over the ensemble."""
        p = np.abs(self.final_states[:, level]) ** 2
        return float(p.mean()), float(p.std(ddof=1) / math.sqrt(len(p)))


def sample_ensemble(model: TrajectoryModel, psi0, steps: int, n: int, rng_seed=None) -> Ensemble:
    """Vectorized sampling of ``n`` independent trajectories of a static model."""
    psi = _check_psi(model, psi0)
    rng = np.random.default_rng(rng_seed)
    ks = np.array(kraus_operators(model))  # (dB, dA, dA)
    states = np.tile(psi, (n, 1))
    jumps = np.zeros(n, dtype=np.int64)
    for _ in range(steps):
        branches = np.einsum("kab,nb->nka", ks, states)  # (n, dB, dA)
        probs = np.sum(np.abs(branches) ** 2, axis=2)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(n)
        choice = np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), model.meter_levels - 1)
        chosen = branches[np.arange(n), choice]
        states = chosen / np.linalg.norm(chosen, axis=1, keepdims=True)
        jumps += choice != model.meter_init
    return Ensemble(states, jumps)


def enumerate_records(model: TrajectoryModel, psi0, steps: int, min_weight: float = PRUNE_WEIGHT) -> list[TrajectoryRecord]:
    """All outcome strings of length ``steps`` with weight above ``min_weight``."""
    psi = _check_psi(model, psi0)
    ks = kraus_operators(model)
    frontier = [((), psi)]  # unnormalized branch states carry their weight as squared norm
    for _ in range(steps):
        nxt = []
        for outs, phi in frontier:
            for o, k in enumerate(ks):
                b = k @ phi
                if np.vdot(b, b).real > min_weight:
                    nxt.append((outs + (o,), b))
        frontier = nxt
    return [TrajectoryRecord(outs, float(np.vdot(b, b).real), _normalize(b)) for outs, b in frontier]


def no_jump_trajectory(model: TrajectoryModel, psi0, steps: int, imaginary_shift: float = 0.0) -> tuple[np.ndarray, float]:
    """Normalized state and record weight after ``steps`` no-jump outcomes.

    ``imaginary_shift`` multiplies each no-jump Kraus operator by
    ``exp(c delta)``, the effect of ``H_eff -> H_eff + i c I``.
    """
    psi = _check_psi(model, psi0)
    c = step_kraus(model, model.meter_init, model.meter_init) * math.exp(imaginary_shift * model.delta)
    w = 1.0
    for _ in range(steps):
        psi = c @ psi
        nrm = np.vdot(psi, psi).real
        w *= nrm
        psi = psi / math.sqrt(nrm)
    return psi, w


# ---------------------------------------------------------------------------
# Locality-preserving couplings


def build_local_coupling(
    h0,
    local_jumps: Sequence[tuple[int, np.ndarray]],
    delta: float = 1e-3,
    meters: Sequence[int] | None = None,
) -> TrajectoryModel:
    """One meter qubit per local jump: ``H_AB = sum_j (L_j (x) s+_j + L_j^dagger (x) s-_j)``.

    ``L_j`` acts on system qubit ``site_j``; meter qubit ``meters[j]`` (default
    ``j``) raises from ``|0>`` to ``|1>`` when the jump fires.
    """
    h0 = as_operator(h0, "H0")
    n_sys = num_qubits(h0.shape[0])
    if not local_jumps:
        raise ValueError("need at least one local jump operator")
    meters = list(range(len(local_jumps))) if meters is None else [int(m) for m in meters]
    if len(meters) != len(local_jumps):
        raise ValueError("one meter per jump is required")
    if len(set(meters)) != len(meters):
        raise PreconditionError(f"overlapping meter assignment {meters}")
    m = max(meters) + 1
    dB = 2**m
    jumps: dict = {}
    terms = []
    for (site, op), meter in zip(local_jumps, meters):
        op = as_operator(op, "L")
        if op.shape != (2, 2):
            raise DimensionError("local jump operators must act on a single site")
        if not 0 <= site < n_sys:
            raise DimensionError(f"site {site} out of range")
        l_full = embed(op, [site], n_sys)
        raise_op = embed(SIGMA_PLUS, [meter], m)
        for a in range(dB):
            for b in range(dB):
                if raise_op[a, b] != 0:
                    key = (a, b)
                    if key in jumps:
                        raise PreconditionError(f"meter transition {key} used twice")
                    jumps[key] = l_full
        terms.append((int(site), meter, op))
    return TrajectoryModel(
        meter_levels=dB,
        system_hamiltonians=(h0,),
        jumps=jumps,
        delta=delta,
        meter_init=0,
        local_terms=tuple(terms),
    )


def local_coupling_hamiltonian(model: TrajectoryModel) -> np.ndarray:
    """``H_AB`` rebuilt from the local terms as explicit ``L (x) s+ + h.c.`` products."""
    if not model.local_terms:
        raise PreconditionError("model has no local structure")
    n_sys = num_qubits(model.system_dim)
    m = num_qubits(model.meter_levels)
    total = n_sys + m
    out = np.zeros((2**total, 2**total), dtype=complex)
    for site, meter, op in model.local_terms:
        out += embed(np.kron(op, SIGMA_PLUS), [site, n_sys + meter], total)
        out += embed(np.kron(dagger(op), SIGMA_MINUS), [site, n_sys + meter], total)
    return out


def cross_terms(model: TrajectoryModel) -> dict[tuple[int, int], float]:
    """Norms of ``L_j^dagger L_k <0^m| s-_j s+_k |0^m>`` for all ``j != k``."""
    if not model.local_terms:
        raise PreconditionError("model has no local structure")
    n_sys = num_qubits(model.system_dim)
    m = num_qubits(model.meter_levels)
    vac = np.zeros(2**m, dtype=complex)
    vac[0] = 1
    out = {}
    for a, (sj, mj, lj) in enumerate(model.local_terms):
        for b, (sk, mk, lk) in enumerate(model.local_terms):
            if a == b:
                continue
            amp = vac.conj() @ embed(SIGMA_MINUS, [mj], m) @ embed(SIGMA_PLUS, [mk], m) @ vac
            sys_op = dagger(embed(lj, [sj], n_sys)) @ embed(lk, [sk], n_sys)
            out[(a, b)] = float(np.linalg.norm(sys_op * amp, 2))
    return out


# ---------------------------------------------------------------------------
# Model generators


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return scale * (a + dagger(a)) / 2


def random_model(
    system_dim: int,
    meter_levels: int,
    rng: np.random.Generator,
    restricted: bool = False,
    delta: float = 1e-3,
) -> TrajectoryModel:
    """Random Hermitian ``H_k`` and couplings on every meter pair (or only pairs touching level 0)."""
    hs = tuple(random_hermitian(system_dim, rng, 0.5) for _ in range(meter_levels))
    jumps = {}
    for j in range(meter_levels):
        for k in range(j):
            if restricted and k != 0:
                continue
            jumps[(j, k)] = 0.5 * (rng.standard_normal((system_dim, system_dim)) + 1j * rng.standard_normal((system_dim, system_dim)))
    return TrajectoryModel(meter_levels, hs, jumps, delta=delta)


def amplitude_damping_model(kappa: float = 1.0, delta: float = 1e-3) -> TrajectoryModel:
    """Single qubit, ``H = 0``, jump ``L_10 = sqrt(kappa) s-`` on a two-level meter."""
    return TrajectoryModel(2, (np.zeros((2, 2)),), {(1, 0): math.sqrt(kappa) * SIGMA_MINUS}, delta=delta)


# ---------------------------------------------------------------------------
# Convergence order


def _superop(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """Row-major vectorization: ``vec(K rho K^dagger) = (K (x) conj(K)) vec(rho)``."""
    return sum(np.kron(k, k.conj()) for k in kraus)


def _lindblad_superop(model: TrajectoryModel) -> np.ndarray:
    d = model.system_dim
    basis = np.eye(d * d)
    cols = [lindblad_generator(model, basis[i].reshape(d, d)).ravel() for i in range(d * d)]
    return np.array(cols).T


def step_error(model: TrajectoryModel, quantity: str) -> float:
    if quantity == "no_jump_error":
        j = model.meter_init
        c = step_kraus(model, j, j)
        return float(np.linalg.norm(c - matrix_exp(-1j * model.delta * effective_hamiltonian(model, j)), 2))
    if quantity == "unconditional_error":
        d = model.system_dim
        channel = _superop(kraus_operators(model))
        first_order = np.eye(d * d) + model.delta * _lindblad_superop(model)
        return float(np.linalg.norm(channel - first_order, 2))
    raise ValueError(f"unknown quantity {quantity!r}")


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    deltas: tuple[float, ...]
    errors: tuple[float, ...]


def estimate_order(model: TrajectoryModel, quantity: str, deltas: Sequence[float]) -> OrderFit:
    """Least-squares slope of ``log(error)`` against ``log(delta)``.

    Needs at least four deltas spanning 1.5 decades. When the error at any
    delta is below the rounding floor a warning is issued and the slope is NaN.
    """
    ds = np.array(sorted(float(x) for x in deltas))
    if ds.size < 4 or ds[0] <= 0 or math.log10(ds[-1] / ds[0]) < 1.5 - 1e-12:
        raise PreconditionError("need at least 4 positive deltas spanning 1.5 decades")
    errs = np.array([step_error(model.with_delta(d), quantity) for d in ds])
    if np.min(errs) < ERROR_FLOOR:
        warnings.warn(
            f"{quantity} reaches the precision floor ({np.min(errs):.2e} < {ERROR_FLOOR:g}); slope not meaningful",
            RuntimeWarning,
            stacklevel=2,
        )
        return OrderFit(float("nan"), float("nan"), tuple(ds), tuple(errs))
    slope, intercept = np.polyfit(np.log(ds), np.log(errs), 1)
    return OrderFit(float(slope), float(intercept), tuple(ds), tuple(errs))
