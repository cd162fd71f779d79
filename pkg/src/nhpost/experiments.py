"""Experiment kinds run by the command-line interface.

Each kind takes resolved parameters and a master seed and returns an
:class:`ExperimentResult` holding scalar metrics, data tables and pass/fail
checks. Sweep points get their own generator, seeded from ``(seed, index)``,
so results do not depend on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import conditioning as cond
from . import stabilizer as stab
from .circuit import CircuitProgram, PureState, conditional_probability, nonunitary, run, unitary
from .errors import PreconditionError, WellFormednessError
from .gadgets import build_svd_gadget, svd_gadget_error_bound, verify_gadget
from .linalg import decode_matrix, distance_to_unitary, haar_unitary
from .purification import dilate_with_scalars, polar_dilation
from .trajectories import (
    amplitude_damping_model,
    estimate_order,
    iterate_unconditional,
    random_model,
    sample_ensemble,
)


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list = field(default_factory=list)


@dataclass
class ExperimentResult:
    metrics: dict
    tables: dict[str, Table]
    checks: dict[str, bool]
    plots: list = field(default_factory=list)  # (name, callable(ax)) pairs


def point_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _map(fn: Callable, args: Sequence, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_star, [(fn, a) for a in args]))


def _star(packed):
    fn, a = packed
    return fn(*a)


# ---------------------------------------------------------------------------
# Random instances


def random_gate_with_radius(d: int, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Random ``d x d`` gate whose normalized singular radius is exactly ``delta``."""
    s = np.sort(rng.uniform(1.0 - delta, 1.0, d))[::-1]
    s[0], s[-1] = 1.0, 1.0 - delta
    return haar_unitary(d, rng) @ np.diag(s) @ haar_unitary(d, rng)


def random_amplitudes(a_sq_min: float, rng: np.random.Generator) -> tuple[complex, complex]:
    a_sq = rng.uniform(a_sq_min, 1.0)
    ph = np.exp(2j * np.pi * rng.uniform(size=2))
    return np.sqrt(a_sq) * ph[0], np.sqrt(1 - a_sq) * ph[1]


def random_program(rng: np.random.Generator, max_qubits: int = 5, max_nonunitary: int = 3, max_unitary: int = 4) -> CircuitProgram:
    """Random program of Haar gates and Gaussian non-unitary gates on one or two qubits."""
    n = int(rng.integers(1, max_qubits + 1))
    kinds = ["n"] * int(rng.integers(1, max_nonunitary + 1)) + ["u"] * int(rng.integers(0, max_unitary + 1))
    rng.shuffle(kinds)
    steps = []
    for kind in kinds:
        k = 1 if n == 1 else int(rng.integers(1, 3))
        targets = [int(q) for q in rng.choice(n, k, replace=False)]
        if kind == "u":
            steps.append(unitary(haar_unitary(2**k, rng), targets))
        else:
            g = rng.standard_normal((2**k, 2**k)) + 1j * rng.standard_normal((2**k, 2**k))
            steps.append(nonunitary(g, targets))
    return CircuitProgram(n, steps)


def random_state(n: int, rng: np.random.Generator) -> PureState:
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return PureState.from_amplitudes(v)


def random_forced_clifford(
    rng: np.random.Generator, n: int, gates: int, forced: int, consistent: float = 0.9
) -> list[tuple]:
    """Random {H, S, CNOT} circuit with forced outcomes inserted at random positions.

    Each forced bit agrees with a possible outcome with probability ``consistent``,
    so most (but not all) circuits have a nonzero record probability.
    """
    slots = set(rng.choice(gates + 1, size=min(forced, gates + 1), replace=False).tolist())
    tab = stab.StabilizerTableau(n)
    steps: list[tuple] = []
    for i in range(gates + 1):
        if i in slots:
            q = int(rng.integers(n))
            probe = tab.copy()
            if probe.is_random(q):
                b = int(rng.integers(2))
            else:
                b, _ = probe.measure(q)
                if rng.uniform() > consistent:
                    b ^= 1
            steps.append(("FORCE", q, b))
            try:
                tab.measure(q, forced=b)
            except WellFormednessError:
                pass
        if i == gates:
            break
        kind = int(rng.integers(3)) if n > 1 else int(rng.integers(2))
        if kind == 0:
            steps.append(("H", int(rng.integers(n))))
            tab.h(steps[-1][1])
        elif kind == 1:
            steps.append(("S", int(rng.integers(n))))
            tab.s(steps[-1][1])
        else:
            c, t = (int(x) for x in rng.choice(n, 2, replace=False))
            steps.append(("CNOT", c, t))
            tab.cnot(c, t)
    return steps


# ---------------------------------------------------------------------------
# Kinds


def _gadget_point(seed, index, d, delta, epsilon, k, samples, gate):
    rng = point_rng(seed, index)
    u = random_gate_with_radius(d, delta, rng) if gate is None else gate
    gadget, budget = build_svd_gadget(u, epsilon, k)
    s = np.linalg.svd(u, compute_uv=False)
    rows = []
    for _ in range(samples):
        a, b = random_amplitudes(2.0 ** (-k), rng)
        failure = verify_gadget(gadget, a, b)
        _, bound = svd_gadget_error_bound(abs(a) ** 2, s[0], s[-1], budget.r)
        rows.append((index, d, budget.delta, budget.r, abs(a) ** 2, failure, bound))
    return rows


def gadget_sweep(p: dict, seed: int, workers: int = 1) -> ExperimentResult:
    gates = [decode_matrix(g) for g in p.get("gates", [])]
    points = [(d, delta, None) for d in p["dims"] for delta in p["deltas"]]
    points += [(g.shape[0], None, g) for g in gates]
    args = [(seed, i, d, delta, p["epsilon"], p["k"], p["samples_per_point"], g) for i, (d, delta, g) in enumerate(points)]
    rows = [r for chunk in _map(_gadget_point, args, workers) for r in chunk]
    table = Table(("point", "dim", "delta", "r", "a_sq", "measured_failure", "bound"), rows)
    failures = [r[5] for r in rows]
    within_eps = all(f <= p["epsilon"] for f in failures)
    within_bound = all(r[5] <= r[6] + 1e-12 for r in rows)
    result = ExperimentResult(
        metrics={"points": len(points), "samples": len(rows), "max_failure": max(failures, default=0.0)},
        tables={"gadget_sweep": table},
        checks={"failure_within_epsilon": within_eps, "failure_within_bound": within_bound},
    )

    def plot(ax):
        if rows:
            ax.semilogy([r[3] for r in rows], [max(r[5], 1e-300) for r in rows], "o", label="measured")
            ax.semilogy([r[3] for r in rows], [r[6] for r in rows], "x", label="bound")
        ax.axhline(p["epsilon"], color="k", lw=0.8)
        ax.set_xlabel("repetitions r")
        ax.set_ylabel("failure probability")
        ax.legend()

    result.plots.append(("failure_vs_r", plot))
    return result


def brute_force_distance(u: np.ndarray, grid_points: int = 1000, levels: int = 4) -> float:
    """``min_alpha ||alpha U - Q||`` over nested grids; ``Q`` is the polar factor from scipy."""
    q, _ = scipy.linalg.polar(u, side="right")
    s_min = np.linalg.svd(u, compute_uv=False)[-1]
    lo, hi = 0.0, 2.0 / s_min
    best = math.inf
    for _ in range(levels):
        alphas = np.linspace(lo, hi, grid_points)
        vals = np.linalg.norm(alphas[:, None, None] * u[None] - q[None], ord=2, axis=(1, 2))
        i = int(np.argmin(vals))
        best = min(best, float(vals[i]))
        step = alphas[1] - alphas[0]
        lo, hi = max(alphas[i] - step, 0.0), alphas[i] + step
    return best


def _distance_point(seed, index, d, grid_points, levels, gate):
    rng = point_rng(seed, index)
    u = gate if gate is not None else (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
    formula = distance_to_unitary(u).distance
    brute = brute_force_distance(u, grid_points, levels)
    return (index, u.shape[0], formula, brute, abs(formula - brute))


def distance_check(p: dict, seed: int, workers: int = 1) -> ExperimentResult:
    gates = [decode_matrix(g) for g in p.get("matrices", [])]
    dims = p["dims"]
    points = [(dims[i % len(dims)], None) for i in range(p["count"] if dims else 0)]
    points += [(g.shape[0], g) for g in gates]
    args = [(seed, i, d, p["grid_points"], p["zoom_levels"], g) for i, (d, g) in enumerate(points)]
    rows = _map(_distance_point, args, workers)
    diff = max((r[4] for r in rows), default=0.0)
    result = ExperimentResult(
        metrics={"count": len(rows), "max_abs_diff": diff},
        tables={"distance_check": Table(("index", "dim", "formula", "brute_force", "abs_diff"), rows)},
        checks={"formula_matches_brute_force": diff <= p["tolerance"]},
    )

    def plot(ax):
        ax.plot([r[2] for r in rows], [r[3] for r in rows], ".")
        ax.plot([0, 1], [0, 1], "k-", lw=0.6)
        ax.set_xlabel("closed form")
        ax.set_ylabel("grid minimum")

    result.plots.append(("distance_formula", plot))
    return result


def dilation_fidelity(program: CircuitProgram, psi: PureState) -> tuple[float, float]:
    """Fidelity of the meter-conditioned dilated run with the direct run, and max unitarity residual."""
    direct = run(program, psi).state.amplitudes
    dil = dilate_with_scalars(program)
    out = dil.system_state(run(dil.program, dil.initial_state(psi)).state).amplitudes
    residual = 0.0
    for step in program.steps:
        if step.tag == "nonunitary":
            u = polar_dilation(step.op).unitary
            residual = max(residual, float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))))
    return float(abs(np.vdot(direct, out)) ** 2), residual


def _dilation_point(seed, index, max_qubits, max_nonunitary):
    rng = point_rng(seed, index)
    prog = random_program(rng, max_qubits, max_nonunitary)
    fid, res = dilation_fidelity(prog, random_state(prog.num_qubits, rng))
    n_nu = sum(s.tag == "nonunitary" for s in prog.steps)
    return (index, prog.num_qubits, n_nu, fid, res)


def dilation_equivalence(p: dict, seed: int, workers: int = 1) -> ExperimentResult:
    args = [(seed, i, p["max_qubits"], p["max_nonunitary"]) for i in range(p["programs"])]
    rows = _map(_dilation_point, args, workers)
    min_fid = min((r[3] for r in rows), default=1.0)
    max_res = max((r[4] for r in rows), default=0.0)
    return ExperimentResult(
        metrics={"programs": len(rows), "min_fidelity": min_fid, "max_unitarity_residual": max_res},
        tables={"dilation": Table(("index", "qubits", "nonunitary_steps", "fidelity", "unitarity_residual"), rows)},
        checks={"fidelity": min_fid >= 1 - 1e-9, "unitarity": max_res <= 1e-10},
    )


def _order_point(seed, index, system_dim, levels, restricted, deltas, quantity):
    rng = point_rng(seed, index)
    model = random_model(system_dim, levels, rng, restricted=restricted)
    fit = estimate_order(model, quantity, deltas)
    return levels, restricted, fit


def trotter_order(p: dict, seed: int, workers: int = 1) -> ExperimentResult:
    cases = [(lv, r) for lv in p["meter_levels"] for r in (False, True)]
    args = [(seed, i, p["system_dim"], lv, r, p["deltas"], p["quantity"]) for i, (lv, r) in enumerate(cases)]
    fits = _map(_order_point, args, workers)
    err_rows, slope_rows, checks = [], [], {}
    lo_g, hi_g = p["generic_range"]
    lo_r, hi_r = p["restricted_range"]
    for levels, restricted, fit in fits:
        variant = "restricted" if restricted else "generic"
        for d, e in zip(fit.deltas, fit.errors):
            err_rows.append((levels, variant, d, e))
        slope_rows.append((levels, variant, fit.slope))
        lo, hi = (lo_r, hi_r) if restricted else (lo_g, hi_g)
        checks[f"slope_{variant}_{levels}_level"] = bool(lo <= fit.slope <= hi)
    result = ExperimentResult(
        metrics={f"slope_{v}_{lv}_level": s for lv, v, s in slope_rows},
        tables={"trotter_errors": Table(("meter_levels", "variant", "delta", "error"), err_rows),
                "trotter_slopes": Table(("meter_levels", "variant", "slope"), slope_rows)},
        checks=checks,
    )

    def plot(ax):
        for levels, restricted, fit in fits:
            ax.loglog(fit.deltas, fit.errors, "o-", label=f"{levels}-level {'restricted' if restricted else 'generic'}")
        ax.set_xlabel("delta")
        ax.set_ylabel("step error")
        ax.legend()

    result.plots.append(("trotter_order", plot))
    return result


def _ensemble_chunk(seed, index, kappa, delta, steps, n):
    model = amplitude_damping_model(kappa, delta)
    ens = sample_ensemble(model, np.array([0, 1], dtype=complex), steps, n, rng_seed=[int(seed), int(index)])
    pops = np.abs(np.asarray(ens.final_states)[:, 1]) ** 2
    return float(pops.sum()), float((pops**2).sum()), float(np.sum(ens.jump_counts))


def trajectory_vs_lindblad(p: dict, seed: int, workers: int = 1) -> ExperimentResult:
    kappa, t, delta = p["kappa"], p["t"], p["delta"]
    steps = int(round(t / delta))
    model = amplitude_damping_model(kappa, delta)
    rho = np.diag([0.0, 1.0]).astype(complex)
    series = [(0.0, 1.0, 1.0)]
    stride = max(1, steps // 50)
    done = 0
    while done < steps:
        k = min(stride, steps - done)
        rho = iterate_unconditional(model, rho, k).matrix
        done += k
        series.append((done * delta, float(rho[1, 1].real), math.exp(-kappa * done * delta)))
    iterated = series[-1][1]
    n = p["trajectories"]
    chunk = p["chunk_size"]
    sizes = [min(chunk, n - i) for i in range(0, n, chunk)]
    parts = _map(_ensemble_chunk, [(seed, i, kappa, delta, steps, s) for i, s in enumerate(sizes)], workers)
    metrics = {"iterated_rho11": iterated, "exact_rho11": math.exp(-kappa * t), "steps": steps}
    checks = {"iterated_vs_exact": abs(iterated - math.exp(-kappa * t)) <= p["lindblad_tolerance"]}
    if n:
        s1, s2, jumps = (sum(x) for x in zip(*parts))
        mean = s1 / n
        se = math.sqrt(max(s2 - n * mean**2, 0.0) / max(n - 1, 1) / n)
        metrics.update({"ensemble_rho11": mean, "ensemble_se": se, "mean_jumps": jumps / n})
        checks["ensemble_vs_iterated"] = abs(mean - iterated) <= 3 * se
    result = ExperimentResult(
        metrics=metrics,
        tables={"rho11_series": Table(("t", "iterated_rho11", "exact_rho11"), series)},
        checks=checks,
    )

    def plot(ax):
        ax.plot([r[0] for r in series], [r[1] for r in series], label="iterated steps")
        ax.plot([r[0] for r in series], [r[2] for r in series], "--", label="exp(-kappa t)")
        if n:
            ax.errorbar([t], [metrics["ensemble_rho11"]], yerr=[3 * metrics["ensemble_se"]], fmt="o", label="trajectories")
        ax.set_xlabel("t")
        ax.set_ylabel("rho_11")
        ax.legend()

    result.plots.append(("trajectory_average", plot))
    return result


def _stabilizer_point(seed, index, max_qubits, max_gates, max_forced):
    rng = point_rng(seed, index)
    n = int(rng.integers(1, max_qubits + 1))
    steps = random_forced_clifford(rng, n, int(rng.integers(1, max_gates + 1)), int(rng.integers(0, max_forced + 1)))
    query = {int(rng.integers(n)): int(rng.integers(2))}
    try:
        exact = stab.postselected_marginal(steps, query, n=n)
    except PreconditionError:
        exact = None
    try:
        dense = conditional_probability(stab.to_dense_program(steps, n), PureState.zeros(n), query)
    except PreconditionError:
        dense = None
    if exact is None or dense is None:
        agree = exact is None and dense is None
        return (index, n, len(steps), "zero-record" if exact is None else str(exact), dense if dense is not None else "", agree)
    agree = abs(float(exact) - dense) <= 1e-12
    return (index, n, len(steps), str(exact), dense, agree)


def stabilizer_crosscheck(p: dict, seed: int, workers: int = 1) -> ExperimentResult:
    args = [(seed, i, p["max_qubits"], p["max_gates"], p["max_forced"]) for i in range(p["circuits"])]
    rows = _map(_stabilizer_point, args, workers)
    zero = sum(r[3] == "zero-record" for r in rows)
    return ExperimentResult(
        metrics={"circuits": len(rows), "zero_records": zero, "disagreements": sum(not r[5] for r in rows)},
        tables={"stabilizer": Table(("index", "qubits", "steps", "tableau", "dense", "agree"), rows)},
        checks={"exact_agreement": all(r[5] for r in rows)},
    )


def conditioning_audit(p: dict, seed: int, workers: int = 1) -> ExperimentResult:
    audit = cond.verify_budget_bound(p["trials"], rng_seed=seed, epsilon=p["epsilon"], q=p["q"]) if p["trials"] else None
    worst_err, worst_cert = cond.worst_case_trial(p["epsilon"], p["q"])
    metrics = {"worst_case_error": worst_err, "worst_case_certified": worst_cert}
    checks = {"worst_case_within_epsilon": worst_err <= p["epsilon"] and worst_cert <= p["epsilon"]}
    if audit is not None:
        metrics.update({"max_error": audit.max_error, "max_certified": audit.max_certified, "min_slack": audit.min_slack})
        checks["trials_within_epsilon"] = audit.max_error <= p["epsilon"]
    return ExperimentResult(
        metrics=metrics,
        tables={"conditioning": Table(("quantity", "value"), sorted(metrics.items()))},
        checks=checks,
    )


@dataclass(frozen=True)
class ExperimentKind:
    name: str
    description: str
    runner: Callable
    defaults: dict


EXPERIMENTS: dict[str, ExperimentKind] = {
    k.name: k
    for k in (
        ExperimentKind(
            "gadget-sweep",
            "SVD postselection gadget: measured failure against the analytic bound over dims and radii",
            gadget_sweep,
            {"dims": [2, 4, 8], "deltas": [0.1, 0.3, 0.6, 0.9], "epsilon": 2.0**-10, "k": 4, "samples_per_point": 5, "gates": []},
        ),
        ExperimentKind(
            "distance-check",
            "closed-form distance from the rescaled gate to the unitary group against a grid search",
            distance_check,
            {"count": 100, "dims": [2, 4, 8], "grid_points": 1000, "zoom_levels": 4, "tolerance": 1e-6, "matrices": []},
        ),
        ExperimentKind(
            "dilation-equivalence",
            "meter-postselected unitary dilation against direct renormalized simulation",
            dilation_equivalence,
            {"programs": 100, "max_qubits": 5, "max_nonunitary": 3},
        ),
        ExperimentKind(
            "trotter-order",
            "fitted convergence order of the system-meter step for generic and restricted couplings",
            trotter_order,
            {
                "deltas": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
                "system_dim": 2,
                "meter_levels": [3],
                "quantity": "no_jump_error",
                "generic_range": [1.35, 1.65],
                "restricted_range": [1.85, 2.15],
            },
        ),
        ExperimentKind(
            "trajectory-vs-lindblad",
            "amplitude damping: iterated unconditional steps and sampled trajectories against exp(-kappa t)",
            trajectory_vs_lindblad,
            {"kappa": 1.0, "t": 1.0, "delta": 1e-3, "trajectories": 10000, "chunk_size": 2500, "lindblad_tolerance": 2e-3},
        ),
        ExperimentKind(
            "stabilizer-crosscheck",
            "tableau simulation with forced outcomes against the dense state-vector oracle",
            stabilizer_crosscheck,
            {"circuits": 500, "max_qubits": 8, "max_gates": 40, "max_forced": 4},
        ),
        ExperimentKind(
            "conditioning-audit",
            "adversarial audit of the conditional-probability error budget",
            conditioning_audit,
            {"epsilon": 0.05, "q": 12, "trials": 100000},
        ),
    )
}


def resolve_params(kind: str, params: dict | None) -> dict:
    out = dict(EXPERIMENTS[kind].defaults)
    out.update(params or {})
    return out


def run_kind(kind: str, params: dict | None, seed: int, workers: int = 1) -> ExperimentResult:
    return EXPERIMENTS[kind].runner(resolve_params(kind, params), seed, workers)


__all__ = [
    "EXPERIMENTS",
    "ExperimentKind",
    "ExperimentResult",
    "Table",
    "brute_force_distance",
    "dilation_fidelity",
    "point_rng",
    "random_forced_clifford",
    "random_gate_with_radius",
    "random_program",
    "resolve_params",
    "run_kind",
]
