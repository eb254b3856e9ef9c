"""Expectation and subspace estimators over IC measurement records.

Estimation happens on *records*: one record per randomized measurement
basis (the mean over its repeated shots) or one record per shot when the
POVM has no basis randomization.  Means keep shot weighting, spreads are
computed across records, which makes the i.i.d. assumption behind the
error formulas true by construction.

Subspace quantities are handled through the ratio estimator.  For a
coefficient vector c over expansion operators sigma_i, the numerator and
denominator samples

    x_k = Tr[D_k W H W^dag],   y_k = Tr[D_k W W^dag],   W = sum_i c_i sigma_i

are evaluated from the same dual operator per record, so their
covariance is real and must enter the error propagation.  The energy
estimate is the ratio of sample means with a second-order Taylor
variance; the constrained search minimizes it subject to a cap on that
error.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .pauli import PauliString, PauliSum, pauli_mul
from .povm import DualFrame, OutcomeDataset, ProductPOVM, group_flat_outcomes, omega_table
from .simulate import expectation

# fraction of the largest overlap eigenvalue kept in the GEVP projection
GEVP_FLOOR_SCALE = 1e-8
OPTIMIZER_BUDGET = 500

SUBSPACE_ROW_HEADER = "L eps_max energy std_err exact"

_PENALTY = 1e9


@dataclass(frozen=True)
class EstimateReport:
    value: float
    std_err: float
    shots: int
    kind: str


@dataclass(frozen=True, eq=False)
class RatioSamples:
    """Per-record numerator/denominator values with multiplicities.

    ``mult[r]`` counts how many records share the value pair ``(x[r],
    y[r])`` and ``record_shots[r]`` is the number of shots averaged into
    each of them.  Oracle-mode samples carry ``exact=True`` and a single
    spread-free record.
    """

    x: np.ndarray
    y: np.ndarray
    mult: np.ndarray
    record_shots: np.ndarray
    exact: bool = False

    @property
    def records(self) -> int:
        return int(self.mult.sum())

    @property
    def shots(self) -> int:
        return int((self.mult * self.record_shots).sum())


def _to_sum(obs) -> PauliSum:
    if isinstance(obs, PauliString):
        return PauliSum([(1.0, obs)])
    if isinstance(obs, PauliSum):
        return obs
    raise TypeError("observable must be a PauliString or PauliSum")


@dataclass(frozen=True, eq=False)
class SubspaceProblem:
    """Expansion operators, Hamiltonian and a data source.

    Exactly one data source is allowed: either an exact base state
    (oracle mode) or the triple POVM + dataset + dual frame.  The first
    expansion operator must be the identity so that c = e_1 always
    reproduces the unexpanded estimate.
    """

    operators: tuple
    hamiltonian: PauliSum
    povm: ProductPOVM | None = None
    dataset: OutcomeDataset | None = None
    frame: DualFrame | None = None
    state: object = None

    def __post_init__(self):
        ops = tuple(_to_sum(op) for op in self.operators)
        if not ops:
            raise ValueError("a subspace needs at least one expansion operator")
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "hamiltonian", _to_sum(self.hamiltonian))
        n = self.hamiltonian.n
        first = self.operators[0]
        if len(first) != 1 or not first.terms[0][1].is_identity() or first.terms[0][0] != 1.0:
            raise ValueError("first expansion operator must be the identity")
        for op in self.operators:
            if op.n != n:
                raise ValueError("expansion operators and Hamiltonian mix qubit counts")
        sampled = (self.povm, self.dataset, self.frame)
        if self.state is not None:
            if any(v is not None for v in sampled):
                raise ValueError("give either an exact state or measurement data, not both")
        elif any(v is None for v in sampled):
            raise ValueError("measurement mode needs povm, dataset and frame together")

    @property
    def n(self) -> int:
        return self.hamiltonian.n

    @property
    def size(self) -> int:
        return len(self.operators)


@dataclass(frozen=True, eq=False)
class SubspaceSolution:
    c: np.ndarray
    energy: float
    std_err: float
    eps_max: float
    nfev: int
    converged: bool
    message: str

    @property
    def size(self) -> int:
        return len(self.c)


# ---------------------------------------------------------------------------
# record extraction


def _record_values(povm, frame, dataset, tables):
    """Collapse a dataset into per-record means of each omega table.

    Returns (values, mult, record_shots) where values has one row per
    record class and one column per table.
    """
    strides = list(itertools.accumulate([1] + list(povm.outcome_counts()[:-1]), lambda a, b: a * b))
    rows, mult, rec_shots = [], [], []
    for group in dataset.groups:
        idx, cnt = [], []
        for outcome, c in group_flat_outcomes(povm, group):
            idx.append(sum(o * s for o, s in zip(outcome, strides)))
            cnt.append(c)
        if not idx:
            continue
        idx = np.array(idx, dtype=np.int64)
        cnt = np.array(cnt, dtype=np.int64)
        if group.bases is None:
            # no basis randomization: every shot is its own record
            for i, c in zip(idx, cnt):
                rows.append([t[i] for t in tables])
                mult.append(int(c))
                rec_shots.append(1)
        else:
            total = int(cnt.sum())
            rows.append([float(np.dot(cnt, t[idx])) / total for t in tables])
            mult.append(1)
            rec_shots.append(total)
    values = np.array(rows, dtype=float).reshape(len(rows), len(tables))
    return values, np.array(mult, dtype=np.int64), np.array(rec_shots, dtype=np.int64)


def _ratio_moments(samples: RatioSamples):
    """(value, std_err) for the ratio of sample means."""
    w = samples.mult * samples.record_shots
    s_total = int(w.sum())
    if s_total == 0:
        raise ValueError("no measurement records")
    xs = float(np.dot(w, samples.x))
    ys = float(np.dot(w, samples.y))
    r = samples.records
    my = float(np.dot(samples.mult, samples.y)) / r
    if min(abs(ys / s_total), abs(my)) <= 1e-12:
        raise ValueError("denominator mean is degenerate")
    value = xs / ys
    if samples.exact:
        return value, 0.0
    if r < 2:
        return value, math.inf
    mx = float(np.dot(samples.mult, samples.x)) / r
    dx = samples.x - mx
    dy = samples.y - my
    var_x = float(np.dot(samples.mult, dx * dx)) / (r - 1)
    var_y = float(np.dot(samples.mult, dy * dy)) / (r - 1)
    cov = float(np.dot(samples.mult, dx * dy)) / (r - 1)
    var = (var_x / my**2 + mx**2 * var_y / my**4 - 2 * mx * cov / my**3) / r
    return value, math.sqrt(max(var, 0.0))


def estimate(povm: ProductPOVM, frame: DualFrame, obs, dataset: OutcomeDataset) -> EstimateReport:
    """Mean of the estimator coefficients over a dataset.

    The value is the plain shot mean; the standard error is the spread
    across independent records divided by sqrt(#records).
    """
    if dataset.s == 0:
        raise ValueError("empty dataset")
    table = omega_table(povm, frame, _to_sum(obs))
    values, mult, rec_shots = _record_values(povm, frame, dataset, [table])
    samples = RatioSamples(values[:, 0], np.ones(len(mult)), mult, rec_shots)
    value, err = _ratio_moments(samples)
    return EstimateReport(value, err, samples.shots, "direct")


def ratio_estimate(samples: RatioSamples) -> EstimateReport:
    """Ratio of sample means with second-order Taylor error propagation."""
    value, err = _ratio_moments(samples)
    return EstimateReport(value, err, samples.shots, "ratio")


# ---------------------------------------------------------------------------
# complex-coefficient Pauli products

# dict key: (z_mask, x_mask) of a phase-free string; value: complex coeff


def _dict_terms(s: PauliSum) -> dict:
    return {p.key(): complex(c) for c, p in s}


def _dict_mul(a: dict, b: dict, n: int) -> dict:
    out: dict = {}
    for (za, xa), ca in a.items():
        pa = PauliString(n, xa, za, 0)
        for (zb, xb), cb in b.items():
            prod = pauli_mul(pa, PauliString(n, xb, zb, 0))
            v = ca * cb * 1j**prod.phase_exp
            k = prod.key()
            out[k] = out.get(k, 0j) + v
    return out


def _dict_dag(a: dict) -> dict:
    # phase-free strings are Hermitian, so only coefficients conjugate
    return {k: v.conjugate() for k, v in a.items()}


def _dict_prune(a: dict, rel_tol: float = 1e-12) -> dict:
    scale = max((abs(v) for v in a.values()), default=0.0)
    return {k: v for k, v in a.items() if abs(v) > rel_tol * scale}


def _combination(operators, c, n) -> dict:
    out: dict = {}
    for ci, op in zip(c, operators):
        if ci == 0:
            continue
        for key, v in _dict_terms(op).items():
            out[key] = out.get(key, 0j) + ci * v
    return out


def _problem_tables(problem: SubspaceProblem, keys):
    """Per-record means of Tr[D_k P] for each Pauli key.

    Oracle mode returns the exact traces as a single spread-free record.
    """
    if problem.state is not None:
        row = [expectation(problem.state, PauliString(problem.n, x, z, 0)) for z, x in keys]
        values = np.array([row], dtype=float)
        return values, np.ones(1, dtype=np.int64), np.ones(1, dtype=np.int64), True
    if problem.dataset.s == 0:
        raise ValueError("empty dataset")
    tables = [
        omega_table(problem.povm, problem.frame, PauliSum([(1.0, PauliString(problem.n, x, z, 0))]))
        for z, x in keys
    ]
    values, mult, rec_shots = _record_values(problem.povm, problem.frame, problem.dataset, tables)
    return values, mult, rec_shots, False


def _pair_tables(problem: SubspaceProblem):
    """Record-resolved matrices T_H[r, i, j] and T_S[r, i, j].

    T_H holds the per-record value of Tr[D sigma_j H sigma_i^dag] so any
    coefficient vector contracts to the ratio samples without touching
    the dataset again.
    """
    n, ops = problem.n, problem.operators
    h = _dict_terms(problem.hamiltonian)
    dicts_h, dicts_s = {}, {}
    keys: dict = {}
    for i, si in enumerate(ops):
        dag = _dict_dag(_dict_terms(si))
        for j, sj in enumerate(ops):
            dj = _dict_terms(sj)
            dicts_h[i, j] = _dict_prune(_dict_mul(_dict_mul(dj, h, n), dag, n))
            dicts_s[i, j] = _dict_prune(_dict_mul(dj, dag, n))
            for k in dicts_h[i, j]:
                keys.setdefault(k, len(keys))
            for k in dicts_s[i, j]:
                keys.setdefault(k, len(keys))
    key_list = list(keys)
    values, mult, rec_shots, exact = _problem_tables(problem, key_list)
    size = problem.size
    t_h = np.zeros((values.shape[0], size, size), dtype=complex)
    t_s = np.zeros_like(t_h)
    for (i, j), d in dicts_h.items():
        for k, v in d.items():
            t_h[:, i, j] += v * values[:, keys[k]]
    for (i, j), d in dicts_s.items():
        for k, v in d.items():
            t_s[:, i, j] += v * values[:, keys[k]]
    return t_h, t_s, mult, rec_shots, exact


def _contract(t_h, t_s, mult, rec_shots, exact, c) -> RatioSamples:
    x = np.einsum("rij,i,j->r", t_h, c.conj(), c).real
    y = np.einsum("rij,i,j->r", t_s, c.conj(), c).real
    return RatioSamples(x, y, mult, rec_shots, exact)


def ratio_terms(problem: SubspaceProblem, c) -> RatioSamples:
    """Numerator/denominator records for the subspace vector c.

    Both entries of each record come from the same dual operator, so the
    sample covariance between them is meaningful.
    """
    c = np.asarray(c, dtype=complex)
    if c.shape != (problem.size,):
        raise ValueError("coefficient vector length must match the expansion")
    if not np.all(np.isfinite(c.view(float))):
        raise ValueError("coefficient vector must be finite")
    return _contract(*_pair_tables(problem), c)


# ---------------------------------------------------------------------------
# generalized eigenvalue problem


def gevp_solve(h_mat, s_mat, eigval_floor: float | None = None):
    """Smallest pseudo-eigenvalue of H c = lambda S c.

    Directions of S below the floor (default GEVP_FLOOR_SCALE times its
    largest eigenvalue) are projected out before the reduced ordinary
    eigenproblem is solved, which keeps rank-deficient overlap matrices
    finite where a naive inversion diverges.
    """
    h = np.asarray(h_mat, dtype=complex)
    s = np.asarray(s_mat, dtype=complex)
    if h.shape != s.shape or h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("matrices must be square and of equal size")
    for m in (h, s):
        if np.abs(m - m.conj().T).max() > 1e-8:
            raise ValueError("matrix is not Hermitian")
    h = (h + h.conj().T) / 2
    s = (s + s.conj().T) / 2
    w, v = np.linalg.eigh(s)
    if eigval_floor is None:
        eigval_floor = GEVP_FLOOR_SCALE * max(w[-1], 0.0)
    keep = w > eigval_floor
    if not keep.any():
        raise ValueError("every overlap eigenvalue is below the floor")
    basis = v[:, keep] / np.sqrt(w[keep])
    vals, vecs = np.linalg.eigh(basis.conj().T @ h @ basis)
    return float(vals[0]), basis @ vecs[:, 0]


# ---------------------------------------------------------------------------
# constrained subspace optimization

# c is searched as [re c_1, re c_2, im c_2, ...] with c_1 kept real and
# nonnegative to pin the global phase


def _params_to_c(p: np.ndarray, size: int) -> np.ndarray:
    c = np.empty(size, dtype=complex)
    c[0] = p[0]
    if size > 1:
        rest = p[1:].reshape(size - 1, 2)
        c[1:] = rest[:, 0] + 1j * rest[:, 1]
    return c


def pse_optimize(problem: SubspaceProblem, eps_max: float, budget: int = OPTIMIZER_BUDGET) -> SubspaceSolution:
    """Minimize the energy estimate subject to std_err <= eps_max.

    Runs a linear-approximation trust-region search from c = e_1.  When
    no feasible improvement is found the identity solution is returned
    with ``converged=False``, so the result is never worse than the
    unexpanded estimate.
    """
    if not eps_max > 0:
        raise ValueError("tolerated error must be positive")
    tables = _pair_tables(problem)
    size = problem.size
    e1 = np.zeros(size, dtype=complex)
    e1[0] = 1.0
    val0, err0 = _ratio_moments(_contract(*tables, e1))
    if size == 1:
        return SubspaceSolution(e1, val0, err0, eps_max, 1, True, "identity-only subspace")

    def safe(c):
        try:
            return _ratio_moments(_contract(*tables, c))
        except ValueError:
            return _PENALTY, _PENALTY

    def objective(p):
        return safe(_params_to_c(p, size))[0]

    def err_margin(p):
        err = safe(_params_to_c(p, size))[1]
        if not math.isfinite(err):
            return -_PENALTY
        return eps_max - err

    p0 = np.zeros(2 * size - 1)
    p0[0] = 1.0
    constraints = [{"type": "ineq", "fun": lambda p: p[0]}]
    if math.isfinite(eps_max):
        constraints.append({"type": "ineq", "fun": err_margin})
    res = minimize(
        objective,
        p0,
        method="COBYLA",
        constraints=constraints,
        options={"maxiter": budget, "rhobeg": 0.4},
        tol=1e-8,
    )
    c_star = _params_to_c(res.x, size)
    val, err = safe(c_star)
    feasible = err <= eps_max * (1 + 1e-9) + 1e-15 or not math.isfinite(eps_max)
    if feasible and val <= val0:
        return SubspaceSolution(c_star, val, err, eps_max, int(res.nfev), True, "feasible improvement")
    return SubspaceSolution(e1, val0, err0, eps_max, int(res.nfev), False, "no feasible improvement within budget")


def _upper_error_minimum(problem: SubspaceProblem, budget: int):
    """Energy at the minimizer of value + std_err (phase constraint only)."""
    tables = _pair_tables(problem)
    size = problem.size

    def safe(p):
        try:
            value, err = _ratio_moments(_contract(*tables, _params_to_c(p, size)))
        except ValueError:
            return _PENALTY, _PENALTY
        if not math.isfinite(err):
            return value, _PENALTY
        return value, err

    p0 = np.zeros(2 * size - 1)
    p0[0] = 1.0
    res = minimize(
        lambda p: sum(safe(p)),
        p0,
        method="COBYLA",
        constraints=[{"type": "ineq", "fun": lambda p: p[0]}],
        options={"maxiter": budget, "rhobeg": 0.4},
        tol=1e-8,
    )
    return safe(res.x)[0]


def pauli_pool_select(problem: SubspaceProblem, weight: int, pool_size: int, keep: int,
                      rng: np.random.Generator, budget: int = 120):
    """Rank random weight-w Pauli strings by their two-operator gain.

    Each candidate P gets a {identity, P} subspace optimized for the
    lowest upper error; the ``keep`` strings with the largest energy
    reduction against the unexpanded estimate are returned.
    """
    n = problem.n
    if keep > pool_size:
        raise ValueError("pool size must cover the kept count")
    if not 1 <= weight <= n:
        raise ValueError("weight must lie between 1 and the qubit count")
    if keep == 0:
        return []
    total = math.comb(n, weight) * 3**weight
    pool = []
    seen = set()
    if pool_size >= total:
        for positions in itertools.combinations(range(n), weight):
            for letters in itertools.product("XYZ", repeat=weight):
                x = z = 0
                for q, letter in zip(positions, letters):
                    xb = 1 if letter in "XY" else 0
                    zb = 1 if letter in "YZ" else 0
                    x |= xb << q
                    z |= zb << q
                pool.append(PauliString(n, x, z, 0))
    else:
        while len(pool) < pool_size:
            positions = rng.choice(n, size=weight, replace=False)
            x = z = 0
            for q in positions:
                letter = rng.integers(1, 4)
                x |= (1 if letter in (1, 2) else 0) << int(q)
                z |= (1 if letter in (2, 3) else 0) << int(q)
            if (z, x) not in seen:
                seen.add((z, x))
                pool.append(PauliString(n, x, z, 0))
    identity = problem.operators[0]
    base = replace(problem, operators=(identity,))
    val0, _ = _ratio_moments(_contract(*_pair_tables(base), np.array([1.0 + 0j])))
    ranked = []
    for p in pool:
        two_dim = replace(problem, operators=(identity, PauliSum([(1.0, p)])))
        val = _upper_error_minimum(two_dim, budget)
        ranked.append((val0 - val, p))
    ranked.sort(key=lambda item: (-item[0], item[1].to_text()))
    return [p for _, p in ranked[:keep]]


# ---------------------------------------------------------------------------
# Krylov expansion operators


def krylov_operators(hamiltonian, order: int, max_terms: int | None = None):
    """Powers {I, H, ..., H^(order-1)} with Pauli-product merging.

    Coefficients below 1e-12 of the largest magnitude are dropped after
    each multiplication; term counts are available as len() of each
    returned sum.
    """
    h = _to_sum(hamiltonian)
    if order < 1:
        raise ValueError("order must be at least 1")
    n = h.n
    out = [PauliSum([(1.0, PauliString.identity(n))])]
    cur = {PauliString.identity(n).key(): 1 + 0j}
    hd = _dict_terms(h)
    for _ in range(order - 1):
        cur = _dict_prune(_dict_mul(cur, hd, n))
        if max_terms is not None and len(cur) > max_terms:
            raise ValueError(f"term count {len(cur)} exceeds the cap {max_terms}")
        scale = max(abs(v) for v in cur.values())
        terms = []
        for (z, x), v in cur.items():
            if abs(v.imag) > 1e-10 * scale:
                raise ValueError("power of a Hermitian sum came out non-Hermitian")
            terms.append((v.real, PauliString(n, x, z, 0)))
        out.append(PauliSum(terms))
    return out


# ---------------------------------------------------------------------------
# report rows


def solution_row(solution: SubspaceSolution, exact: float | None = None) -> str:
    """One whitespace-separated row per SUBSPACE_ROW_HEADER."""
    fields = [
        str(solution.size),
        f"{solution.eps_max:.17g}",
        f"{solution.energy:.17g}",
        f"{solution.std_err:.17g}",
        "-" if exact is None else f"{exact:.17g}",
    ]
    return " ".join(fields)
