import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qemlab.estimation import (
    RatioSamples,
    SubspaceProblem,
    estimate,
    gevp_solve,
    krylov_operators,
    pauli_pool_select,
    pse_optimize,
    ratio_estimate,
    ratio_terms,
    solution_row,
)
from qemlab.pauli import PauliString, PauliSum, pauli_mul
from qemlab.povm import (
    build_povm,
    duals,
    estimate_expectation,
    outcome_probabilities,
    sample,
    ssv,
)
from qemlab.simulate import DensityMatrix, StateVector, expectation


def random_state(rng, n):
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return StateVector(n, v / np.linalg.norm(v))


def ground_pair(ham):
    vals, vecs = np.linalg.eigh(ham.to_matrix())
    return vals[0], vecs[:, 0]


TFI_2 = PauliSum(
    [
        (1.0, PauliString.from_text("ZZ")),
        (0.5, PauliString.from_text("XI")),
        (0.5, PauliString.from_text("IX")),
    ]
)


# ---------------------------------------------------------------------------
# direct estimation


def test_estimate_identity_observable():
    rng = np.random.default_rng(0)
    povm = build_povm("shadows", 1)
    ds = sample(povm, random_state(rng, 1), 50, 1, rng)
    rep = estimate(povm, duals(povm), PauliString.identity(1), ds)
    assert abs(rep.value - 1.0) < 1e-12
    assert rep.std_err < 1e-12
    assert rep.kind == "direct" and rep.shots == 50


def test_estimate_value_is_shot_mean():
    rng = np.random.default_rng(1)
    state = random_state(rng, 2)
    obs = PauliSum([(0.7, PauliString.from_text("ZX")), (0.3, PauliString.from_text("XI"))])
    for povm in (build_povm("shadows", 2), build_povm("sic", 2)):
        frame = duals(povm, partition=[(0,), (1,)])
        ds = sample(povm, state, 600, 1, rng)
        a = estimate(povm, frame, obs, ds)
        b = estimate_expectation(povm, frame, obs, ds)
        assert abs(a.value - b.mean) < 1e-14


def test_estimate_z_on_ground_state_within_band():
    # SSV of Z with canonical shadow duals on |0> is exactly 2
    povm = build_povm("shadows", 1)
    shots = 100_000
    ds = sample(povm, StateVector(1, np.array([1, 0], dtype=complex)), shots, 1,
                np.random.default_rng(7))
    rep = estimate(povm, duals(povm), PauliString.from_text("Z"), ds)
    assert abs(rep.value - 1.0) < 4 * math.sqrt(2 / shots)
    assert rep.shots == shots


def test_estimate_empty_dataset_error():
    from qemlab.povm import OutcomeDataset

    povm = build_povm("shadows", 1)
    with pytest.raises(ValueError, match="empty"):
        estimate(povm, duals(povm), PauliString.from_text("Z"), OutcomeDataset(1, ()))


def test_variance_scaling_with_weight():
    """Single-shot variance of weight-k Z strings grows as 5^k - 1 on a
    Z-basis product state, below the 6^k worst case of the SIC shot bound."""
    povm = build_povm("sic", 3)
    frame = duals(povm, partition=[(0,), (1,), (2,)])
    ket0 = np.zeros(8, dtype=complex)
    ket0[0] = 1.0
    state = StateVector(3, ket0)
    for text, k in (("ZII", 1), ("ZZI", 2), ("ZZZ", 3)):
        val = ssv(povm, frame, PauliString.from_text(text), state)
        assert abs(val - (5.0**k - 1.0)) < 1e-9
    # sampled variance reproduces the k = 1, 2 factors
    povm2 = build_povm("sic", 2)
    frame2 = duals(povm2, partition=[(0,), (1,)])
    state2 = StateVector(2, np.array([1, 0, 0, 0], dtype=complex))
    ds = sample(povm2, state2, 40_000, 1, np.random.default_rng(3))
    for text, k in (("ZI", 1), ("ZZ", 2)):
        rep = estimate(povm2, frame2, PauliString.from_text(text), ds)
        assert abs(rep.std_err**2 * rep.shots - (5.0**k - 1.0)) < 0.2 * (5.0**k - 1.0)


# ---------------------------------------------------------------------------
# ratio estimator


def test_ratio_identity_coefficients_reduce_to_estimate():
    rng = np.random.default_rng(11)
    povm = build_povm("shadows", 2)
    frame = duals(povm, partition=[(0,), (1,)])
    state = random_state(rng, 2)
    ds = sample(povm, state, 900, 9, rng)
    problem = SubspaceProblem(
        (PauliString.identity(2), PauliString.from_text("XX")),
        TFI_2, povm=povm, dataset=ds, frame=frame,
    )
    samples = ratio_terms(problem, [1.0, 0.0])
    assert np.allclose(samples.y, 1.0, atol=1e-12)
    rep = ratio_estimate(samples)
    direct = estimate(povm, frame, TFI_2, ds)
    assert abs(rep.value - direct.value) < 1e-13
    assert abs(rep.std_err - direct.std_err) < 1e-13


def test_ratio_oracle_exact():
    rng = np.random.default_rng(12)
    state = random_state(rng, 2)
    problem = SubspaceProblem(
        (PauliString.identity(2), PauliString.from_text("XX")), TFI_2, state=state
    )
    c = np.array([0.8 + 0j, 0.3 - 0.2j])
    samples = ratio_terms(problem, c)
    assert samples.exact and samples.records == 1
    w = c[0] * np.eye(4) + c[1] * PauliString.from_text("XX").to_matrix()
    rho = np.outer(state.amps, state.amps.conj())
    hm = TFI_2.to_matrix()
    assert abs(samples.x[0] - np.trace(rho @ w @ hm @ w.conj().T).real) < 1e-12
    assert abs(samples.y[0] - np.trace(rho @ w @ w.conj().T).real) < 1e-12
    rep = ratio_estimate(samples)
    assert rep.std_err == 0.0 and rep.kind == "ratio"


def test_ratio_record_means_track_dense_value():
    rng = np.random.default_rng(13)
    state = random_state(rng, 3)
    ham = PauliSum(
        [
            (1.0, PauliString.from_text("ZZI")),
            (1.0, PauliString.from_text("IZZ")),
            (0.6, PauliString.from_text("XII")),
        ]
    )
    povm = build_povm("shadows", 3)
    frame = duals(povm, partition=[(0,), (1,), (2,)])
    ds = sample(povm, state, 4000, 8, rng)
    problem = SubspaceProblem(
        (PauliString.identity(3), PauliString.from_text("XXI")),
        ham, povm=povm, dataset=ds, frame=frame,
    )
    c = np.array([1.0, 0.4 + 0.1j])
    samples = ratio_terms(problem, c)
    w = c[0] * np.eye(8) + c[1] * PauliString.from_text("XXI").to_matrix()
    rho = np.outer(state.amps, state.amps.conj())
    exact = np.trace(rho @ w @ ham.to_matrix() @ w.conj().T).real
    mean = samples.x.mean()
    sigma = samples.x.std(ddof=1) / math.sqrt(samples.records)
    assert abs(mean - exact) < 4 * sigma


def test_ratio_degenerate_denominator():
    ones = np.ones(4, dtype=np.int64)
    samples = RatioSamples(np.ones(4), np.array([1.0, -1.0, 1.0, -1.0]), ones, ones)
    with pytest.raises(ValueError, match="degenerate"):
        ratio_estimate(samples)
    empty = np.zeros(0, dtype=np.int64)
    with pytest.raises(ValueError, match="records"):
        ratio_estimate(RatioSamples(np.zeros(0), np.zeros(0), empty, empty))


def test_ratio_constant_denominator_variance():
    rng = np.random.default_rng(21)
    x = rng.normal(2.0, 0.5, size=300)
    y = np.full(300, 1.7)
    ones = np.ones(300, dtype=np.int64)
    rep = ratio_estimate(RatioSamples(x, y, ones, ones))
    want = math.sqrt(x.var(ddof=1) / (300 * 1.7**2))
    assert abs(rep.std_err - want) < 1e-12
    assert abs(rep.value - x.mean() / 1.7) < 1e-12


def test_taylor_variance_needs_covariance_term():
    """With strongly correlated (x, y) the covariance term is what makes
    the propagated error match the Monte-Carlo spread."""
    rng = np.random.default_rng(9)
    trials, records = 4000, 400
    chol = np.linalg.cholesky(np.array([[0.04, 0.018], [0.018, 0.01]]))
    ones = np.ones(records, dtype=np.int64)
    values, preds, preds_nocov = [], [], []
    for _ in range(trials):
        z = rng.normal(size=(records, 2)) @ chol.T + np.array([2.0, 1.0])
        rep = ratio_estimate(RatioSamples(z[:, 0], z[:, 1], ones, ones))
        values.append(rep.value)
        preds.append(rep.std_err)
        mx, my = z.mean(axis=0)
        preds_nocov.append(
            math.sqrt(
                (z[:, 0].var(ddof=1) / my**2 + mx**2 * z[:, 1].var(ddof=1) / my**4)
                / records
            )
        )
    spread = float(np.std(values, ddof=1))
    spread_err = spread / math.sqrt(2 * (trials - 1))
    assert abs(np.mean(preds) - spread) < 0.05 * spread
    assert abs(np.mean(preds_nocov) - spread) > 3 * (spread_err + np.std(preds_nocov) / math.sqrt(trials))


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.1, max_value=10.0))
def test_ratio_invariant_under_common_scaling(t):
    rng = np.random.default_rng(33)
    x = rng.normal(1.5, 0.3, size=64)
    y = rng.normal(1.0, 0.1, size=64)
    ones = np.ones(64, dtype=np.int64)
    a = ratio_estimate(RatioSamples(x, y, ones, ones))
    b = ratio_estimate(RatioSamples(t * x, t * y, ones, ones))
    assert abs(a.value - b.value) < 1e-9 * max(1.0, abs(a.value))
    assert abs(a.std_err - b.std_err) < 1e-9 * max(1.0, a.std_err)


# ---------------------------------------------------------------------------
# problem validation


def test_problem_requires_identity_first():
    state = StateVector(2, np.array([1, 0, 0, 0], dtype=complex))
    with pytest.raises(ValueError, match="identity"):
        SubspaceProblem((PauliString.from_text("XX"),), TFI_2, state=state)


def test_problem_data_source_exclusivity():
    rng = np.random.default_rng(2)
    povm = build_povm("shadows", 2)
    frame = duals(povm)
    state = random_state(rng, 2)
    ds = sample(povm, state, 10, 1, rng)
    ops = (PauliString.identity(2),)
    with pytest.raises(ValueError, match="not both"):
        SubspaceProblem(ops, TFI_2, povm=povm, dataset=ds, frame=frame, state=state)
    with pytest.raises(ValueError, match="together"):
        SubspaceProblem(ops, TFI_2, povm=povm, dataset=ds)


def test_problem_rejects_mixed_sizes():
    state = StateVector(2, np.array([1, 0, 0, 0], dtype=complex))
    with pytest.raises(ValueError, match="qubit counts"):
        SubspaceProblem(
            (PauliString.identity(3), PauliString.from_text("XXI")), TFI_2, state=state
        )


# ---------------------------------------------------------------------------
# generalized eigenvalue problem


def test_gevp_identity_overlap():
    h = np.array([[2.0, 0.3], [0.3, 1.0]])
    val, vec = gevp_solve(h, np.eye(2))
    assert abs(val - np.linalg.eigvalsh(h)[0]) < 1e-12
    assert abs(vec.conj() @ vec - 1.0) < 1e-12


def test_gevp_eigenprojector_expansion():
    """Expansion in eigenprojectors of H diagonalizes both matrices, so the
    pseudo-eigenvalues are the exact spectrum."""
    rng = np.random.default_rng(40)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    hm = a + a.conj().T
    lam, vecs = np.linalg.eigh(hm)
    rho = np.eye(4) / 8 + np.diag(rng.uniform(0.05, 0.2, size=4))
    rho = rho / np.trace(rho)
    projs = [np.outer(vecs[:, i], vecs[:, i].conj()) for i in range(4)]
    h_mat = np.array([[np.trace(rho @ pj @ hm @ pi) for pj in projs] for pi in projs])
    s_mat = np.array([[np.trace(rho @ pj @ pi) for pj in projs] for pi in projs])
    val, _ = gevp_solve(h_mat, s_mat)
    assert abs(val - lam[0]) < 1e-9


def test_gevp_rank_deficient_overlap_stays_finite():
    # duplicated expansion direction: naive inversion of S is impossible
    h2 = np.array([[1.0, 0.2], [0.2, 0.5]])
    s2 = np.array([[1.0, 0.1], [0.1, 1.0]])
    val2, _ = gevp_solve(h2, s2)
    h3 = np.zeros((3, 3))
    s3 = np.zeros((3, 3))
    h3[:2, :2] = h2
    s3[:2, :2] = s2
    h3[2, :] = h3[1, :]
    h3[:, 2] = h3[:, 1]
    s3[2, :] = s3[1, :]
    s3[:, 2] = s3[:, 1]
    assert abs(np.linalg.cond(s3)) > 1e14
    val3, _ = gevp_solve(h3, s3, eigval_floor=1e-8)
    assert abs(val3 - val2) < 1e-9


def test_gevp_floor_swallows_everything():
    with pytest.raises(ValueError, match="below the floor"):
        gevp_solve(np.eye(2), np.eye(2), eigval_floor=10.0)


def test_gevp_rejects_non_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        gevp_solve(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2))


def test_gevp_unitary_basis_invariance():
    rng = np.random.default_rng(41)
    a = rng.normal(size=(3, 3))
    h = a + a.T
    b = rng.normal(size=(3, 3))
    s = b @ b.T + 0.5 * np.eye(3)
    q = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))[0]
    v1, _ = gevp_solve(h, s)
    v2, _ = gevp_solve(q.conj().T @ h @ q, q.conj().T @ s @ q)
    assert abs(v1 - v2) < 1e-9


# ---------------------------------------------------------------------------
# constrained optimization


def test_pse_oracle_matches_gevp():
    rng = np.random.default_rng(5)
    ham = PauliSum(
        [
            (1.0, PauliString.from_text("ZZI")),
            (1.0, PauliString.from_text("IZZ")),
            (0.7, PauliString.from_text("XII")),
            (0.7, PauliString.from_text("IXI")),
            (0.7, PauliString.from_text("IIX")),
        ]
    )
    state = random_state(rng, 3)
    texts = ("III", "XXI", "ZIZ")
    problem = SubspaceProblem(
        tuple(PauliString.from_text(t) for t in texts), ham, state=state
    )
    rho = np.outer(state.amps, state.amps.conj())
    hm = ham.to_matrix()
    mats = [PauliString.from_text(t).to_matrix() for t in texts]
    h_mat = np.array([[np.trace(rho @ sj @ hm @ si) for sj in mats] for si in mats])
    s_mat = np.array([[np.trace(rho @ sj @ si) for sj in mats] for si in mats])
    g_val, _ = gevp_solve(h_mat, s_mat)
    sol = pse_optimize(problem, math.inf, budget=2000)
    assert sol.converged
    assert abs(sol.energy - g_val) < 1e-6
    assert sol.std_err == 0.0


def test_pse_never_above_unmitigated():
    rng = np.random.default_rng(6)
    povm = build_povm("shadows", 2)
    frame = duals(povm, partition=[(0,), (1,)])
    for trial in range(3):
        state = random_state(rng, 2)
        ds = sample(povm, state, 400, 4, rng)
        problem = SubspaceProblem(
            (PauliString.identity(2), PauliString.from_text("XY")),
            TFI_2, povm=povm, dataset=ds, frame=frame,
        )
        base = ratio_estimate(ratio_terms(problem, [1.0, 0.0]))
        sol = pse_optimize(problem, 2.0 * base.std_err, budget=300)
        assert sol.energy <= base.value + base.std_err + 1e-12
        if sol.converged:
            assert sol.std_err <= sol.eps_max * (1 + 1e-9) + 1e-15
        else:
            assert np.allclose(sol.c, [1.0, 0.0])


def test_pse_tiny_budget_falls_back_to_identity():
    rng = np.random.default_rng(8)
    povm = build_povm("shadows", 2)
    frame = duals(povm, partition=[(0,), (1,)])
    state = random_state(rng, 2)
    ds = sample(povm, state, 100, 4, rng)
    problem = SubspaceProblem(
        (PauliString.identity(2), PauliString.from_text("ZX")),
        TFI_2, povm=povm, dataset=ds, frame=frame,
    )
    base = ratio_estimate(ratio_terms(problem, [1.0, 0.0]))
    sol = pse_optimize(problem, base.std_err * 1e-4, budget=60)
    assert sol.energy <= base.value + 1e-12
    if not sol.converged:
        assert np.allclose(sol.c, [1.0, 0.0])
        assert "no feasible improvement" in sol.message


def test_pse_krylov_improves_noisy_ground_state():
    exact, vec = ground_pair(TFI_2)
    rho = 0.75 * np.outer(vec, vec.conj()) + 0.25 * np.eye(4) / 4
    state = DensityMatrix(2, rho)
    problem = SubspaceProblem((PauliString.identity(2), TFI_2), TFI_2, state=state)
    base = ratio_estimate(ratio_terms(problem, [1.0, 0.0]))
    sol = pse_optimize(problem, math.inf, budget=1500)
    assert sol.converged
    assert sol.energy < base.value - 1e-3
    assert sol.energy >= exact - 1e-9


def test_pse_rejects_nonpositive_eps():
    state = StateVector(2, np.array([1, 0, 0, 0], dtype=complex))
    problem = SubspaceProblem((PauliString.identity(2),), TFI_2, state=state)
    with pytest.raises(ValueError, match="positive"):
        pse_optimize(problem, 0.0)


def test_solution_row_format():
    state = StateVector(2, np.array([1, 0, 0, 0], dtype=complex))
    problem = SubspaceProblem((PauliString.identity(2),), TFI_2, state=state)
    sol = pse_optimize(problem, 1.0)
    row = solution_row(sol, exact=-1.5)
    fields = row.split()
    assert len(fields) == 5
    assert fields[0] == "1"
    assert float(fields[2]) == sol.energy
    assert solution_row(sol).split()[4] == "-"


# ---------------------------------------------------------------------------
# Pauli pool selection


def _ghz_problem():
    ham = PauliSum(
        [
            (-1.0, PauliString.from_text("XXX")),
            (-1.0, PauliString.from_text("ZZI")),
            (-1.0, PauliString.from_text("IZZ")),
        ]
    )
    ghz = np.zeros(8, dtype=complex)
    ghz[0] = ghz[7] = 1 / math.sqrt(2)
    rho = 0.7 * np.outer(ghz, ghz.conj()) + 0.3 * np.eye(8) / 8
    return SubspaceProblem((PauliString.identity(3),), ham, state=DensityMatrix(3, rho))


def test_pool_ranks_ghz_stabilizer_first():
    problem = _ghz_problem()
    # pool_size covers all 27 weight-3 strings, so XXX is guaranteed present
    best = pauli_pool_select(problem, weight=3, pool_size=27, keep=1,
                             rng=np.random.default_rng(0), budget=200)
    assert best[0] == PauliString.from_text("XXX")


def test_pool_deterministic_and_sized():
    problem = _ghz_problem()
    a = pauli_pool_select(problem, 2, 12, 4, np.random.default_rng(5), budget=80)
    b = pauli_pool_select(problem, 2, 12, 4, np.random.default_rng(5), budget=80)
    assert a == b and len(a) == 4
    assert pauli_pool_select(problem, 2, 12, 0, np.random.default_rng(5)) == []


def test_pool_validates_arguments():
    problem = _ghz_problem()
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError, match="pool size"):
        pauli_pool_select(problem, 2, 3, 5, rng)
    with pytest.raises(ValueError, match="weight"):
        pauli_pool_select(problem, 0, 3, 1, rng)
    with pytest.raises(ValueError, match="weight"):
        pauli_pool_select(problem, 4, 3, 1, rng)


# ---------------------------------------------------------------------------
# Krylov operators


def test_krylov_first_order_is_identity():
    ops = krylov_operators(TFI_2, 1)
    assert len(ops) == 1
    assert ops[0] == PauliSum([(1.0, PauliString.identity(2))])


def test_krylov_z_squares_to_identity():
    hz = PauliSum([(1.0, PauliString.from_text("ZI"))])
    ops = krylov_operators(hz, 3)
    assert ops[1] == hz
    assert ops[2] == PauliSum([(1.0, PauliString.identity(2))])


def test_krylov_square_matches_brute_force():
    ham = PauliSum(
        [(1.0, PauliString.from_text(t)) for t in ("ZZII", "IZZI", "IIZZ")]
        + [(0.5, PauliString.from_text(t)) for t in ("XIII", "IXII", "IIXI", "IIIX")]
    )
    sq = krylov_operators(ham, 3)[2]
    acc = {}
    for ca, pa in ham:
        for cb, pb in ham:
            prod = pauli_mul(pa, pb)
            acc[prod.key()] = acc.get(prod.key(), 0j) + ca * cb * 1j**prod.phase_exp
    brute = {k: v for k, v in acc.items() if abs(v) > 1e-12}
    assert len(sq) == len(brute)
    for coeff, p in sq:
        assert abs(coeff - brute[p.key()].real) < 1e-12
    # dense cross-check
    assert np.allclose(sq.to_matrix(), ham.to_matrix() @ ham.to_matrix(), atol=1e-10)


def test_krylov_term_cap():
    with pytest.raises(ValueError, match="cap"):
        krylov_operators(TFI_2, 3, max_terms=2)
    with pytest.raises(ValueError, match="order"):
        krylov_operators(TFI_2, 0)
