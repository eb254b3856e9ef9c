"""Channel machinery against dense superoperator oracles."""

import numpy as np
import pytest
from scipy.linalg import expm

from qemlab.channels import (
    GaugeParams,
    PTM,
    PauliFidelities,
    SPLModel,
    coeffs_to_matrix,
    compose,
    depolarizing_ptm,
    gauge_layer_fidelities,
    kraus_to_ptm,
    pauli_coeffs,
    pauli_of_index,
    ptm_index,
    quasi_inverse_ptm,
    spl_fidelities,
    spl_inverse,
    spl_ptm,
    twirl,
    unitary_to_ptm,
)
from qemlab.pauli import PauliString, tableau_from_unitary


def dense_ptm_oracle(apply_channel, n):
    """T[a,b] = Tr[P_a Lambda(P_b)] / 2^n straight from the definition."""
    dim = 4**n
    t = np.empty((dim, dim))
    for b in range(dim):
        out = apply_channel(pauli_of_index(n, b).to_matrix())
        for a in range(dim):
            pa = pauli_of_index(n, a).to_matrix()
            val = np.trace(pa @ out) / 2**n
            assert abs(val.imag) < 1e-12
            t[a, b] = val.real
    return t


def lindblad_superop(model):
    """Column-stacking superoperator of sum_i rate_i (P.P - id)."""
    n = model.n
    dim = 1 << n
    ell = np.zeros((dim * dim, dim * dim), dtype=complex)
    for g, r in zip(model.generators, model.rates):
        pm = g.to_matrix()
        ell += r * (np.kron(pm.conj(), pm) - np.eye(dim * dim))
    return expm(ell)


def channel_from_superop(s, n):
    dim = 1 << n

    def apply(mat):
        return (s @ mat.reshape(-1, order="F")).reshape(dim, dim, order="F")

    return apply


def test_ptm_index_order():
    assert ptm_index(PauliString.from_text("XI")) == 1
    assert ptm_index(PauliString.from_text("IX")) == 4
    assert ptm_index(PauliString.from_text("ZY")) == 11
    for a in range(16):
        assert ptm_index(pauli_of_index(2, a)) == a


def test_pauli_coeffs_match_trace_formula():
    rng = np.random.default_rng(3)
    n = 3
    m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    got = pauli_coeffs(m)
    for a in (0, 1, 5, 17, 42, 63):
        pa = pauli_of_index(n, a).to_matrix()
        assert abs(got[a] - np.trace(pa @ m) / 8) < 1e-12
    assert np.allclose(coeffs_to_matrix(got), m)


def test_spl_single_x_generator():
    lam = 0.07
    model = SPLModel((PauliString.from_text("X"),), np.array([lam]))
    f = spl_fidelities(
        model, [PauliString.from_text(s) for s in ("X", "Y", "Z")]
    )
    assert f.get(PauliString.from_text("X")) == 1.0
    assert abs(f.get(PauliString.from_text("Y")) - np.exp(-2 * lam)) < 1e-15
    assert abs(f.get(PauliString.from_text("Z")) - np.exp(-2 * lam)) < 1e-15
    # dense oracle: exponentiate the one-generator Lindbladian
    oracle = dense_ptm_oracle(channel_from_superop(lindblad_superop(model), 1), 1)
    assert np.allclose(np.diag(oracle), [1, 1, np.exp(-2 * lam), np.exp(-2 * lam)])


def test_spl_zero_rates_identity():
    model = SPLModel(
        (PauliString.from_text("XX"), PauliString.from_text("ZI")), np.zeros(2)
    )
    qs = [pauli_of_index(2, a) for a in range(1, 16)]
    f = spl_fidelities(model, qs)
    assert all(v == 1.0 for _, v in f.items())


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_spl_matches_dense_exponential(seed, n):
    rng = np.random.default_rng(seed)
    dim = 1 << n
    picks = rng.choice(np.arange(1, 4**n), size=min(4, 4**n - 1), replace=False)
    gens = tuple(pauli_of_index(n, int(a)) for a in picks)
    rates = rng.uniform(0.0, 0.2, size=len(gens))
    model = SPLModel(gens, rates)
    oracle = dense_ptm_oracle(channel_from_superop(lindblad_superop(model), n), n)
    got = spl_ptm(model)
    assert np.allclose(got.mat, oracle, atol=1e-10)


def test_spl_inverse_formulas():
    lam = 0.05
    inv = spl_inverse(SPLModel((PauliString.from_text("X"),), np.array([lam])))
    assert abs(inv.w[0] - (1 + np.exp(-0.1)) / 2) < 1e-15
    assert abs(inv.gamma - np.exp(0.1)) < 1e-15


def test_spl_inverse_zero_rates_trivial():
    inv = spl_inverse(SPLModel((PauliString.from_text("XY"),), np.zeros(1)))
    assert inv.w[0] == 1.0 and inv.gamma == 1.0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_spl_inverse_cancels_channel(n):
    rng = np.random.default_rng(10 + n)
    picks = rng.choice(np.arange(1, 4**n), size=min(5, 4**n - 1), replace=False)
    gens = tuple(pauli_of_index(n, int(a)) for a in picks)
    model = SPLModel(gens, rng.uniform(0.0, 0.15, size=len(gens)))
    prod = compose(spl_ptm(model), quasi_inverse_ptm(spl_inverse(model)))
    assert np.allclose(prod.mat, np.eye(4**n), atol=1e-12)


def test_twirl_amplitude_damping():
    t_over_t1 = 0.3
    p = 1 - np.exp(-t_over_t1)
    kraus = [
        np.array([[1, 0], [0, np.sqrt(1 - p)]], dtype=complex),
        np.array([[0, np.sqrt(p)], [0, 0]], dtype=complex),
    ]
    ptm = kraus_to_ptm(kraus)
    # affine part: the Z row picks up a constant offset from the identity
    assert abs(ptm.mat[3, 0] - p) < 1e-12
    out = twirl(ptm)
    want = np.diag([1, np.exp(-t_over_t1 / 2), np.exp(-t_over_t1 / 2), np.exp(-t_over_t1)])
    assert np.allclose(out.mat, want, atol=1e-12)
    # literal average over the four Pauli conjugations
    acc = np.zeros((4, 4))
    for a in range(4):
        s = np.array(
            [unitary_to_ptm(pauli_of_index(1, a).to_matrix()).mat[b, b] for b in range(4)]
        )
        acc += (s[:, None] * ptm.mat) * s[None, :]
    assert np.allclose(acc / 4, out.mat, atol=1e-12)


def test_twirl_preserves_diagonal_and_kills_offdiagonal():
    rng = np.random.default_rng(5)
    u = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))[0]
    ptm = unitary_to_ptm(u)
    out = twirl(ptm)
    assert np.allclose(np.diag(out.mat), np.diag(ptm.mat))
    off = out.mat - np.diag(np.diag(out.mat))
    assert np.max(np.abs(off)) < 1e-14


def test_dephasing_kraus_gives_pauli_channel():
    t_over_tphi = 0.4
    pz = 1 - np.exp(-t_over_tphi)  # phase-flip weight
    kraus = [
        np.sqrt(1 - pz) * np.eye(2, dtype=complex),
        np.sqrt(pz) * np.diag([1, -1]).astype(complex),
    ]
    ptm = kraus_to_ptm(kraus)
    f = 2 * np.exp(-t_over_tphi) - 1
    assert np.allclose(ptm.mat, np.diag([1, f, f, 1]), atol=1e-12)


def test_generalized_amplitude_damping_long_time_thermalizes():
    pop = 0.7  # ground-state weight
    kraus = [
        np.sqrt(pop) * np.array([[1, 0], [0, 0]], dtype=complex),
        np.sqrt(pop) * np.array([[0, 1], [0, 0]], dtype=complex),
        np.sqrt(1 - pop) * np.array([[0, 0], [0, 1]], dtype=complex),
        np.sqrt(1 - pop) * np.array([[0, 0], [1, 0]], dtype=complex),
    ]
    ptm = kraus_to_ptm(kraus)
    rng = np.random.default_rng(8)
    m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = m @ m.conj().T
    rho /= np.trace(rho).real
    out = coeffs_to_matrix(ptm.apply(pauli_coeffs(rho)))
    want = np.diag([pop, 1 - pop])
    assert np.allclose(out, want, atol=1e-12)


def test_kraus_requires_trace_preservation():
    with pytest.raises(ValueError):
        kraus_to_ptm([0.5 * np.eye(2, dtype=complex)])


def test_kraus_to_ptm_matches_trace_oracle():
    rng = np.random.default_rng(11)
    u = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))[0]
    got = unitary_to_ptm(u)
    want = dense_ptm_oracle(lambda m: u @ m @ u.conj().T, 2)
    assert np.allclose(got.mat, want, atol=1e-12)


def test_compose_is_identity_neutral():
    rng = np.random.default_rng(12)
    u = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))[0]
    lam = unitary_to_ptm(u)
    assert np.allclose(compose(PTM.identity(2), lam).mat, lam.mat)
    assert np.allclose(compose(lam, PTM.identity(2)).mat, lam.mat)


def test_dense_cap():
    with pytest.raises(ValueError):
        PTM.identity(7)


# ---------------------------------------------------------------------------
# gauge machinery


def test_depolarizing_zero_is_identity():
    assert np.allclose(depolarizing_ptm(GaugeParams.zero(2)).mat, np.eye(16))
    assert np.allclose(depolarizing_ptm(GaugeParams.zero(2, "local")).mat, np.eye(16))


def test_depolarizing_local_rates():
    eta = GaugeParams(2, "local", np.array([np.log(2), 0.0]))
    diag = np.diag(depolarizing_ptm(eta).mat)
    for a in range(16):
        p = pauli_of_index(2, a)
        want = 0.5 if (p.support & 1) else 1.0
        assert abs(diag[a] - want) < 1e-15
    assert np.all(diag > 0)


def test_gauge_layer_matches_dense_conjugation():
    rng = np.random.default_rng(21)
    n = 2
    # random diagonal layer channel and a Clifford action
    fid_entries = [
        (pauli_of_index(n, a), rng.uniform(0.8, 1.0)) for a in range(1, 4**n)
    ]
    f = PauliFidelities(n, fid_entries)
    cnot = np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    )
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    u = cnot @ np.kron(h, np.eye(2))
    tab = tableau_from_unitary(u)
    eta = GaugeParams(n, "full", np.concatenate([[0.0], rng.uniform(-0.1, 0.1, 3)]))

    fprime = gauge_layer_fidelities(f, eta, tab)
    g_ptm = unitary_to_ptm(u)
    lhs = compose(g_ptm, PTM.from_fidelities(fprime)).mat
    d = depolarizing_ptm(eta).mat
    d_inv = np.diag(1.0 / np.diag(d))
    rhs = d @ g_ptm.mat @ PTM.from_fidelities(f).mat @ d_inv
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_gauge_identity_leaves_fidelities():
    f = PauliFidelities(1, [(PauliString.from_text("X"), 0.9)])
    tab = tableau_from_unitary(np.eye(2, dtype=complex))
    out = gauge_layer_fidelities(f, GaugeParams.zero(1), tab)
    assert out.get(PauliString.from_text("X")) == 0.9


# ---------------------------------------------------------------------------
# serialization


def test_fidelity_pairs_roundtrip():
    f = PauliFidelities(
        2,
        [
            (PauliString.from_text("XI"), 0.987654321012345678),
            (PauliString.from_text("ZZ"), 0.91),
        ],
    )
    pairs = [(t, float(f"{v:.17g}")) for t, v in f.to_pairs()]
    back = PauliFidelities.from_pairs(pairs)
    for p, v in f.items():
        assert back.get(p) == v


def test_spl_pairs_roundtrip():
    model = SPLModel(
        (PauliString.from_text("XI"), PauliString.from_text("ZZ")),
        np.array([0.0123456789012345678, 0.2]),
    )
    pairs = [(t, float(f"{v:.17g}")) for t, v in model.to_pairs()]
    back = SPLModel.from_pairs(pairs)
    assert back.generators == model.generators
    assert np.array_equal(back.rates, model.rates)


def test_fidelities_flag_nonphysical():
    f = PauliFidelities(1, [(PauliString.from_text("X"), 1.05)])
    assert not f.physical
    g = PauliFidelities(1, [(PauliString.from_text("X"), 0.95)])
    assert g.physical


def test_spl_rejects_identity_and_duplicates():
    with pytest.raises(ValueError):
        SPLModel((PauliString.identity(2),), np.array([0.1]))
    with pytest.raises(ValueError):
        SPLModel(
            (PauliString.from_text("XI"), PauliString.from_text("XI")),
            np.array([0.1, 0.2]),
        )
