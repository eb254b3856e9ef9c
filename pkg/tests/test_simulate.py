"""Engines against each other and against closed-form expectations."""

import numpy as np
import pytest
from scipy.stats import chisquare

from _util import (
    CX_LOW_CONTROL,
    CZ,
    H,
    S,
    T_GATE,
    random_clifford_circuit,
    random_pauli,
)
from qemlab._rng import stream
from qemlab.channels import PauliFidelities, SPLModel, kraus_to_ptm, pauli_of_index
from qemlab.pauli import PauliString, PauliSum
from qemlab.simulate import (
    Circuit,
    DensityMatrix,
    NonCliffordError,
    StateVector,
    backpropagate,
    circuit_from_text,
    circuit_to_text,
    expectation,
    noisy_clifford_expectation,
    run_density,
    run_statevector,
    sample_bits,
    single_qubit_layer,
    two_qubit_layer,
)


def bell_circuit():
    return Circuit(
        2,
        (
            single_qubit_layer(2, {0: H}),
            two_qubit_layer(2, [(0, 1)], CX_LOW_CONTROL),
        ),
    )


def test_empty_circuit_returns_input():
    psi = StateVector.zero(3)
    out = run_statevector(Circuit(3), psi)
    assert np.array_equal(out.amps, psi.amps)


def test_bell_state_correlators():
    psi = run_statevector(bell_circuit())
    want = np.zeros(4, dtype=complex)
    want[0] = want[3] = 1 / np.sqrt(2)
    assert np.allclose(psi.amps, want)
    assert abs(expectation(psi, PauliString.from_text("ZZ")) - 1) < 1e-12
    assert abs(expectation(psi, PauliString.from_text("XX")) - 1) < 1e-12


def test_qubit_zero_is_low_bit_fixture():
    # X on qubit 0 of |000> populates index 1; X on qubit 2 index 4
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    out0 = run_statevector(Circuit(3, (single_qubit_layer(3, {0: x}),)))
    assert abs(out0.amps[1] - 1) < 1e-12
    out2 = run_statevector(Circuit(3, (single_qubit_layer(3, {2: x}),)))
    assert abs(out2.amps[4] - 1) < 1e-12
    # CZ on (0, 2) flips the sign of |101> = index 5
    plus = np.full(8, 1 / np.sqrt(8), dtype=complex)
    out = run_statevector(
        Circuit(3, (two_qubit_layer(3, [(0, 2)], CZ),)), StateVector(3, plus)
    )
    signs = np.sign(out.amps.real)
    assert list(signs) == [1, 1, 1, 1, 1, -1, 1, -1]


def test_statevector_matches_dense_matmul():
    rng = np.random.default_rng(0)
    n = 3
    c = random_clifford_circuit(rng, n, 6)
    psi = run_statevector(c)
    # dense oracle: build the full unitary by running basis states
    u = np.zeros((8, 8), dtype=complex)
    for b in range(8):
        amps = np.zeros(8, dtype=complex)
        amps[b] = 1.0
        u[:, b] = run_statevector(c, StateVector(n, amps)).amps
    assert np.allclose(u @ np.eye(8)[:, 0], psi.amps)
    assert np.allclose(u @ u.conj().T, np.eye(8), atol=1e-12)


def test_dephasing_on_plus_state():
    t_over_tphi = 0.35
    pz = 1 - np.exp(-t_over_tphi)
    kraus = [
        np.sqrt(1 - pz) * np.eye(2, dtype=complex),
        np.sqrt(pz) * np.diag([1.0, -1.0]).astype(complex),
    ]
    c = Circuit(
        1,
        (
            single_qubit_layer(1, {0: H}),
            single_qubit_layer(1, {}, tag="idle"),
        ),
    )
    rho = run_density(c, noise={"idle": kraus_to_ptm(kraus)})
    got = expectation(rho, PauliString.from_text("X"))
    assert abs(got - (2 * np.exp(-t_over_tphi) - 1)) < 1e-12


def test_density_matches_statevector_when_noiseless():
    rng = np.random.default_rng(1)
    c = random_clifford_circuit(rng, 3, 5)
    psi = run_statevector(c)
    rho = run_density(c)
    assert np.allclose(rho.mat, np.outer(psi.amps, psi.amps.conj()), atol=1e-12)


def test_expectation_identity_and_z():
    psi = StateVector.zero(1)
    assert expectation(psi, PauliString.from_text("I")) == 1.0
    one = StateVector(1, np.array([0, 1], dtype=complex))
    assert expectation(one, PauliString.from_text("Z")) == -1.0


def test_expectation_pauli_sum():
    psi = run_statevector(bell_circuit())
    obs = PauliSum(
        [
            (0.5, PauliString.from_text("ZZ")),
            (0.25, PauliString.from_text("XX")),
            (3.0, PauliString.from_text("ZI")),
        ]
    )
    assert abs(expectation(psi, obs) - 0.75) < 1e-12


def test_expectation_density_matches_statevector():
    rng = np.random.default_rng(2)
    c = random_clifford_circuit(rng, 3, 4)
    psi = run_statevector(c)
    rho = DensityMatrix.from_state(psi)
    for _ in range(20):
        p = random_pauli(rng, 3)
        assert abs(expectation(psi, p) - expectation(rho, p)) < 1e-12


def test_sampling_chi_square():
    rng = np.random.default_rng(42)
    amps = rng.normal(size=8) + 1j * rng.normal(size=8)
    amps /= np.linalg.norm(amps)
    psi = StateVector(3, amps)
    shots = 100_000
    bits = sample_bits(psi, None, shots, stream(7, "sampling-test"))
    assert bits.shape == (shots, 3)
    counts = np.bincount(bits @ (1 << np.arange(3)), minlength=8)
    expected = np.abs(amps) ** 2 * shots
    assert expected.min() > 20
    _, p = chisquare(counts, expected)
    assert p > 0.001


def test_sampling_with_rotation():
    # measuring |+> in the X basis is deterministic
    psi = run_statevector(Circuit(1, (single_qubit_layer(1, {0: H}),)))
    bits = sample_bits(psi, {0: H}, 500, stream(8, "sampling-test"))
    assert np.all(bits == 0)


# ---------------------------------------------------------------------------
# backpropagation


def test_backpropagate_identity_circuit():
    meas = PauliString.from_text("XZ")
    path = backpropagate(Circuit(2), meas)
    assert path.entries == (meas, meas)
    assert path.sign == 1.0


def test_backpropagate_cnot_ends_at_xx():
    c = Circuit(2, (two_qubit_layer(2, [(0, 1)], CX_LOW_CONTROL),))
    path = backpropagate(c, PauliString.from_text("XI"))
    assert path.entries[0].to_text() == "XX"
    assert path.entries[1].to_text() == "XX"
    assert path.entries[2].to_text() == "XI"
    assert path.sign == 1.0


def test_backpropagate_tracks_signs():
    # Sdag X S = -Y, so measuring X after an S gate reads -<Y> before it
    c = Circuit(1, (single_qubit_layer(1, {0: S}),))
    path = backpropagate(c, PauliString.from_text("X"))
    assert path.entries[0].to_text() == "Y"
    assert path.sign == -1.0
    # and the sign squares away over two S gates: X -> -(-X) ... -> -X
    c2 = Circuit(1, (single_qubit_layer(1, {0: S}),) * 2)
    path2 = backpropagate(c2, PauliString.from_text("X"))
    assert path2.entries[0].to_text() == "X"
    assert path2.sign == -1.0


def test_backpropagate_rejects_non_clifford():
    c = Circuit(1, (single_qubit_layer(1, {0: T_GATE}),))
    with pytest.raises(NonCliffordError):
        backpropagate(c, PauliString.from_text("X"))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_stabilizer_agrees_with_statevector(n):
    rng = stream(11, "stabilizer-vs-dense", n)
    for rep in range(67):
        c = random_clifford_circuit(rng, n, int(rng.integers(1, 11)))
        meas = random_pauli(rng, n)
        ideal = noisy_clifford_expectation(c, meas, None)
        dense = expectation(run_statevector(c), meas)
        assert abs(ideal - dense) < 1e-12


# ---------------------------------------------------------------------------
# noisy path pricing


class StubGateset:
    """Pattern-indexed SPAM plus one SPL model per layer tag."""

    def __init__(self, n, prep, meas, layer_models):
        self.n = n
        self.prep = prep
        self.meas = meas
        self.layer_models = layer_models

    def prep_fidelity(self, p):
        return self.prep[p.support]

    def meas_fidelity(self, p):
        return self.meas[p.support]

    def layer_fidelity(self, tag, p):
        model = self.layer_models[tag]
        total = sum(
            r
            for g, r in zip(model.generators, model.rates)
            if ((g.x_mask & p.z_mask).bit_count() + (g.z_mask & p.x_mask).bit_count()) % 2
        )
        return float(np.exp(-2.0 * total))


def pattern_fidelities(n, table):
    entries = []
    for a in range(1, 4**n):
        p = pauli_of_index(n, a)
        entries.append((p, table[p.support]))
    return PauliFidelities(n, entries)


def random_gateset(rng, n):
    prep = {m: float(rng.uniform(0.9, 1.0)) if m else 1.0 for m in range(1 << n)}
    meas = {m: float(rng.uniform(0.9, 1.0)) if m else 1.0 for m in range(1 << n)}
    k = min(5, 4**n - 1)
    picks = rng.choice(np.arange(1, 4**n), size=k, replace=False)
    gens = tuple(pauli_of_index(n, int(a)) for a in picks)
    model = SPLModel(gens, rng.uniform(0.0, 0.05, size=k))
    return StubGateset(n, prep, meas, {"ent": model})


@pytest.mark.parametrize("n", [2, 3, 4])
def test_noisy_path_matches_density_engine(n):
    rng = stream(13, "noisy-path-vs-density", n)
    gateset = random_gateset(rng, n)
    noise = {
        "sp": pattern_fidelities(n, gateset.prep),
        "ro": pattern_fidelities(n, gateset.meas),
        "ent": gateset.layer_models["ent"],
    }
    for rep in range(8):
        c = random_clifford_circuit(
            rng, n, int(rng.integers(2, 7)), tag="ent", prep_tag="sp", meas_tag="ro"
        )
        meas = random_pauli(rng, n)
        got = noisy_clifford_expectation(c, meas, gateset)
        # random pattern tables need not be CP maps; values still compare
        rho = run_density(c, noise=noise, check_psd=False)
        want = expectation(rho, meas)
        assert abs(got - want) < 1e-10


def test_noisy_path_depth_zero_spam_product():
    n = 2
    rng = stream(14, "depth-zero")
    gs = random_gateset(rng, n)
    c = Circuit(n, (), prep_tag="sp", meas_tag="ro")
    z0 = PauliString.from_text("ZI")
    got = noisy_clifford_expectation(c, z0, gs)
    assert abs(got - gs.prep[1] * gs.meas[1]) < 1e-15


def test_noisy_path_x_type_start_gives_zero():
    gs = random_gateset(stream(15, "xtype"), 2)
    c = Circuit(2, ())
    assert noisy_clifford_expectation(c, PauliString.from_text("XI"), gs) == 0.0


def test_missing_fidelity_reports_pauli():
    n = 2
    gs = StubGateset(n, {0: 1.0}, {0: 1.0, 1: 0.9, 2: 0.9, 3: 0.9}, {})
    c = Circuit(n, (), prep_tag="sp", meas_tag="ro")
    with pytest.raises(KeyError):
        noisy_clifford_expectation(c, PauliString.from_text("ZI"), gs)


# ---------------------------------------------------------------------------
# containers and serialization


def test_state_validation():
    with pytest.raises(ValueError):
        StateVector(1, np.array([1.0, 1.0], dtype=complex))
    with pytest.raises(ValueError):
        DensityMatrix(1, np.array([[0.5, 0.6], [0.6, 0.5]], dtype=complex))


def test_two_qubit_layer_rejects_overlap():
    with pytest.raises(ValueError):
        two_qubit_layer(3, [(0, 1), (1, 2)], CZ)


def test_circuit_text_roundtrip():
    rng = np.random.default_rng(3)
    c = random_clifford_circuit(rng, 3, 5, tag="ent", prep_tag="sp", meas_tag="ro")
    back = circuit_from_text(circuit_to_text(c))
    assert back.n == c.n
    assert back.prep_tag == "sp" and back.meas_tag == "ro"
    assert len(back.layers) == len(c.layers)
    assert np.allclose(run_statevector(back).amps, run_statevector(c).amps)
    tags = [getattr(layer, "tag", None) for layer in back.layers]
    assert "ent" in tags


def test_circuit_text_non_clifford_roundtrip():
    c = Circuit(1, (single_qubit_layer(1, {0: T_GATE}),))
    back = circuit_from_text(circuit_to_text(c))
    assert back.layers[0].tableau is None
    assert np.allclose(back.layers[0].unitaries[0], T_GATE)
