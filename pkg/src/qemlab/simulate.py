"""Circuit containers and three simulation engines.

Circuits are ordered layers: per-qubit 2x2 unitaries, or two-qubit
layers acting on disjoint pairs.  A layer whose gates are all Clifford
carries a symplectic tableau; tags name the noise channel a layer picks
up when simulated noisily, so one circuit can run under many models.

Engines:
  * statevector, exact, up to 12 qubits;
  * density matrix with Pauli channels attached by tag, up to 6 qubits,
    each channel acting before the unitary part of its layer;
  * Heisenberg backpropagation through Clifford layers, which scales to
    any width and prices noise as a product of Pauli fidelities along
    the backpropagated path.

Basis convention: computational index bit j is qubit j, so qubit 0 is
the least significant bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import (
    PTM,
    PauliFidelities,
    SPLModel,
    coeffs_to_matrix,
    pauli_coeffs,
    pauli_of_index,
)
from .pauli import (
    CliffordTableau,
    PauliString,
    PauliSum,
    conjugate,
    inverse,
    tableau_from_unitary,
)
from .pauli import compose as compose_tableaus

STATEVECTOR_QUBIT_LIMIT = 12
DENSITY_QUBIT_LIMIT = 6


class NonCliffordError(ValueError):
    """A stabilizer-engine operation hit a non-Clifford layer."""


# ---------------------------------------------------------------------------
# layers and circuits


@dataclass(frozen=True, eq=False)
class SingleQubitLayer:
    n: int
    unitaries: tuple  # one 2x2 per qubit
    tableau: CliffordTableau | None
    tag: str | None = None


@dataclass(frozen=True, eq=False)
class TwoQubitLayer:
    n: int
    pairs: tuple
    unitaries: tuple  # one 4x4 per pair; low bit of the gate index is pair[0]
    tag: str | None
    tableau: CliffordTableau | None


def _embed_local(p: PauliString, qubits, n: int) -> PauliString:
    x = z = 0
    for local, q in enumerate(qubits):
        x |= ((p.x_mask >> local) & 1) << q
        z |= ((p.z_mask >> local) & 1) << q
    return PauliString(n, x, z, p.phase_exp)


def _layer_tableau(n: int, blocks) -> CliffordTableau | None:
    """Assemble a layer tableau from (qubits, local tableau) blocks."""
    xs = list(CliffordTableau.identity(n).x_images)
    zs = list(CliffordTableau.identity(n).z_images)
    for qubits, local in blocks:
        if local is None:
            return None
        for i, q in enumerate(qubits):
            xs[q] = _embed_local(local.x_images[i], qubits, n)
            zs[q] = _embed_local(local.z_images[i], qubits, n)
    return CliffordTableau(n, tuple(xs), tuple(zs))


def _try_tableau(u: np.ndarray) -> CliffordTableau | None:
    try:
        return tableau_from_unitary(u)
    except ValueError:
        return None


def single_qubit_layer(n: int, gates, tag: str | None = None) -> SingleQubitLayer:
    """gates: dict qubit -> 2x2, or a list with one entry per qubit."""
    if isinstance(gates, dict):
        table = [np.eye(2, dtype=complex)] * n
        for q, u in gates.items():
            table[q] = np.asarray(u, dtype=complex)
    else:
        table = [np.asarray(u, dtype=complex) for u in gates]
        if len(table) != n:
            raise ValueError("need one gate per qubit")
    for u in table:
        if u.shape != (2, 2):
            raise ValueError("single-qubit gate must be 2x2")
    blocks = [((q,), _try_tableau(u)) for q, u in enumerate(table)]
    return SingleQubitLayer(n, tuple(table), _layer_tableau(n, blocks), tag)


def two_qubit_layer(n: int, pairs, gates, tag: str | None = None) -> TwoQubitLayer:
    """pairs: disjoint (low, high) qubit pairs; gates: one 4x4 per pair
    or a single matrix shared by all pairs."""
    pairs = tuple((int(a), int(b)) for a, b in pairs)
    seen = set()
    for a, b in pairs:
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"bad pair ({a}, {b})")
        if a in seen or b in seen:
            raise ValueError("pairs overlap")
        seen.update((a, b))
    gates = np.asarray(gates, dtype=complex)
    if gates.ndim == 2:
        mats = tuple(gates for _ in pairs)
    else:
        mats = tuple(np.asarray(g, dtype=complex) for g in gates)
    if len(mats) != len(pairs) or any(m.shape != (4, 4) for m in mats):
        raise ValueError("need one 4x4 gate per pair")
    blocks = [(pq, _try_tableau(m)) for pq, m in zip(pairs, mats)]
    return TwoQubitLayer(n, pairs, mats, tag, _layer_tableau(n, blocks))


@dataclass(frozen=True, eq=False)
class Circuit:
    n: int
    layers: tuple = ()
    prep_tag: str | None = None
    meas_tag: str | None = None

    def __post_init__(self):
        for layer in self.layers:
            if layer.n != self.n:
                raise ValueError("layer width differs from circuit width")

    def is_clifford(self) -> bool:
        return all(layer.tableau is not None for layer in self.layers)

    def tableau(self) -> CliffordTableau:
        t = CliffordTableau.identity(self.n)
        for layer in self.layers:
            if layer.tableau is None:
                raise NonCliffordError("circuit contains a non-Clifford layer")
            t = compose_tableaus(t, layer.tableau)
        return t


# ---------------------------------------------------------------------------
# dense state machinery


@dataclass(frozen=True, eq=False)
class StateVector:
    n: int
    amps: np.ndarray

    def __post_init__(self):
        if self.amps.shape != (1 << self.n,):
            raise ValueError("amplitude count mismatch")
        if abs(np.linalg.norm(self.amps) - 1.0) > 1e-10:
            raise ValueError("state is not normalized")

    @staticmethod
    def zero(n: int) -> "StateVector":
        amps = np.zeros(1 << n, dtype=complex)
        amps[0] = 1.0
        return StateVector(n, amps)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    n: int
    mat: np.ndarray
    check_psd: bool = field(default=True, repr=False)

    def __post_init__(self):
        dim = 1 << self.n
        if self.mat.shape != (dim, dim):
            raise ValueError("density matrix shape mismatch")
        if abs(np.trace(self.mat) - 1.0) > 1e-10:
            raise ValueError("trace is not 1")
        if np.max(np.abs(self.mat - self.mat.conj().T)) > 1e-10:
            raise ValueError("matrix is not Hermitian")
        if self.check_psd and np.linalg.eigvalsh(self.mat)[0] < -1e-10:
            raise ValueError("matrix is not positive semidefinite")

    @staticmethod
    def zero(n: int) -> "DensityMatrix":
        dim = 1 << n
        mat = np.zeros((dim, dim), dtype=complex)
        mat[0, 0] = 1.0
        return DensityMatrix(n, mat)

    @staticmethod
    def from_state(psi: StateVector) -> "DensityMatrix":
        return DensityMatrix(psi.n, np.outer(psi.amps, psi.amps.conj()))


def _apply_1q(tensor: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(u, tensor, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _apply_2q(tensor: np.ndarray, u: np.ndarray, ax_high: int, ax_low: int) -> np.ndarray:
    u4 = u.reshape(2, 2, 2, 2)  # (bra high, bra low, ket high, ket low)
    out = np.tensordot(u4, tensor, axes=([2, 3], [ax_high, ax_low]))
    return np.moveaxis(out, [0, 1], [ax_high, ax_low])


def _apply_layer_axes(tensor, layer, axis_of_qubit, conj=False):
    if isinstance(layer, SingleQubitLayer):
        for q, u in enumerate(layer.unitaries):
            if not np.allclose(u, np.eye(2)):
                tensor = _apply_1q(tensor, u.conj() if conj else u, axis_of_qubit(q))
    else:
        for (a, b), u in zip(layer.pairs, layer.unitaries):
            m = u.conj() if conj else u
            tensor = _apply_2q(tensor, m, axis_of_qubit(b), axis_of_qubit(a))
    return tensor


def run_statevector(c: Circuit, psi0: StateVector | None = None) -> StateVector:
    if c.n > STATEVECTOR_QUBIT_LIMIT:
        raise ValueError(f"statevector engine stops at {STATEVECTOR_QUBIT_LIMIT} qubits")
    psi = psi0 if psi0 is not None else StateVector.zero(c.n)
    t = psi.amps.reshape((2,) * c.n)
    for layer in c.layers:
        t = _apply_layer_axes(t, layer, lambda q: c.n - 1 - q)
    return StateVector(c.n, t.ravel())


def _pauli_index_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.arange(4**n, dtype=np.int64)
    x = np.zeros_like(a)
    z = np.zeros_like(a)
    for j in range(n):
        d = (a >> (2 * j)) & 3
        x |= ((d == 1) | (d == 2)).astype(np.int64) << j
        z |= ((d == 2) | (d == 3)).astype(np.int64) << j
    return x, z


def _parity_under_mask(values: np.ndarray, mask: int) -> np.ndarray:
    out = np.zeros_like(values)
    while mask:
        j = (mask & -mask).bit_length() - 1
        out ^= (values >> j) & 1
        mask &= mask - 1
    return out


def _fidelity_vector(noise, n: int) -> np.ndarray:
    """Diagonal transfer-matrix entries of a Pauli channel, basis order."""
    if isinstance(noise, SPLModel):
        x_of, z_of = _pauli_index_masks(n)
        log_f = np.zeros(4**n)
        for g, r in zip(noise.generators, noise.rates):
            anti = _parity_under_mask(z_of, g.x_mask) ^ _parity_under_mask(x_of, g.z_mask)
            log_f += -2.0 * r * anti
        return np.exp(log_f)
    if isinstance(noise, PauliFidelities):
        vec = np.ones(4**n)
        for a in range(1, 4**n):
            p = pauli_of_index(n, a)
            try:
                vec[a] = noise.get(p)
            except KeyError:
                raise KeyError(f"no fidelity for Pauli {p.to_text()}") from None
        return vec
    raise TypeError(f"unsupported noise entry {type(noise).__name__}")


def _apply_channel(rho: np.ndarray, noise, n: int) -> np.ndarray:
    coeffs = pauli_coeffs(rho)
    if isinstance(noise, PTM):
        coeffs = noise.mat @ coeffs
    else:
        coeffs = coeffs * _fidelity_vector(noise, n)
    return coeffs_to_matrix(coeffs)


def run_density(
    c: Circuit,
    rho0: DensityMatrix | None = None,
    noise: dict | None = None,
    check_psd: bool = True,
) -> DensityMatrix:
    """Apply layers in order; a tagged layer's channel acts before its
    unitary part.  Preparation noise hits the input state, measurement
    noise the final state."""
    if c.n > DENSITY_QUBIT_LIMIT:
        raise ValueError(f"density engine stops at {DENSITY_QUBIT_LIMIT} qubits")
    noise = noise or {}
    rho = (rho0.mat if rho0 is not None else DensityMatrix.zero(c.n).mat).copy()
    if c.prep_tag is not None and c.prep_tag in noise:
        rho = _apply_channel(rho, noise[c.prep_tag], c.n)
    t = rho.reshape((2,) * (2 * c.n))
    for layer in c.layers:
        if layer.tag is not None and layer.tag in noise:
            t = _apply_channel(t.reshape(1 << c.n, 1 << c.n), noise[layer.tag], c.n)
            t = t.reshape((2,) * (2 * c.n))
        t = _apply_layer_axes(t, layer, lambda q: c.n - 1 - q)
        t = _apply_layer_axes(t, layer, lambda q: 2 * c.n - 1 - q, conj=True)
    rho = t.reshape(1 << c.n, 1 << c.n)
    if c.meas_tag is not None and c.meas_tag in noise:
        rho = _apply_channel(rho, noise[c.meas_tag], c.n)
    return DensityMatrix(c.n, rho, check_psd=check_psd)


# ---------------------------------------------------------------------------
# expectations and sampling


def apply_pauli_state(p: PauliString, amps: np.ndarray) -> np.ndarray:
    """P|psi> via bit arithmetic: P|b> = phase * (-1)^<b,z> |b xor x>."""
    dim = amps.size
    idx = np.arange(dim, dtype=np.int64)
    src = idx ^ p.x_mask
    signs = 1.0 - 2.0 * _parity_under_mask(src, p.z_mask)
    phase = 1j ** ((p.phase_exp + (p.x_mask & p.z_mask).bit_count()) % 4)
    return phase * signs * amps[src]


def expectation(state, obs) -> float:
    """<O> for a StateVector or DensityMatrix; obs is a PauliSum or a
    single Hermitian PauliString."""
    if isinstance(obs, PauliString):
        obs = PauliSum([(obs.hermitian_sign(), obs.with_phase(0))])
    total = 0.0
    if isinstance(state, StateVector):
        for coeff, p in obs:
            total += coeff * np.real(np.vdot(state.amps, apply_pauli_state(p, state.amps)))
        return float(total)
    if isinstance(state, DensityMatrix):
        dim = 1 << state.n
        idx = np.arange(dim, dtype=np.int64)
        for coeff, p in obs:
            signs = 1.0 - 2.0 * _parity_under_mask(idx, p.z_mask)
            phase = 1j ** ((p.phase_exp + (p.x_mask & p.z_mask).bit_count()) % 4)
            vals = state.mat[idx, idx ^ p.x_mask] * phase * signs
            total += coeff * np.real(np.sum(vals))
        return float(total)
    raise TypeError(f"unsupported state {type(state).__name__}")


def sample_bits(state, rotations, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Born-rule samples after optional per-qubit basis rotations.

    Returns a (shots, n) uint8 array, qubit j in column j.
    """
    n = state.n
    rot = single_qubit_layer(n, rotations or {})
    if isinstance(state, StateVector):
        t = state.amps.reshape((2,) * n)
        t = _apply_layer_axes(t, rot, lambda q: n - 1 - q)
        probs = np.abs(t.ravel()) ** 2
    else:
        t = state.mat.reshape((2,) * (2 * n))
        t = _apply_layer_axes(t, rot, lambda q: n - 1 - q)
        t = _apply_layer_axes(t, rot, lambda q: 2 * n - 1 - q, conj=True)
        probs = np.real(np.diag(t.reshape(1 << n, 1 << n)))
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    draws = rng.choice(probs.size, size=shots, p=probs)
    bits = np.empty((shots, n), dtype=np.uint8)
    for j in range(n):
        bits[:, j] = (draws >> j) & 1
    return bits


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack (shots, n) bit rows into bytes, little-endian within a row."""
    return np.packbits(bits, axis=1, bitorder="little")


# ---------------------------------------------------------------------------
# Pauli-path engine


@dataclass(frozen=True)
class PauliPath:
    """Backpropagated Paulis a_0 ... a_{T+1} with the accumulated sign.

    a_{T+1} is the measured Pauli; a_k (k >= 1) is the Pauli present
    when layer k's noise acts; a_0 duplicates a_1 at the preparation.
    """

    entries: tuple
    sign: float


def backpropagate(c: Circuit, meas: PauliString) -> PauliPath:
    if meas.n != c.n:
        raise ValueError("measurement width mismatch")
    if meas.phase_exp % 2:
        raise ValueError("measured Pauli must be Hermitian")
    cur = meas.with_phase(0)
    rev = [cur]
    for layer in reversed(c.layers):
        if layer.tableau is None:
            raise NonCliffordError("cannot backpropagate through a non-Clifford layer")
        cur = conjugate(inverse(layer.tableau), cur)
        rev.append(cur.with_phase(0))
    sign = meas.hermitian_sign() * cur.hermitian_sign()
    ordered = list(reversed(rev))
    return PauliPath(tuple([ordered[0]] + ordered), sign)


def noisy_clifford_expectation(c: Circuit, meas: PauliString, gateset=None) -> float:
    """Signed product of Pauli fidelities along the backpropagated path,
    times the ideal +-1/0 expectation on the all-zeros state."""
    path = backpropagate(c, meas)
    a0 = path.entries[0]
    if a0.x_mask:
        return 0.0
    value = path.sign
    if gateset is None:
        return float(value)
    value *= gateset.prep_fidelity(a0)
    for layer, a_k in zip(c.layers, path.entries[1:-1]):
        if layer.tag is not None:
            value *= gateset.layer_fidelity(layer.tag, a_k)
    value *= gateset.meas_fidelity(path.entries[-1])
    return float(value)


# ---------------------------------------------------------------------------
# circuit serialization


def _fmt_complex(v: complex) -> str:
    return f"{v.real:.17g}{v.imag:+.17g}j"


def circuit_to_text(c: Circuit) -> str:
    lines = [f"qubits {c.n}"]
    if c.prep_tag is not None:
        lines.append(f"prep {c.prep_tag}")
    if c.meas_tag is not None:
        lines.append(f"meas {c.meas_tag}")
    for layer in c.layers:
        kind = "1q" if isinstance(layer, SingleQubitLayer) else "2q"
        head = f"layer {kind}"
        if layer.tag is not None:
            head += f" tag {layer.tag}"
        lines.append(head)
        if isinstance(layer, SingleQubitLayer):
            for q, u in enumerate(layer.unitaries):
                if np.allclose(u, np.eye(2)):
                    continue
                vals = " ".join(_fmt_complex(v) for v in u.ravel())
                lines.append(f"gate {q} : {vals}")
        else:
            for (a, b), u in zip(layer.pairs, layer.unitaries):
                vals = " ".join(_fmt_complex(v) for v in u.ravel())
                lines.append(f"gate {a} {b} : {vals}")
        lines.append("end")
    return "\n".join(lines) + "\n"


def circuit_from_text(text: str) -> Circuit:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("qubits "):
        raise ValueError("circuit text must start with a qubits line")
    n = int(lines[0].split()[1])
    prep = meas = None
    layers = []
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "prep":
            prep = parts[1]
            i += 1
        elif parts[0] == "meas":
            meas = parts[1]
            i += 1
        elif parts[0] == "layer":
            kind = parts[1]
            tag = parts[3] if len(parts) > 3 and parts[2] == "tag" else None
            i += 1
            gates_1q: dict[int, np.ndarray] = {}
            pairs, mats = [], []
            while lines[i] != "end":
                head, _, body = lines[i].partition(":")
                idxs = [int(tok) for tok in head.split()[1:]]
                vals = np.array([complex(tok) for tok in body.split()])
                if kind == "1q":
                    gates_1q[idxs[0]] = vals.reshape(2, 2)
                else:
                    pairs.append((idxs[0], idxs[1]))
                    mats.append(vals.reshape(4, 4))
                i += 1
            i += 1  # past 'end'
            if kind == "1q":
                layers.append(single_qubit_layer(n, gates_1q, tag))
            else:
                layers.append(two_qubit_layer(n, pairs, mats, tag))
        else:
            raise ValueError(f"unrecognized circuit line {lines[i]!r}")
    return Circuit(n, tuple(layers), prep, meas)
