"""Pauli channels, sparse Pauli-Lindblad models, and transfer matrices.

A Pauli channel is stored by its fidelities f_P: the channel acts as
P -> f_P * P on every Pauli.  Sparse Pauli-Lindblad (SPL) models hold a
generator set with rates; the channel they generate has

    f_Q = exp(-2 * sum of rates over generators anticommuting with Q).

Dense transfer matrices index Paulis as a = sum_j d_j 4^j with digits
I=0, X=1, Y=2, Z=3 and qubit 0 the fastest axis.  They are capped at
six qubits so a typo cannot allocate gigabytes.

Composition follows mathematical order: compose(a, b) applies b first.

Gauge freedom: a generalized depolarizing map D_eta with pattern-level
rates can be pushed through state preparation, measurement, and every
Clifford layer without changing any prepare-run-measure expectation
value.  ``gauge_transform`` applies that rewrite to a full gate-set
noise model; models leaving the physical region (fidelities above 1,
negative rates) are flagged, not rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .pauli import CliffordTableau, PauliString, anticommutes, conjugate, pattern

DENSE_QUBIT_LIMIT = 6

# single-qubit Pauli transform pair: W maps the (row,col) axis of a matrix
# to Pauli coefficients, V maps back; e = 2*i + j indexes the matrix entry
_W = 0.5 * np.array(
    [
        [1, 0, 0, 1],
        [0, 1, 1, 0],
        [0, 1j, -1j, 0],
        [1, 0, 0, -1],
    ],
    dtype=complex,
)
_V = np.array(
    [
        [1, 0, 0, 1],
        [0, 1, -1j, 0],
        [0, 1, 1j, 0],
        [1, 0, 0, -1],
    ],
    dtype=complex,
)

_DIGIT_OF_BITS = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}
_BITS_OF_DIGIT = {d: bits for bits, d in _DIGIT_OF_BITS.items()}


def _check_dense(n: int):
    if n > DENSE_QUBIT_LIMIT:
        raise ValueError(f"dense transfer matrices stop at {DENSE_QUBIT_LIMIT} qubits, got {n}")


def ptm_index(p: PauliString) -> int:
    """Canonical basis index of an (unsigned) Pauli string."""
    a = 0
    for j in range(p.n):
        bits = ((p.x_mask >> j) & 1, (p.z_mask >> j) & 1)
        a += _DIGIT_OF_BITS[bits] * 4**j
    return a


def pauli_of_index(n: int, a: int) -> PauliString:
    x = z = 0
    for j in range(n):
        xb, zb = _BITS_OF_DIGIT[(a >> (2 * j)) & 3]
        x |= xb << j
        z |= zb << j
    return PauliString(n, x, z, 0)


def index_pattern(n: int, a: int) -> int:
    """Support mask of the Pauli with basis index a."""
    mask = 0
    for j in range(n):
        if (a >> (2 * j)) & 3:
            mask |= 1 << j
    return mask


def pauli_coeffs(mat: np.ndarray) -> np.ndarray:
    """Coefficients c_a = Tr[P_a M] / 2^n for a dense matrix M."""
    dim = mat.shape[0]
    n = dim.bit_length() - 1
    _check_dense(n)
    t = mat.reshape((2,) * (2 * n))
    perm = [ax for q in range(n) for ax in (q, n + q)]
    t = np.transpose(t, perm).reshape((4,) * n)
    for ax in range(n):
        t = np.moveaxis(np.tensordot(_W, t, axes=([1], [ax])), 0, ax)
    return t.ravel()


def coeffs_to_matrix(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of pauli_coeffs: M = sum_a c_a P_a."""
    n = (coeffs.size.bit_length() - 1) // 2
    _check_dense(n)
    t = np.asarray(coeffs, dtype=complex).reshape((4,) * n)
    for ax in range(n):
        t = np.moveaxis(np.tensordot(_V, t, axes=([1], [ax])), 0, ax)
    t = t.reshape((2, 2) * n)
    perm = [2 * q for q in range(n)] + [2 * q + 1 for q in range(n)]
    return np.transpose(t, perm).reshape((1 << n, 1 << n))


# ---------------------------------------------------------------------------
# Pauli fidelities


class PauliFidelities:
    """Mapping from unsigned Pauli strings to channel fidelities."""

    __slots__ = ("n", "table")

    def __init__(self, n: int, entries):
        self.n = n
        table: dict[tuple[int, int], float] = {}
        for p, f in entries:
            if p.n != n:
                raise ValueError("fidelity entry size mismatch")
            if not np.isfinite(f):
                raise ValueError("non-finite fidelity")
            if p.is_identity():
                if abs(f - 1.0) > 1e-12:
                    raise ValueError("identity fidelity must be 1")
                continue
            table[p.key()] = float(f)
        self.table = table

    def get(self, p: PauliString) -> float:
        if p.is_identity():
            return 1.0
        return self.table[p.key()]

    def __contains__(self, p: PauliString) -> bool:
        return p.is_identity() or p.key() in self.table

    def items(self):
        for (z, x), f in sorted(self.table.items()):
            yield PauliString(self.n, x, z, 0), f

    def __len__(self):
        return len(self.table)

    @property
    def physical(self) -> bool:
        """False when any fidelity leaves [-1, 1] (a gauged model)."""
        return all(abs(f) <= 1 + 1e-12 for f in self.table.values())

    def to_pairs(self) -> list[tuple[str, float]]:
        return [(p.to_text(), f) for p, f in self.items()]

    @staticmethod
    def from_pairs(pairs) -> "PauliFidelities":
        parsed = [(PauliString.from_text(t), float(f)) for t, f in pairs]
        if not parsed:
            raise ValueError("empty fidelity table")
        return PauliFidelities(parsed[0][0].n, parsed)


@dataclass(frozen=True)
class SPLModel:
    """Sparse Pauli-Lindblad model: generator Paulis with rates."""

    generators: tuple[PauliString, ...]
    rates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=float))
        if len(self.generators) != self.rates.size:
            raise ValueError("generator/rate count mismatch")
        if not all(np.isfinite(self.rates)):
            raise ValueError("non-finite rate")
        seen = set()
        for g in self.generators:
            if g.is_identity():
                raise ValueError("identity generator is not allowed")
            if g.key() in seen:
                raise ValueError(f"duplicate generator {g.to_text()}")
            seen.add(g.key())

    @property
    def n(self) -> int:
        return self.generators[0].n if self.generators else 0

    @property
    def physical(self) -> bool:
        return bool(np.all(self.rates >= 0))

    def to_pairs(self) -> list[tuple[str, float]]:
        return [(g.to_text(), float(r)) for g, r in zip(self.generators, self.rates)]

    @staticmethod
    def from_pairs(pairs) -> "SPLModel":
        gens = tuple(PauliString.from_text(t) for t, _ in pairs)
        rates = np.array([float(r) for _, r in pairs])
        return SPLModel(gens, rates)


def spl_fidelities(model: SPLModel, queries: list[PauliString]) -> PauliFidelities:
    """Fidelities of the channel generated by an SPL model."""
    if not queries:
        raise ValueError("no query Paulis")
    n = queries[0].n
    entries = []
    for q in queries:
        if q.n != n or (model.generators and model.n != n):
            raise ValueError("query size mismatch")
        expo = sum(
            r for g, r in zip(model.generators, model.rates) if anticommutes(g, q)
        )
        entries.append((q, float(np.exp(-2.0 * expo))))
    return PauliFidelities(n, entries)


@dataclass(frozen=True)
class QuasiInverse:
    """Quasi-probability form of an inverted SPL channel.

    Each generator is kept with probability w_i; the complementary
    branch conjugates by the generator and flips the estimator sign.
    gamma is the sampling overhead multiplying every estimate.
    """

    generators: tuple[PauliString, ...]
    w: np.ndarray
    gamma: float

    def sample(self, rng: np.random.Generator) -> tuple[float, PauliString]:
        """Draw one insertion: (sign, merged Pauli to apply)."""
        n = self.generators[0].n if self.generators else 0
        sign = 1.0
        x = z = 0
        for g, wi in zip(self.generators, self.w):
            if rng.random() >= wi:
                sign = -sign
                x ^= g.x_mask
                z ^= g.z_mask
        return sign, PauliString(n, x, z, 0)


def spl_inverse(model: SPLModel) -> QuasiInverse:
    w = (1.0 + np.exp(-2.0 * model.rates)) / 2.0
    gamma = float(np.exp(2.0 * np.sum(model.rates)))
    return QuasiInverse(model.generators, w, gamma)


# ---------------------------------------------------------------------------
# dense transfer matrices


@dataclass(frozen=True)
class PTM:
    """Dense real transfer matrix in the Pauli basis."""

    n: int
    mat: np.ndarray

    def __post_init__(self):
        _check_dense(self.n)
        dim = 4**self.n
        if self.mat.shape != (dim, dim):
            raise ValueError("transfer matrix shape mismatch")

    @staticmethod
    def identity(n: int) -> "PTM":
        _check_dense(n)
        return PTM(n, np.eye(4**n))

    @staticmethod
    def from_fidelities(f: PauliFidelities) -> "PTM":
        _check_dense(f.n)
        diag = np.ones(4**f.n)
        for p, fp in f.items():
            diag[ptm_index(p)] = fp
        return PTM(f.n, np.diag(diag))

    def diagonal_fidelities(self) -> PauliFidelities:
        entries = [
            (pauli_of_index(self.n, a), self.mat[a, a]) for a in range(1, 4**self.n)
        ]
        return PauliFidelities(self.n, entries)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return self.mat @ coeffs


def compose(a: PTM, b: PTM) -> PTM:
    """Mathematical composition a after b: matrix product a.mat @ b.mat."""
    if a.n != b.n:
        raise ValueError("transfer matrix sizes differ")
    return PTM(a.n, a.mat @ b.mat)


def twirl(channel: PTM) -> PTM:
    """Average over conjugation by all 4^n Paulis.

    Conjugating by P flips the sign of row a and column b whenever P
    anticommutes with the respective Pauli; averaging the 4^n sign
    patterns cancels every off-diagonal entry exactly, so the twirl is
    the diagonal part of the input.
    """
    return PTM(channel.n, np.diag(np.diag(channel.mat).copy()))


def kraus_to_ptm(kraus: list[np.ndarray]) -> PTM:
    dim = kraus[0].shape[0]
    n = dim.bit_length() - 1
    _check_dense(n)
    total = sum(e.conj().T @ e for e in kraus)
    if not np.allclose(total, np.eye(dim), atol=1e-10):
        raise ValueError("Kraus set is not trace preserving")
    cols = np.empty((4**n, 4**n))
    for b in range(4**n):
        pb = pauli_of_index(n, b).to_matrix()
        out = sum(e @ pb @ e.conj().T for e in kraus)
        col = pauli_coeffs(out)
        cols[:, b] = col.real
    return PTM(n, cols)


def unitary_to_ptm(u: np.ndarray) -> PTM:
    return kraus_to_ptm([u])


def spl_ptm(model: SPLModel) -> PTM:
    """Exact dense transfer matrix of the channel an SPL model generates."""
    n = model.n
    _check_dense(n)
    queries = [pauli_of_index(n, a) for a in range(1, 4**n)]
    return PTM.from_fidelities(spl_fidelities(model, queries))


def quasi_inverse_ptm(inv: QuasiInverse) -> PTM:
    """Transfer matrix of the exactly realized quasi-probability inverse."""
    n = inv.generators[0].n if inv.generators else 0
    _check_dense(n)
    diag = np.full(4**n, inv.gamma)
    for a in range(4**n):
        pa = pauli_of_index(n, a)
        for g, wi in zip(inv.generators, inv.w):
            # conjugation by g contributes +1/-1 depending on commutation
            s = -1.0 if anticommutes(g, pa) else 1.0
            diag[a] *= wi - (1.0 - wi) * s
    return PTM(n, np.diag(diag))


# ---------------------------------------------------------------------------
# gauge freedom


@dataclass(frozen=True)
class GaugeParams:
    """Rates of a generalized depolarizing map, one per support pattern.

    mode 'full' stores 2^n values indexed by pattern mask (entry 0 is
    pinned to zero); mode 'local' stores one rate per qubit and the
    pattern rate is the sum over supported qubits.
    """

    n: int
    mode: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.mode not in ("full", "local"):
            raise ValueError(f"unknown gauge mode {self.mode!r}")
        want = (1 << self.n) if self.mode == "full" else self.n
        if self.values.size != want:
            raise ValueError("gauge parameter count mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite gauge rate")
        if self.mode == "full" and self.values[0] != 0.0:
            raise ValueError("the empty pattern's gauge rate is pinned to zero")

    @staticmethod
    def zero(n: int, mode: str = "full") -> "GaugeParams":
        size = (1 << n) if mode == "full" else n
        return GaugeParams(n, mode, np.zeros(size))

    def rate_of_pattern(self, mask: int) -> float:
        if self.mode == "full":
            return float(self.values[mask])
        return float(sum(self.values[j] for j in range(self.n) if (mask >> j) & 1))

    def rate_of(self, p: PauliString) -> float:
        return self.rate_of_pattern(p.support)


def depolarizing_ptm(eta: GaugeParams) -> PTM:
    _check_dense(eta.n)
    diag = np.array(
        [np.exp(-eta.rate_of_pattern(index_pattern(eta.n, a))) for a in range(4**eta.n)]
    )
    return PTM(eta.n, np.diag(diag))


def gauge_layer_fidelities(
    f: PauliFidelities, eta: GaugeParams, tableau: CliffordTableau
) -> PauliFidelities:
    """Push D_eta through one Clifford layer: f_P picks up
    exp(-eta(G P Gdag)) * exp(+eta(P))."""
    entries = []
    for p, fp in f.items():
        img = conjugate(tableau, p)
        entries.append((p, fp * np.exp(eta.rate_of(p) - eta.rate_of(img))))
    return PauliFidelities(f.n, entries)


def gauge_transform(spam_and_layers, eta: GaugeParams):
    """Gauge-transform a full gate-set noise model.

    Preparation noise is composed with D_eta after it, measurement noise
    with the inverse of D_eta before it, and each layer channel is
    conjugated through its Clifford action.  Every prepare-run-measure
    expectation value is unchanged; individual fidelities move, and the
    result may be non-physical (flagged by the model, still usable).
    """
    model = spam_and_layers
    if eta.n != model.n:
        raise ValueError("gauge parameter size mismatch")
    prep = {m: f * np.exp(-eta.rate_of_pattern(m)) for m, f in model.prep.items()}
    meas = {m: f * np.exp(+eta.rate_of_pattern(m)) for m, f in model.meas.items()}
    layers = {
        tag: replace(
            layer,
            fidelities=gauge_layer_fidelities(layer.fidelities, eta, layer.tableau),
        )
        for tag, layer in model.layers.items()
    }
    return replace(model, prep=prep, meas=meas, layers=layers)
