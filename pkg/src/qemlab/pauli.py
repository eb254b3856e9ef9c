"""Pauli-string algebra on bit masks.

An n-qubit Pauli is stored as a pair of n-bit integers (``x_mask``,
``z_mask``) plus a phase exponent: the operator is

    P = i**phase_exp * L_0 (x) L_1 (x) ... (x) L_{n-1}

where qubit j carries the letter L_j = I, X, Y or Z according to the
j-th bits of the masks (X: x=1,z=0; Z: x=0,z=1; Y: x=1,z=1).  Qubit 0
is the first letter in text form and the least significant bit of a
computational-basis index.  All values are immutable, so they can be
shared freely across workers.

Products follow matrix-multiplication order, e.g. Z*X = iY, and the
phase exponent is tracked mod 4.  Clifford maps are symplectic tableaus
holding the conjugation images of every X_j and Z_j generator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# letter -> (x bit, z bit)
_LETTER_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_LETTER_FROM_BITS = {bits: letter for letter, bits in _LETTER_BITS.items()}
_PHASE_PREFIX = {0: "", 1: "i", 2: "-", 3: "-i"}
_PREFIX_PHASE = {"": 0, "+": 0, "i": 1, "+i": 1, "-": 2, "-i": 3}

_PAULI_MATS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class PauliSizeError(ValueError):
    """Operands act on different qubit counts."""


@dataclass(frozen=True, slots=True)
class PauliString:
    n: int
    x_mask: int
    z_mask: int
    phase_exp: int = 0

    def __post_init__(self):
        full = (1 << self.n) - 1
        if self.x_mask & ~full or self.z_mask & ~full:
            raise ValueError("mask has bits beyond qubit count")
        if self.phase_exp not in (0, 1, 2, 3):
            object.__setattr__(self, "phase_exp", self.phase_exp % 4)

    @staticmethod
    def identity(n: int) -> "PauliString":
        return PauliString(n, 0, 0, 0)

    @staticmethod
    def from_text(text: str) -> "PauliString":
        """Parse e.g. 'XZIX', '-iYY', '+Z'.  Qubit 0 is the first letter."""
        body = text.lstrip("+-i")
        prefix = text[: len(text) - len(body)]
        if prefix not in _PREFIX_PHASE:
            raise ValueError(f"bad phase prefix {prefix!r}")
        x = z = 0
        for j, letter in enumerate(body):
            if letter not in _LETTER_BITS:
                raise ValueError(f"bad Pauli letter {letter!r}")
            xb, zb = _LETTER_BITS[letter]
            x |= xb << j
            z |= zb << j
        return PauliString(len(body), x, z, _PREFIX_PHASE[prefix])

    @staticmethod
    def single(n: int, qubit: int, letter: str) -> "PauliString":
        xb, zb = _LETTER_BITS[letter]
        return PauliString(n, xb << qubit, zb << qubit)

    def to_text(self) -> str:
        letters = []
        for j in range(self.n):
            xb = (self.x_mask >> j) & 1
            zb = (self.z_mask >> j) & 1
            letters.append(_LETTER_FROM_BITS[(xb, zb)])
        return _PHASE_PREFIX[self.phase_exp] + "".join(letters)

    def key(self) -> tuple[int, int]:
        """Unsigned identity of the string (phase dropped)."""
        return (self.z_mask, self.x_mask)

    @property
    def support(self) -> int:
        return self.x_mask | self.z_mask

    def with_phase(self, phase_exp: int) -> "PauliString":
        return PauliString(self.n, self.x_mask, self.z_mask, phase_exp % 4)

    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    def hermitian_sign(self) -> float:
        """+1 or -1 for phase_exp 0/2; error when the string is anti-Hermitian."""
        if self.phase_exp == 0:
            return 1.0
        if self.phase_exp == 2:
            return -1.0
        raise ValueError("string with odd phase exponent is not Hermitian")

    def to_matrix(self) -> np.ndarray:
        """Dense 2^n x 2^n matrix; qubit 0 is the least significant bit."""
        out = np.array([[1.0 + 0j]])
        for j in reversed(range(self.n)):
            xb = (self.x_mask >> j) & 1
            zb = (self.z_mask >> j) & 1
            out = np.kron(out, _PAULI_MATS[_LETTER_FROM_BITS[(xb, zb)]])
        return (1j ** self.phase_exp) * out

    def __str__(self) -> str:
        return self.to_text()


def _y_count(x_mask: int, z_mask: int) -> int:
    return (x_mask & z_mask).bit_count()


def pauli_mul(a: PauliString, b: PauliString) -> PauliString:
    """Group product a*b in matrix order, phase included."""
    if a.n != b.n:
        raise PauliSizeError(f"qubit counts differ: {a.n} vs {b.n}")
    x = a.x_mask ^ b.x_mask
    z = a.z_mask ^ b.z_mask
    # letters = i^y * X^x Z^z; commuting Z^za past X^xb costs (-1)^|za&xb|
    phase = (
        a.phase_exp
        + b.phase_exp
        + _y_count(a.x_mask, a.z_mask)
        + _y_count(b.x_mask, b.z_mask)
        + 2 * (a.z_mask & b.x_mask).bit_count()
        - _y_count(x, z)
    )
    return PauliString(a.n, x, z, phase % 4)


def anticommutes(a: PauliString, b: PauliString) -> bool:
    if a.n != b.n:
        raise PauliSizeError(f"qubit counts differ: {a.n} vs {b.n}")
    s = (a.x_mask & b.z_mask).bit_count() + (a.z_mask & b.x_mask).bit_count()
    return bool(s & 1)


def weight(p: PauliString) -> int:
    return (p.x_mask | p.z_mask).bit_count()


def pattern(p: PauliString) -> str:
    """Support bitstring, qubit-0 first: XZIX -> '1101'."""
    mask = p.x_mask | p.z_mask
    return "".join("1" if (mask >> j) & 1 else "0" for j in range(p.n))


def anticommutation_matrix(basis: list[PauliString]) -> np.ndarray:
    """M[i,j] = 1 iff basis[i] and basis[j] anticommute."""
    if basis and any(p.n != basis[0].n for p in basis):
        raise PauliSizeError("basis mixes qubit counts")
    m = len(basis)
    out = np.zeros((m, m), dtype=np.uint8)
    for i in range(m):
        for j in range(i + 1, m):
            if anticommutes(basis[i], basis[j]):
                out[i, j] = out[j, i] = 1
    return out


# ---------------------------------------------------------------------------
# Clifford tableaus


@dataclass(frozen=True, slots=True)
class CliffordTableau:
    """Images of the X_j and Z_j generators under U . U^dag."""

    n: int
    x_images: tuple[PauliString, ...]
    z_images: tuple[PauliString, ...]

    def __post_init__(self):
        assert len(self.x_images) == len(self.z_images) == self.n

    @staticmethod
    def identity(n: int) -> "CliffordTableau":
        xs = tuple(PauliString.single(n, j, "X") for j in range(n))
        zs = tuple(PauliString.single(n, j, "Z") for j in range(n))
        return CliffordTableau(n, xs, zs)


def conjugate(t: CliffordTableau, p: PauliString) -> PauliString:
    """Return U p U^dag for the Clifford U represented by the tableau."""
    if t.n != p.n:
        raise PauliSizeError(f"qubit counts differ: {t.n} vs {p.n}")
    # decompose p into X^x Z^z form and push each generator through
    acc = PauliString.identity(p.n)
    for j in range(p.n):
        if (p.x_mask >> j) & 1:
            acc = pauli_mul(acc, t.x_images[j])
        if (p.z_mask >> j) & 1:
            acc = pauli_mul(acc, t.z_images[j])
    phase = (acc.phase_exp + p.phase_exp + _y_count(p.x_mask, p.z_mask)) % 4
    return acc.with_phase(phase)


def compose(first: CliffordTableau, then: CliffordTableau) -> CliffordTableau:
    """Tableau of the circuit that applies `first`, then `then`."""
    if first.n != then.n:
        raise PauliSizeError("tableau sizes differ")
    xs = tuple(conjugate(then, img) for img in first.x_images)
    zs = tuple(conjugate(then, img) for img in first.z_images)
    return CliffordTableau(first.n, xs, zs)


def inverse(t: CliffordTableau) -> CliffordTableau:
    """Tableau of U^dag, via GF(2) inversion of the symplectic matrix."""
    n = t.n
    # columns: images of X_0..X_{n-1}, Z_0..Z_{n-1} as (x|z) bit vectors
    mat = np.zeros((2 * n, 2 * n), dtype=np.uint8)
    for k, img in enumerate(itertools.chain(t.x_images, t.z_images)):
        for j in range(n):
            mat[j, k] = (img.x_mask >> j) & 1
            mat[n + j, k] = (img.z_mask >> j) & 1
    inv = _gf2_inverse(mat)
    xs, zs = [], []
    for j in range(n):
        for target, dest in ((j, xs), (n + j, zs)):
            col = inv[:, target]
            x_mask = sum(int(col[i]) << i for i in range(n))
            z_mask = sum(int(col[n + i]) << i for i in range(n))
            cand = PauliString(n, x_mask, z_mask, 0)
            # fix the sign by pushing the candidate forward
            fwd = conjugate(t, cand)
            dest.append(cand.with_phase(-fwd.phase_exp))
    return CliffordTableau(n, tuple(xs), tuple(zs))


def _gf2_inverse(mat: np.ndarray) -> np.ndarray:
    m = mat.shape[0]
    aug = np.concatenate([mat.copy() % 2, np.eye(m, dtype=np.uint8)], axis=1)
    row = 0
    for col in range(m):
        pivots = np.nonzero(aug[row:, col])[0]
        if pivots.size == 0:
            raise ValueError("matrix is singular over GF(2)")
        pivot = row + pivots[0]
        if pivot != row:
            aug[[row, pivot]] = aug[[pivot, row]]
        for r in range(m):
            if r != row and aug[r, col]:
                aug[r, :] ^= aug[row, :]
        row += 1
    return aug[:, m:]


def tableau_from_unitary(u: np.ndarray) -> CliffordTableau:
    """Recognize a dense 2^k x 2^k unitary as a Clifford map.

    Each conjugated generator must come out a single Pauli with a +-1
    coefficient (tolerance 1e-9); anything else raises ValueError.
    """
    dim = u.shape[0]
    k = dim.bit_length() - 1
    if u.shape != (dim, dim) or 1 << k != dim:
        raise ValueError("gate matrix must be square with power-of-two size")
    if not np.allclose(u @ u.conj().T, np.eye(dim), atol=1e-9):
        raise ValueError("gate matrix is not unitary")
    xs, zs = [], []
    for letter, dest in (("X", xs), ("Z", zs)):
        for j in range(k):
            gen = PauliString.single(k, j, letter)
            img = u @ gen.to_matrix() @ u.conj().T
            dest.append(_match_signed_pauli(img, k))
    return CliffordTableau(k, tuple(xs), tuple(zs))


def _match_signed_pauli(mat: np.ndarray, n: int) -> PauliString:
    dim = 1 << n
    for x_mask in range(dim):
        for z_mask in range(dim):
            base = PauliString(n, x_mask, z_mask, 0).to_matrix()
            coeff = np.trace(base.conj().T @ mat) / dim
            if abs(coeff) > 0.5:
                if abs(coeff - 1) < 1e-9:
                    return PauliString(n, x_mask, z_mask, 0)
                if abs(coeff + 1) < 1e-9:
                    return PauliString(n, x_mask, z_mask, 2)
                raise ValueError("conjugation image is not a signed Pauli")
    raise ValueError("conjugation image matches no Pauli")


# ---------------------------------------------------------------------------
# Pauli sums


class PauliSum:
    """Real-weighted sum of Pauli strings, canonically ordered.

    Terms are merged on construction and kept sorted lexicographically by
    (z_mask, x_mask) so serialization is deterministic.  Signs from
    phase_exp = 2 strings fold into the coefficients; odd phases are
    rejected because they cannot carry a real coefficient.
    """

    __slots__ = ("n", "terms")

    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("a PauliSum needs at least one term")
        n = terms[0][1].n
        acc: dict[tuple[int, int], float] = {}
        for coeff, p in terms:
            if p.n != n:
                raise PauliSizeError("terms mix qubit counts")
            if not np.isfinite(coeff):
                raise ValueError("non-finite coefficient")
            acc[p.key()] = acc.get(p.key(), 0.0) + coeff * p.hermitian_sign()
        self.n = n
        self.terms = tuple(
            (c, PauliString(n, x, z, 0))
            for (z, x), c in sorted(acc.items())
            if c != 0.0
        ) or ((0.0, PauliString.identity(n)),)

    @staticmethod
    def from_text(pairs) -> "PauliSum":
        return PauliSum([(c, PauliString.from_text(t)) for t, c in pairs])

    def to_matrix(self) -> np.ndarray:
        out = np.zeros((1 << self.n, 1 << self.n), dtype=complex)
        for c, p in self.terms:
            out += c * p.to_matrix()
        return out

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def __eq__(self, other):
        return isinstance(other, PauliSum) and self.terms == other.terms

    def __repr__(self):
        body = " + ".join(f"{c:g}*{p}" for c, p in self.terms)
        return f"PauliSum({body})"


def pauli_sum_mul(a: PauliSum, b: PauliSum) -> PauliSum:
    """Product of two Hermitian sums; raises if the result is not Hermitian."""
    acc: dict[tuple[int, int], complex] = {}
    for ca, pa in a:
        for cb, pb in b:
            prod = pauli_mul(pa, pb)
            phase = 1j ** prod.phase_exp
            acc[prod.key()] = acc.get(prod.key(), 0j) + ca * cb * phase
    scale = max(abs(v) for v in acc.values()) or 1.0
    terms = []
    for (z, x), v in acc.items():
        if abs(v.imag) > 1e-12 * scale:
            raise ValueError("product has non-Hermitian terms")
        terms.append((v.real, PauliString(a.n, x, z, 0)))
    return PauliSum(terms)
