"""Informationally complete measurements and dual-frame estimators.

Product POVMs are stored per qubit, either as a randomization over
projective bases (probability, rotation) or as a flat list of at most
four effects.  Dual frames live on a partition of the qubits into
blocks of bounded size; every dual operator of a block outcome is a
dense 2^m x 2^m Hermitian matrix, so estimator coefficients for Pauli
observables factor over blocks.

Frame superoperators are represented in the orthonormal Pauli basis
sigma_a = P_a / sqrt(2^m), where they are real symmetric.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .channels import coeffs_to_matrix, pauli_coeffs
from .pauli import PauliString, PauliSum
from .simulate import DensityMatrix, StateVector, _fmt_complex, expectation, sample_bits

BLOCK_MAX = 3
CONDITION_LIMIT = 1e12
# exhaustive outcome enumerations (sampling of flat classes, SSV sums) stop here
ENUMERATION_LIMIT = 1 << 20

POVM_KINDS = ("shadows", "lbcs", "mub", "pm_simulable", "sic", "dilation4")

_EYE2 = np.eye(2, dtype=complex)
_HAD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
# rotation W with W^dag |s><s| W = Y-basis projector; W = H S^dag
_Y_ROT = _HAD @ np.diag([1, -1j]).astype(complex)
_BASIS_ROTS = (_EYE2, _HAD, _Y_ROT)  # Z, X, Y


def _proj(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex)
    return np.outer(v, v.conj())


# tetrahedral states: |psi_0> = |0>, the rest share overlap 1/3 pairwise
_SIC_STATES = (
    np.array([1.0, 0.0], dtype=complex),
    *(
        np.array([1.0, math.sqrt(2) * np.exp(2j * np.pi * m / 3)], dtype=complex)
        / math.sqrt(3)
        for m in range(3)
    ),
)


def _is_unitary(u: np.ndarray, tol: float = 1e-12) -> bool:
    return u.shape[0] == u.shape[1] and np.allclose(
        u.conj().T @ u, np.eye(u.shape[0]), atol=tol
    )


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True, eq=False)
class SingleQubitPOVM:
    """One qubit's measurement: flat effects, optionally with the
    projective randomization (probability, rotation) that generates them."""

    effects: tuple
    bases: tuple | None = None

    def __post_init__(self):
        effects = tuple(np.asarray(e, dtype=complex) for e in self.effects)
        object.__setattr__(self, "effects", effects)
        total = np.zeros((2, 2), dtype=complex)
        for e in effects:
            if e.shape != (2, 2):
                raise ValueError("effects must be 2x2")
            if not np.allclose(e, e.conj().T, atol=1e-12):
                raise ValueError("effects must be Hermitian")
            if np.linalg.eigvalsh(e)[0] < -1e-9:
                raise ValueError("effects must be positive semidefinite")
            total += e
        if not np.allclose(total, _EYE2, atol=1e-12):
            raise ValueError("effects do not sum to the identity")
        if self.bases is not None:
            bases = tuple((float(p), np.asarray(u, dtype=complex)) for p, u in self.bases)
            object.__setattr__(self, "bases", bases)
            probs = [p for p, _ in bases]
            if min(probs) < -1e-12 or abs(sum(probs) - 1.0) > 1e-12:
                raise ValueError("invalid basis probabilities")
            for _, u in bases:
                if not _is_unitary(u):
                    raise ValueError("basis rotations must be unitary")
            if len(effects) != 2 * len(bases):
                raise ValueError("effects inconsistent with bases")

    @classmethod
    def from_bases(cls, bases) -> "SingleQubitPOVM":
        """Effects q_b W^dag |s><s| W, flat outcome index 2*b + s."""
        effects = []
        for p, u in bases:
            u = np.asarray(u, dtype=complex)
            for s in (0, 1):
                effects.append(float(p) * np.outer(u[s].conj(), u[s]))
        return cls(tuple(effects), tuple((float(p), np.asarray(u, dtype=complex)) for p, u in bases))

    @property
    def n_outcomes(self) -> int:
        return len(self.effects)


@dataclass(frozen=True, eq=False)
class ProductPOVM:
    n: int
    qubits: tuple
    label: str = ""

    def __post_init__(self):
        if len(self.qubits) != self.n:
            raise ValueError("need one single-qubit POVM per qubit")
        object.__setattr__(self, "qubits", tuple(self.qubits))

    @property
    def pm_simulable(self) -> bool:
        return all(q.bases is not None for q in self.qubits)

    def outcome_counts(self) -> tuple:
        return tuple(q.n_outcomes for q in self.qubits)

    def n_global_outcomes(self) -> int:
        return math.prod(self.outcome_counts())

    def block_effect(self, block, outcome) -> np.ndarray:
        """Tensor product effect on a qubit subset, high qubit leftmost."""
        mat = np.array([[1.0 + 0j]])
        for q in sorted(block, reverse=True):
            mat = np.kron(mat, self.qubits[q].effects[outcome[block.index(q)]])
        return mat


def _strides(counts) -> list:
    out = [1]
    for k in counts[:-1]:
        out.append(out[-1] * k)
    return out


# ---------------------------------------------------------------------------
# construction


def _nesting(obj) -> int:
    try:
        return np.asarray(obj, dtype=complex).ndim
    except (TypeError, ValueError):
        return 1 + max(_nesting(x) for x in obj)


def _per_qubit(param, n, depth):
    """Broadcast a parameter to one entry per qubit.

    depth is the nesting of a single qubit's value (1 for a probability
    vector, 2 for a matrix, ...); input nested one level deeper is
    interpreted as per-qubit.
    """
    if param is None:
        return [None] * n
    nest = _nesting(param)
    if nest == depth:
        return [param] * n
    if nest == depth + 1 and len(param) == n:
        return list(param)
    raise ValueError("parameter shape matches neither one qubit nor all of them")


def _check_probs(q):
    q = np.asarray(q, dtype=float)
    if q.min() < -1e-12 or abs(q.sum() - 1.0) > 1e-10:
        raise ValueError(f"invalid probabilities {q.tolist()}")
    return np.clip(q, 0.0, None)


def build_povm(kind: str, n: int = 1, *, q=None, unitary=None, unitaries=None, effects=None) -> ProductPOVM:
    """Construct one of the supported product POVM classes.

    kind selects the parametrization:
      shadows       no parameters; uniform Z/X/Y randomization
      lbcs          q: three basis probabilities, per qubit or shared
      mub           unitary: 2x2 rotating all three bases; q optional
      pm_simulable  unitaries: list of basis rotations; q: probabilities
      sic           unitary: optional 2x2 conjugation of the tetrahedron
      dilation4     unitary: 4x4 Naimark row table, or effects: 4 matrices
    """
    if kind not in POVM_KINDS:
        raise ValueError(f"unknown POVM class {kind!r}")
    qubits = []
    if kind == "shadows":
        base = SingleQubitPOVM.from_bases([(1 / 3, w) for w in _BASIS_ROTS])
        qubits = [base] * n
    elif kind == "lbcs":
        if q is None:
            raise ValueError("lbcs needs basis probabilities")
        for probs in _per_qubit(q, n, 1):
            probs = _check_probs(probs)
            if probs.size != 3:
                raise ValueError("lbcs takes three probabilities per qubit")
            qubits.append(SingleQubitPOVM.from_bases(list(zip(probs, _BASIS_ROTS))))
    elif kind == "mub":
        if unitary is None:
            raise ValueError("mub needs a base unitary")
        probs_per = _per_qubit(q if q is not None else np.full(3, 1 / 3), n, 1)
        for u, probs in zip(_per_qubit(unitary, n, 2), probs_per):
            u = np.asarray(u, dtype=complex)
            if not _is_unitary(u):
                raise ValueError("mub rotation must be unitary")
            probs = _check_probs(probs)
            qubits.append(
                SingleQubitPOVM.from_bases([(p, w @ u) for p, w in zip(probs, _BASIS_ROTS)])
            )
    elif kind == "pm_simulable":
        if unitaries is None or q is None:
            raise ValueError("pm_simulable needs basis rotations and probabilities")
        for ws, probs in zip(_per_qubit(unitaries, n, 3), _per_qubit(q, n, 1)):
            probs = _check_probs(probs)
            ws = [np.asarray(w, dtype=complex) for w in ws]
            if len(ws) != probs.size:
                raise ValueError("one rotation per basis probability")
            qubits.append(SingleQubitPOVM.from_bases(list(zip(probs, ws))))
    elif kind == "sic":
        for u in _per_qubit(unitary, n, 2):
            states = _SIC_STATES
            if u is not None:
                u = np.asarray(u, dtype=complex)
                if not _is_unitary(u):
                    raise ValueError("sic rotation must be unitary")
                states = [u.conj().T @ s for s in states]
            qubits.append(SingleQubitPOVM(tuple(_proj(s) / 2 for s in states)))
    else:  # dilation4
        if (unitary is None) == (effects is None):
            raise ValueError("dilation4 takes either a 4x4 unitary or 4 effects")
        if unitary is not None:
            per = _per_qubit(unitary, n, 2)
            effect_sets = [effects_from_naimark(np.asarray(u, dtype=complex)) for u in per]
        else:
            effect_sets = [[np.asarray(e, dtype=complex) for e in es] for es in _per_qubit(effects, n, 3)]
        for es in effect_sets:
            if len(es) != 4:
                raise ValueError("dilation4 takes exactly four effects")
            stack = np.stack([e.ravel() for e in es])
            if np.linalg.matrix_rank(stack, tol=1e-10) != 4:
                raise ValueError("dilation4 effects must be linearly independent")
            qubits.append(SingleQubitPOVM(tuple(es)))
    return ProductPOVM(n, tuple(qubits), label=kind)


# ---------------------------------------------------------------------------
# Naimark dilation


def effects_from_naimark(u: np.ndarray) -> list:
    """Rank-one effects encoded in the first two columns of a 4x4 unitary."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4) or not _is_unitary(u):
        raise ValueError("expected a 4x4 unitary")
    return [np.outer(u[k, :2].conj(), u[k, :2]) for k in range(4)]


def naimark_unitary(effects) -> np.ndarray:
    """Embed four rank-one effects as a projective measurement on two qubits.

    Row k of the result holds sqrt(Gamma_k) conj(pi_k) in its first two
    entries, where M_k = Gamma_k |pi_k><pi_k|.  The remaining columns are
    completed orthonormally and rotated so that the top-right entry is zero.
    """
    effects = [np.asarray(e, dtype=complex) for e in effects]
    if len(effects) > 4:
        raise ValueError("at most four effects fit a single ancilla qubit")
    while len(effects) < 4:
        effects.append(np.zeros((2, 2), dtype=complex))
    total = sum(effects)
    if not np.allclose(total, _EYE2, atol=1e-10):
        raise ValueError("effects do not sum to the identity")
    u = np.zeros((4, 4), dtype=complex)
    for k, e in enumerate(effects):
        if not np.allclose(e, e.conj().T, atol=1e-10):
            raise ValueError("effects must be Hermitian")
        vals, vecs = np.linalg.eigh(e)
        gamma = vals[-1]
        if gamma <= 1e-12:
            continue
        if abs(vals[0]) > 1e-10 * max(gamma, 1.0):
            raise ValueError("effects must be rank one")
        pi = vecs[:, -1]
        u[k, :2] = math.sqrt(gamma) * pi.conj()
    # complete columns 2,3 from the standard basis
    cols = [u[:, 0].copy(), u[:, 1].copy()]
    for j in range(4):
        cand = np.zeros(4, dtype=complex)
        cand[j] = 1.0
        for c in cols:
            cand -= c * np.vdot(c, cand)
        norm = np.linalg.norm(cand)
        if norm > 1e-7:
            cols.append(cand / norm)
        if len(cols) == 4:
            break
    c2, c3 = cols[2], cols[3]
    # rotate inside span(c2, c3) so the new last column starts with 0
    a, b = c2[0], c3[0]
    r = math.hypot(abs(a), abs(b))
    if r > 1e-12:
        c2, c3 = (a.conjugate() * c2 + b.conjugate() * c3) / r, (b * c2 - a * c3) / r
    u[:, 2], u[:, 3] = c2, c3
    if not _is_unitary(u):
        raise ValueError("completion failed to produce a unitary")
    return u


# ---------------------------------------------------------------------------
# frames and duals


def _vec(mat: np.ndarray) -> np.ndarray:
    """Components in the orthonormal Pauli basis; real for Hermitian input."""
    m = mat.shape[0].bit_length() - 1
    c = pauli_coeffs(mat) * 2 ** (m / 2)
    if np.abs(c.imag).max() > 1e-10:
        raise ValueError("matrix is not Hermitian")
    return c.real


def _unvec(vec: np.ndarray) -> np.ndarray:
    m = (vec.size.bit_length() - 1) // 2
    return coeffs_to_matrix(np.asarray(vec, dtype=complex) / 2 ** (m / 2))


def normalize_partition(n: int, partition=None, m_max: int = BLOCK_MAX) -> tuple:
    """Sorted disjoint blocks covering all qubits.

    Default: one block if the system fits, else single-qubit blocks.
    """
    if partition is None:
        blocks = [tuple(range(n))] if n <= m_max else [(q,) for q in range(n)]
    else:
        blocks = [tuple(sorted(int(q) for q in b)) for b in partition]
    seen = set()
    for b in blocks:
        if len(b) > m_max:
            raise ValueError(f"block {b} exceeds the size cap {m_max}")
        seen.update(b)
        if len(set(b)) != len(b):
            raise ValueError("repeated qubit in a block")
    if seen != set(range(n)):
        raise ValueError("blocks must partition the qubits")
    return tuple(sorted(blocks))


def _block_outcome_tuples(povm: ProductPOVM, block):
    counts = [povm.qubits[q].n_outcomes for q in block]
    for idx in range(math.prod(counts)):
        out = []
        rem = idx
        for k in counts:
            out.append(rem % k)
            rem //= k
        yield tuple(out)


def _block_effects(povm: ProductPOVM, block) -> np.ndarray:
    mats = []
    for outcome in _block_outcome_tuples(povm, block):
        mat = np.array([[1.0 + 0j]])
        for pos in reversed(range(len(block))):
            mat = np.kron(mat, povm.qubits[block[pos]].effects[outcome[pos]])
        mats.append(mat)
    return np.stack(mats)


@dataclass(frozen=True, eq=False)
class FrameSuperoperator:
    """Per-block weighted frame superoperators, real symmetric 4^m x 4^m."""

    n: int
    blocks: tuple
    mats: tuple
    alphas: tuple


@dataclass(frozen=True, eq=False)
class DualFrame:
    """Dual operators per block outcome; global duals are block products."""

    n: int
    blocks: tuple
    operators: tuple  # per block: array (outcomes, 2^m, 2^m)
    conditions: tuple = ()


def _resolve_alphas(povm, blocks, alpha):
    out = []
    for i, block in enumerate(blocks):
        count = math.prod(povm.qubits[q].n_outcomes for q in block)
        if alpha is None:
            a = np.ones(count)
        else:
            a = np.asarray(alpha[i], dtype=float)
            if a.shape != (count,):
                raise ValueError(f"alpha for block {block} must have length {count}")
        if a.min() <= 0:
            raise ValueError("frame weights must be positive")
        out.append(a)
    return out


def frame_superop(povm: ProductPOVM, alpha=None, partition=None, m_max: int = BLOCK_MAX) -> FrameSuperoperator:
    """F_alpha = sum_k alpha_k |M_k>><<M_k| on each partition block."""
    blocks = normalize_partition(povm.n, partition, m_max)
    alphas = _resolve_alphas(povm, blocks, alpha)
    mats = []
    for block, a in zip(blocks, alphas):
        vecs = np.stack([_vec(e) for e in _block_effects(povm, block)])
        mats.append((vecs * a[:, None]).T @ vecs)
    return FrameSuperoperator(povm.n, blocks, tuple(mats), tuple(alphas))


def duals(povm: ProductPOVM, alpha=None, partition=None, m_max: int = BLOCK_MAX) -> DualFrame:
    """D_k = alpha_k F_alpha^{-1} |M_k>> blockwise.

    Inversion is by symmetric eigendecomposition and refuses condition
    numbers above CONDITION_LIMIT.
    """
    frame = frame_superop(povm, alpha, partition, m_max)
    ops = []
    conds = []
    for block, f, a in zip(frame.blocks, frame.mats, frame.alphas):
        w, v = np.linalg.eigh(f)
        cond = math.inf if w[0] <= 0 else w[-1] / w[0]
        if cond > CONDITION_LIMIT:
            raise ValueError(
                f"frame superoperator on block {block} is numerically singular "
                f"(condition number {cond:.3e})"
            )
        conds.append(cond)
        f_inv = (v / w) @ v.T
        vecs = np.stack([_vec(e) for e in _block_effects(povm, block)])
        rows = a[:, None] * (vecs @ f_inv)
        ops.append(np.stack([_unvec(r) for r in rows]))
    return DualFrame(povm.n, frame.blocks, tuple(ops), tuple(conds))


def reduced_state(state, block) -> np.ndarray:
    """Density matrix of a qubit subset, high qubit leftmost."""
    n = state.n
    order = sorted(block, reverse=True)
    m = len(order)
    if isinstance(state, StateVector):
        t = state.amps.reshape((2,) * n)
        perm = [n - 1 - q for q in order] + [n - 1 - q for q in range(n - 1, -1, -1) if q not in block]
        a = np.transpose(t, perm).reshape(1 << m, -1)
        return a @ a.conj().T
    t = state.mat.reshape((2,) * (2 * n))
    rest = [q for q in range(n - 1, -1, -1) if q not in block]
    perm = (
        [n - 1 - q for q in order]
        + [n - 1 - q for q in rest]
        + [2 * n - 1 - q for q in order]
        + [2 * n - 1 - q for q in rest]
    )
    r_dim = 1 << len(rest)
    a = np.transpose(t, perm).reshape(1 << m, r_dim, 1 << m, r_dim)
    return np.einsum("arbr->ab", a)


def optimal_duals(povm: ProductPOVM, state, partition=None, m_max: int = BLOCK_MAX) -> DualFrame:
    """Weighted duals with alpha_k = 1 / Tr[rho M_k] per block."""
    blocks = normalize_partition(povm.n, partition, m_max)
    alphas = []
    for block in blocks:
        rho = reduced_state(state, block)
        probs = np.array([np.trace(rho @ e).real for e in _block_effects(povm, block)])
        if probs.min() <= 1e-14:
            raise ValueError("zero-probability outcome; optimal weights undefined")
        alphas.append(1.0 / probs)
    return duals(povm, alphas, blocks, m_max)


def avg_optimal_duals(povm: ProductPOVM, partition=None, m_max: int = BLOCK_MAX) -> DualFrame:
    """Weighted duals with alpha_k = 1 / Tr[M_k]; the classical-shadow choice."""
    blocks = normalize_partition(povm.n, partition, m_max)
    alphas = []
    for block in blocks:
        traces = np.array([np.trace(e).real for e in _block_effects(povm, block)])
        if traces.min() <= 1e-14:
            raise ValueError("zero-trace effect; average-optimal weights undefined")
        alphas.append(1.0 / traces)
    return duals(povm, alphas, blocks, m_max)


def dual_condition_error(povm: ProductPOVM, frame: DualFrame) -> float:
    """Max deviation of sum_k |D_k>><<M_k| from the identity over blocks."""
    worst = 0.0
    for block, ops in zip(frame.blocks, frame.operators):
        vecs_m = np.stack([_vec(e) for e in _block_effects(povm, block)])
        vecs_d = np.stack([_vec(d) for d in ops])
        s = vecs_d.T @ vecs_m
        worst = max(worst, float(np.abs(s - np.eye(s.shape[0])).max()))
    return worst


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class ShotGroup:
    """Outcome counts for one randomized setting.

    bases holds the sampled basis index per qubit and counts are keyed
    by the measured bitstring (bit q = qubit q).  For flat classes bases
    is None and keys carry one base-4 digit per qubit.
    """

    bases: tuple | None
    counts: dict

    def shots(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class OutcomeDataset:
    n: int
    groups: tuple
    label: str = ""
    seed: int | None = None

    def __post_init__(self):
        for g in self.groups:
            if any(c < 0 for c in g.counts.values()):
                raise ValueError("negative count")

    @property
    def s(self) -> int:
        return sum(g.shots() for g in self.groups)


def _flat_index(povm: ProductPOVM, outcome) -> int:
    strides = _strides(povm.outcome_counts())
    return sum(o * s for o, s in zip(outcome, strides))


def group_flat_outcomes(povm: ProductPOVM, group: ShotGroup):
    """Yield (per-qubit flat outcome tuple, count) for one shot group."""
    n = povm.n
    for key, count in group.counts.items():
        if group.bases is None:
            out = tuple((key >> (2 * q)) & 3 for q in range(n))
        else:
            out = tuple(2 * group.bases[q] + ((key >> q) & 1) for q in range(n))
        for q, o in enumerate(out):
            if o >= povm.qubits[q].n_outcomes:
                raise ValueError(f"outcome {o} out of range on qubit {q}")
        yield out, count


def outcome_probabilities(povm: ProductPOVM, state) -> np.ndarray:
    """Born probabilities over all flat outcomes, qubit 0 varying fastest."""
    counts = povm.outcome_counts()
    total = math.prod(counts)
    if total > ENUMERATION_LIMIT:
        raise ValueError("too many outcomes to enumerate")
    n = povm.n
    probs = np.empty(total)
    if isinstance(state, StateVector):
        # depth-first over qubits, applying each effect to the ket
        def walk(q, tensor, base, stride):
            if q == n:
                probs[base] = max(np.vdot(state.amps, tensor.ravel()).real, 0.0)
                return
            axis = n - 1 - q
            for o, e in enumerate(povm.qubits[q].effects):
                nxt = np.moveaxis(np.tensordot(e, tensor, axes=([1], [axis])), 0, axis)
                walk(q + 1, nxt, base + o * stride, stride * counts[q])

        walk(0, state.amps.reshape((2,) * n), 0, 1)
        return probs
    strides = _strides(counts)
    for idx in range(total):
        mat = np.array([[1.0 + 0j]])
        for q in reversed(range(n)):
            mat = np.kron(mat, povm.qubits[q].effects[(idx // strides[q]) % counts[q]])
        probs[idx] = max(np.sum(state.mat * mat.T).real, 0.0)
    return probs


def sample(povm: ProductPOVM, state, shots: int, shots_per_basis: int, rng: np.random.Generator, seed: int | None = None) -> OutcomeDataset:
    """Randomized-measurement dataset: bases drawn per setting, then
    Born-rule outcomes for shots_per_basis shots in that setting.

    seed is recorded in the dataset header only; draws come from rng.
    """
    if shots < 0 or shots_per_basis < 1:
        raise ValueError("need shots >= 0 and shots_per_basis >= 1")
    if shots == 0:
        return OutcomeDataset(povm.n, (), label=povm.label, seed=seed)
    n = povm.n
    groups = []
    if povm.pm_simulable:
        n_groups = -(-shots // shots_per_basis)
        sizes = [shots_per_basis] * (n_groups - 1) + [shots - shots_per_basis * (n_groups - 1)]
        drawn = np.empty((n_groups, n), dtype=np.int64)
        for q, qu in enumerate(povm.qubits):
            probs = np.array([p for p, _ in qu.bases])
            drawn[:, q] = rng.choice(probs.size, size=n_groups, p=probs / probs.sum())
        if shots_per_basis == 1:
            # one shot per setting: merge repeated settings, one Born draw each
            keys = {}
            for row in drawn:
                keys[tuple(row)] = keys.get(tuple(row), 0) + 1
            for assignment in sorted(keys):
                rotations = {q: povm.qubits[q].bases[b][1] for q, b in enumerate(assignment)}
                bits = sample_bits(state, rotations, keys[assignment], rng)
                counts = {}
                for row in bits:
                    key = int(sum(int(b) << q for q, b in enumerate(row)))
                    counts[key] = counts.get(key, 0) + 1
                groups.append(ShotGroup(assignment, dict(sorted(counts.items()))))
        else:
            for g in range(n_groups):
                assignment = tuple(int(b) for b in drawn[g])
                rotations = {q: povm.qubits[q].bases[b][1] for q, b in enumerate(assignment)}
                bits = sample_bits(state, rotations, sizes[g], rng)
                counts = {}
                for row in bits:
                    key = int(sum(int(b) << q for q, b in enumerate(row)))
                    counts[key] = counts.get(key, 0) + 1
                groups.append(ShotGroup(assignment, dict(sorted(counts.items()))))
    else:
        probs = outcome_probabilities(povm, state)
        strides = _strides(povm.outcome_counts())
        draws = rng.choice(probs.size, size=shots, p=probs / probs.sum())
        counts = {}
        for idx in draws:
            digits = [(int(idx) // strides[q]) % povm.qubits[q].n_outcomes for q in range(n)]
            key = int(sum(d << (2 * q) for q, d in enumerate(digits)))
            counts[key] = counts.get(key, 0) + 1
        groups.append(ShotGroup(None, dict(sorted(counts.items()))))
    return OutcomeDataset(n, tuple(groups), label=povm.label, seed=seed)


# ---------------------------------------------------------------------------
# empirical frequencies and duals


def block_counts(povm: ProductPOVM, dataset: OutcomeDataset, block) -> np.ndarray:
    """Marginal outcome counts of a qubit block."""
    counts = [povm.qubits[q].n_outcomes for q in block]
    strides = _strides(counts)
    out = np.zeros(math.prod(counts))
    for group in dataset.groups:
        for outcome, c in group_flat_outcomes(povm, group):
            idx = sum(outcome[q] * s for q, s in zip(block, strides))
            out[idx] += c
    return out


def biased_frequencies(povm: ProductPOVM, data, block, s_bias=None) -> np.ndarray:
    """Regularized marginal frequencies of a block.

    data is an OutcomeDataset (counts get the bias pull toward the
    maximally mixed prediction Tr[M_k] / 2^m) or an exact global
    probability vector (marginalized, no bias applied).
    """
    block = tuple(sorted(block))
    if isinstance(data, np.ndarray):
        counts_all = povm.outcome_counts()
        strides_all = _strides(counts_all)
        counts = [povm.qubits[q].n_outcomes for q in block]
        strides = _strides(counts)
        out = np.zeros(math.prod(counts))
        for idx, p in enumerate(data):
            pos = sum(((idx // strides_all[q]) % counts_all[q]) * s for q, s in zip(block, strides))
            out[pos] += p
        return out
    c = block_counts(povm, dataset=data, block=block)
    if s_bias is None:
        s_bias = float(c.size)
    if s_bias < 0:
        raise ValueError("bias weight must be nonnegative")
    s_total = data.s
    m = len(block)
    mixed = np.array([np.trace(e).real / (1 << m) for e in _block_effects(povm, block)])
    if s_total + s_bias <= 0:
        raise ValueError("empty dataset and no bias")
    freqs = (c + s_bias * mixed) / (s_total + s_bias)
    if freqs.min() <= 0:
        raise ValueError("zero biased frequency; increase the bias weight")
    return freqs


def empirical_duals(povm: ProductPOVM, data, s_bias=None, partition=None, m_max: int = BLOCK_MAX) -> DualFrame:
    """Duals weighted by inverse (biased) marginal frequencies.

    With no data this reproduces the average-optimal duals; with exact
    frequencies it reproduces the state-optimal duals.
    """
    blocks = normalize_partition(povm.n, partition, m_max)
    alphas = []
    for block in blocks:
        freqs = biased_frequencies(povm, data, block, s_bias)
        if freqs.min() <= 0:
            raise ValueError("zero biased frequency")
        alphas.append(1.0 / freqs)
    return duals(povm, alphas, blocks, m_max)


# ---------------------------------------------------------------------------
# correlations and partitions


def mutual_information(data, i: int, j: int, povm: ProductPOVM | None = None, s_bias: float = 0.0) -> float:
    """Empirical mutual information between the outcomes of two qubits.

    data is a joint (K_i, K_j) distribution or an OutcomeDataset; the
    dataset form needs the POVM when a bias weight is requested.
    """
    if isinstance(data, np.ndarray):
        joint = np.asarray(data, dtype=float)
    else:
        if povm is None:
            raise ValueError("dataset form needs the POVM")
        joint = np.zeros((povm.qubits[i].n_outcomes, povm.qubits[j].n_outcomes))
        for g in data.groups:
            for outcome, c in group_flat_outcomes(povm, g):
                joint[outcome[i], outcome[j]] += c
        if s_bias > 0:
            ti = np.array([np.trace(e).real / 2 for e in povm.qubits[i].effects])
            tj = np.array([np.trace(e).real / 2 for e in povm.qubits[j].effects])
            joint = joint + s_bias * np.outer(ti, tj)
        if joint.sum() <= 0:
            raise ValueError("empty dataset and no bias")
    joint = joint / joint.sum()
    pi = joint.sum(axis=1)
    pj = joint.sum(axis=0)
    total = 0.0
    for a, b in itertools.product(range(joint.shape[0]), range(joint.shape[1])):
        f = joint[a, b]
        if f > 0:
            total += f * math.log(f / (pi[a] * pj[b]))
    return max(total, 0.0)


def partition_cost(pairwise: np.ndarray, blocks) -> float:
    """Captured correlation: ordered-pair mutual information inside blocks."""
    total = 0.0
    for block in blocks:
        for a in block:
            for b in block:
                if a != b:
                    total += float(pairwise[a, b])
    return total


def greedy_partition(pairwise: np.ndarray, m_max: int = BLOCK_MAX):
    """Merge blocks by largest mutual-information gain under the size cap."""
    pairwise = np.asarray(pairwise, dtype=float)
    n = pairwise.shape[0]
    blocks = [[q] for q in range(n)]
    while True:
        best_gain = 0.0
        best = None
        for i in range(len(blocks)):
            for j in range(i + 1, len(blocks)):
                if len(blocks[i]) + len(blocks[j]) > m_max:
                    continue
                gain = sum(pairwise[a, b] + pairwise[b, a] for a in blocks[i] for b in blocks[j])
                if gain > best_gain + 1e-15:
                    best_gain, best = gain, (i, j)
        if best is None:
            break
        i, j = best
        blocks[i] = sorted(blocks[i] + blocks[j])
        del blocks[j]
    result = tuple(sorted(tuple(b) for b in blocks))
    return result, partition_cost(pairwise, result)


# ---------------------------------------------------------------------------
# estimator analysis


def _as_sum(obs) -> PauliSum:
    if isinstance(obs, PauliString):
        return PauliSum([(obs.hermitian_sign(), obs.with_phase(0))])
    return obs


def _restrict(p: PauliString, block) -> PauliString:
    x = z = 0
    for i, q in enumerate(block):
        x |= ((p.x_mask >> q) & 1) << i
        z |= ((p.z_mask >> q) & 1) << i
    return PauliString(len(block), x, z, 0)


def omega_table(povm: ProductPOVM, frame: DualFrame, obs) -> np.ndarray:
    """Estimator coefficients Tr[O D_k] over all flat outcomes."""
    obs = _as_sum(obs)
    counts = povm.outcome_counts()
    total = math.prod(counts)
    if total > ENUMERATION_LIMIT:
        raise ValueError("too many outcomes to enumerate")
    strides = _strides(counts)
    # per block: outcome index of every global outcome
    block_idx = []
    digits = [(np.arange(total) // strides[q]) % counts[q] for q in range(povm.n)]
    for block in frame.blocks:
        bstr = _strides([povm.qubits[q].n_outcomes for q in block])
        idx = np.zeros(total, dtype=np.int64)
        for pos, q in enumerate(block):
            idx += digits[q] * bstr[pos]
        block_idx.append(idx)
    omega = np.zeros(total)
    for coeff, p in obs:
        term = np.full(total, coeff)
        for block, ops, idx in zip(frame.blocks, frame.operators, block_idx):
            pm = _restrict(p, block).to_matrix()
            traces = np.array([np.sum(pm * d.T).real for d in ops])
            term = term * traces[idx]
        omega += term
    return omega


def ssv(povm: ProductPOVM, frame: DualFrame, obs, state) -> float:
    """Single-shot variance sum_k Tr[rho M_k] Tr[O D_k]^2 - <O>^2."""
    probs = outcome_probabilities(povm, state)
    omega = omega_table(povm, frame, obs)
    mean = expectation(state, _as_sum(obs))
    value = math.fsum((probs * omega * omega).tolist()) - mean * mean
    if -1e-9 < value < 0.0:
        return 0.0
    return value


@dataclass(frozen=True)
class EstimateResult:
    mean: float
    stderr: float
    shots: int


def estimate_expectation(povm: ProductPOVM, frame: DualFrame, obs, dataset: OutcomeDataset) -> EstimateResult:
    """Monte-Carlo estimate (1/S) sum_s omega_{k_s} from recorded outcomes."""
    if dataset.s == 0:
        raise ValueError("empty dataset")
    omega = omega_table(povm, frame, obs)
    terms = []
    for group in dataset.groups:
        for outcome, c in group_flat_outcomes(povm, group):
            terms.append((omega[_flat_index(povm, outcome)], c))
    s_total = dataset.s
    mean = math.fsum(w * c for w, c in terms) / s_total
    if s_total > 1:
        var = math.fsum(c * (w - mean) ** 2 for w, c in terms) / (s_total - 1)
        stderr = math.sqrt(var / s_total)
    else:
        stderr = math.inf
    return EstimateResult(mean, stderr, s_total)


# ---------------------------------------------------------------------------
# class performance


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.clip(logits, -40.0, 40.0)
    e = np.exp(z - z.max())
    return e / e.sum()


def _angles_unitary(a: float, b: float, c: float) -> np.ndarray:
    rz1 = np.diag([np.exp(-0.5j * a), np.exp(0.5j * a)])
    ry = np.array([[math.cos(b / 2), -math.sin(b / 2)], [math.sin(b / 2), math.cos(b / 2)]], dtype=complex)
    rz2 = np.diag([np.exp(-0.5j * c), np.exp(0.5j * c)])
    return rz1 @ ry @ rz2


def _hermitian_from(params: np.ndarray) -> np.ndarray:
    h = np.zeros((4, 4), dtype=complex)
    h[np.diag_indices(4)] = params[:4]
    k = 4
    for i in range(4):
        for j in range(i + 1, 4):
            h[i, j] = params[k] + 1j * params[k + 1]
            h[j, i] = params[k] - 1j * params[k + 1]
            k += 2
    return h


_CLASS_PARAM_COUNTS = {
    "shadows": 0,
    "lbcs": 3,
    "mub": 6,
    "pm_simulable": 12,
    "sic": 3,
    "dilation4": 16,
}


def _povm_from_params(kind: str, n: int, x: np.ndarray) -> ProductPOVM:
    per = _CLASS_PARAM_COUNTS[kind]
    chunks = [x[q * per:(q + 1) * per] for q in range(n)]
    if kind == "shadows":
        return build_povm("shadows", n)
    if kind == "lbcs":
        return build_povm("lbcs", n, q=[_softmax(c) for c in chunks])
    if kind == "mub":
        return build_povm(
            "mub", n,
            q=[_softmax(c[:3]) for c in chunks],
            unitary=[_angles_unitary(*c[3:]) for c in chunks],
        )
    if kind == "pm_simulable":
        return build_povm(
            "pm_simulable", n,
            q=[_softmax(c[:3]) for c in chunks],
            unitaries=[[_angles_unitary(*c[3 + 3 * b:6 + 3 * b]) for b in range(3)] for c in chunks],
        )
    if kind == "sic":
        return build_povm("sic", n, unitary=[_angles_unitary(*c) for c in chunks])
    us = []
    for c in chunks:
        h = _hermitian_from(c)
        w, v = np.linalg.eigh(h)
        us.append((v * np.exp(1j * w)) @ v.conj().T)
    return build_povm("dilation4", n, unitary=us)


def _dilation4_seed_params() -> np.ndarray:
    """Parameters whose induced unitary reproduces the tetrahedral POVM."""
    u = naimark_unitary([_proj(s) / 2 for s in _SIC_STATES])
    w, v = np.linalg.eig(u)
    h = (v @ np.diag(np.angle(w)) @ np.linalg.inv(v))
    h = (h + h.conj().T) / 2
    params = np.empty(16)
    params[:4] = h.diagonal().real
    k = 4
    for i in range(4):
        for j in range(i + 1, 4):
            params[k] = h[i, j].real
            params[k + 1] = h[i, j].imag
            k += 2
    return params


@dataclass(frozen=True, eq=False)
class ClassPerformance:
    f: float
    params: np.ndarray
    povm: ProductPOVM
    frames: tuple
    numerators: tuple
    denominators: tuple
    nfev: int
    converged: bool
    message: str


def class_performance(
    kind: str,
    observables,
    state,
    dual_space: str = "weighted",
    budget: int = 500,
    partition=None,
    x0=None,
    m_max: int = BLOCK_MAX,
) -> ClassPerformance:
    """Minimized variance ratio of a POVM class against the eigenbasis bound.

    The objective is the summed single-shot variance over the
    observables divided by the summed projective-measurement variance.
    Probability parameters pass through a softmax, so the optimizer
    (Nelder-Mead) works on an unconstrained vector.  Failures report
    the best parameters seen.
    """
    if isinstance(observables, (PauliSum, PauliString)):
        observables = [observables]
    observables = [_as_sum(o) for o in observables]
    if not observables:
        raise ValueError("need at least one observable")
    n = observables[0].n
    blocks = normalize_partition(n, partition, m_max)
    denoms = []
    for o in observables:
        o2 = o.to_matrix() @ o.to_matrix()
        if isinstance(state, StateVector):
            second = float(np.vdot(state.amps, o2 @ state.amps).real)
        else:
            second = float(np.trace(state.mat @ o2).real)
        denoms.append(second - expectation(state, o) ** 2)
    denom_sum = sum(denoms)
    if denom_sum <= 1e-12:
        raise ValueError("observables have no variance in this state; ratio undefined")

    per_class = _CLASS_PARAM_COUNTS[kind] * n
    weight_counts = []
    if dual_space == "weighted":
        k_out = 4 if kind in ("sic", "dilation4") else 6
        weight_counts = [sum(math.prod([k_out] * len(b)) for b in blocks)] * len(observables)
    elif dual_space not in ("canonical", "optimal", "avg"):
        raise ValueError(f"unknown dual space {dual_space!r}")
    dim = per_class + sum(weight_counts)

    if x0 is None:
        x0 = np.zeros(dim)
        if kind == "dilation4":
            seed = _dilation4_seed_params()
            for q in range(n):
                x0[q * 16:(q + 1) * 16] = seed
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dim,):
        raise ValueError(f"expected {dim} parameters")

    def frames_for(povm, x):
        if dual_space == "canonical":
            return (duals(povm, None, blocks, m_max),) * len(observables)
        if dual_space == "optimal":
            return (optimal_duals(povm, state, blocks, m_max),) * len(observables)
        if dual_space == "avg":
            return (avg_optimal_duals(povm, blocks, m_max),) * len(observables)
        out = []
        pos = per_class
        for count in weight_counts:
            theta = x[pos:pos + count]
            pos += count
            alphas = []
            at = 0
            for b in blocks:
                size = math.prod(povm.qubits[q].n_outcomes for q in b)
                alphas.append(np.exp(np.clip(theta[at:at + size], -40, 40)))
                at += size
            out.append(duals(povm, alphas, blocks, m_max))
        return tuple(out)

    best = {"val": math.inf, "x": x0.copy()}

    def objective(x):
        try:
            povm = _povm_from_params(kind, n, x[:per_class])
            frames = frames_for(povm, x)
            num = sum(ssv(povm, f, o, state) for f, o in zip(frames, observables))
            val = num / denom_sum
        except ValueError:
            return 1e9
        if val < best["val"]:
            best["val"], best["x"] = val, x.copy()
        return val

    message = ""
    converged = False
    nfev = 0
    if dim == 0:
        objective(x0)
        nfev = 1
        converged = True
        message = "nothing to optimize"
    else:
        try:
            res = scipy.optimize.minimize(
                objective, x0, method="Nelder-Mead",
                options={"maxfev": budget, "xatol": 1e-9, "fatol": 1e-12},
            )
            nfev = int(res.nfev)
            converged = bool(res.success)
            message = str(res.message)
        except Exception as exc:  # pragma: no cover - scipy failures are rare
            message = f"optimizer failed: {exc}"
    if not math.isfinite(best["val"]):
        raise ValueError(f"no feasible parameters found: {message}")
    povm = _povm_from_params(kind, n, best["x"][:per_class])
    frames = frames_for(povm, best["x"])
    nums = tuple(ssv(povm, f, o, state) for f, o in zip(frames, observables))
    return ClassPerformance(
        f=sum(nums) / denom_sum,
        params=best["x"],
        povm=povm,
        frames=frames,
        numerators=nums,
        denominators=tuple(denoms),
        nfev=nfev,
        converged=converged,
        message=message,
    )


# ---------------------------------------------------------------------------
# distances and tomography


def _effect_list(povm_or_effects) -> list:
    if isinstance(povm_or_effects, ProductPOVM):
        povm = povm_or_effects
        total = povm.n_global_outcomes()
        if total > 12:
            raise ValueError("too many outcomes for exhaustive search")
        strides = _strides(povm.outcome_counts())
        out = []
        for idx in range(total):
            mat = np.array([[1.0 + 0j]])
            for q in reversed(range(povm.n)):
                o = (idx // strides[q]) % povm.qubits[q].n_outcomes
                mat = np.kron(mat, povm.qubits[q].effects[o])
            out.append(mat)
        return out
    return [np.asarray(e, dtype=complex) for e in povm_or_effects]


def operational_distance(a, b) -> float:
    """Worst-case total variation distance between two POVMs.

    Equals the maximum over outcome subsets of the operator norm of the
    summed effect differences; searched exhaustively, so the outcome
    count is capped at 12.
    """
    ea, eb = _effect_list(a), _effect_list(b)
    if len(ea) < len(eb):
        ea = ea + [np.zeros_like(eb[0])] * (len(eb) - len(ea))
    if len(eb) < len(ea):
        eb = eb + [np.zeros_like(ea[0])] * (len(ea) - len(eb))
    if len(ea) > 12:
        raise ValueError("too many outcomes for exhaustive search")
    deltas = [x - y for x, y in zip(ea, eb)]
    best = 0.0
    for mask in range(1, 1 << len(deltas)):
        total = sum(deltas[k] for k in range(len(deltas)) if (mask >> k) & 1)
        norm = float(np.abs(np.linalg.eigvalsh(total)).max())
        best = max(best, norm)
    return best


def pauli_eigenstate_projectors() -> tuple:
    """The six single-qubit Pauli eigenstate projectors (Z, X, Y; +/-)."""
    kets = [
        np.array([1, 0]), np.array([0, 1]),
        np.array([1, 1]) / math.sqrt(2), np.array([1, -1]) / math.sqrt(2),
        np.array([1, 1j]) / math.sqrt(2), np.array([1, -1j]) / math.sqrt(2),
    ]
    return tuple(_proj(k) for k in kets)


@dataclass(frozen=True, eq=False)
class QDTEstimate:
    effects: tuple
    physical: bool
    residual: float
    completeness_error: float


def qdt_linear(states, counts, enforce_completeness: bool = False) -> QDTEstimate:
    """Least-squares detector tomography from reference-state frequencies.

    counts[j, k] is how often outcome k fired on reference state j.
    Non-positive estimates are returned as-is with physical=False.
    """
    refs = [np.asarray(s, dtype=complex) for s in states]
    refs = [(_proj(s) if s.ndim == 1 else s) for s in refs]
    a = np.stack([_vec(r) for r in refs])
    if np.linalg.matrix_rank(a, tol=1e-10) < 4:
        raise ValueError("reference states do not span the operator space")
    counts = np.asarray(counts, dtype=float)
    if counts.shape[0] != len(refs):
        raise ValueError("one row of counts per reference state")
    row_totals = counts.sum(axis=1, keepdims=True)
    if row_totals.min() <= 0:
        raise ValueError("every reference state needs at least one shot")
    freqs = counts / row_totals
    coeff, residual, _, _ = np.linalg.lstsq(a, freqs, rcond=None)
    effects = [_unvec(coeff[:, k]) for k in range(freqs.shape[1])]
    if enforce_completeness:
        effects[-1] = _EYE2 - sum(effects[:-1])
    res_norm = float(np.linalg.norm(a @ coeff - freqs))
    comp = float(np.abs(sum(effects) - _EYE2).max())
    physical = all(np.linalg.eigvalsh(e)[0] >= -1e-9 for e in effects)
    return QDTEstimate(tuple(effects), physical, res_norm, comp)


# ---------------------------------------------------------------------------
# serialization


def _mat_lines(mat: np.ndarray) -> list:
    return [" ".join(_fmt_complex(v) for v in row) for row in np.asarray(mat, dtype=complex)]


def _parse_mat(lines, dim):
    rows = [[complex(tok) for tok in lines.pop(0).split()] for _ in range(dim)]
    return np.array(rows, dtype=complex)


def povm_to_text(povm: ProductPOVM) -> str:
    lines = [f"qubits {povm.n}", f"class {povm.label or '-'}"]
    for q, qu in enumerate(povm.qubits):
        if qu.bases is not None:
            lines.append(f"qubit {q} bases {len(qu.bases)}")
            for b, (p, u) in enumerate(qu.bases):
                lines.append(f"basis {b} {p:.17g}")
                lines.extend(_mat_lines(u))
        else:
            lines.append(f"qubit {q} effects {qu.n_outcomes}")
            for k, e in enumerate(qu.effects):
                lines.append(f"effect {k}")
                lines.extend(_mat_lines(e))
    lines.append("end")
    return "\n".join(lines) + "\n"


def povm_from_text(text: str) -> ProductPOVM:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n = int(lines.pop(0).split()[1])
    label = lines.pop(0).split()[1]
    qubits = []
    while lines and lines[0] != "end":
        head = lines.pop(0).split()
        if head[2] == "bases":
            bases = []
            for _ in range(int(head[3])):
                b_head = lines.pop(0).split()
                bases.append((float(b_head[2]), _parse_mat(lines, 2)))
            qubits.append(SingleQubitPOVM.from_bases(bases))
        else:
            effects = []
            for _ in range(int(head[3])):
                lines.pop(0)
                effects.append(_parse_mat(lines, 2))
            qubits.append(SingleQubitPOVM(tuple(effects)))
    return ProductPOVM(n, tuple(qubits), label="" if label == "-" else label)


def dual_frame_to_text(frame: DualFrame) -> str:
    lines = [f"qubits {frame.n}", f"blocks {len(frame.blocks)}"]
    for block, ops in zip(frame.blocks, frame.operators):
        lines.append("block " + " ".join(str(q) for q in block) + f" outcomes {ops.shape[0]}")
        for k in range(ops.shape[0]):
            lines.append(f"outcome {k}")
            lines.extend(_mat_lines(ops[k]))
    lines.append("end")
    return "\n".join(lines) + "\n"


def dual_frame_from_text(text: str) -> DualFrame:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n = int(lines.pop(0).split()[1])
    n_blocks = int(lines.pop(0).split()[1])
    blocks = []
    ops = []
    for _ in range(n_blocks):
        head = lines.pop(0).split()
        block = tuple(int(t) for t in head[1:head.index("outcomes")])
        count = int(head[-1])
        dim = 1 << len(block)
        mats = []
        for _ in range(count):
            lines.pop(0)
            mats.append(_parse_mat(lines, dim))
        blocks.append(block)
        ops.append(np.stack(mats))
    return DualFrame(n, tuple(blocks), tuple(ops))


def dataset_to_text(dataset: OutcomeDataset) -> str:
    """Header plus one row per recorded (setting, outcome, count).

    The basis descriptor is the per-qubit basis digit string, or '-'
    for flat classes; outcome bits are little-endian, two per qubit in
    the flat case.  Adjacent rows sharing a descriptor form one group
    when read back.
    """
    lines = [
        f"qubits {dataset.n}",
        f"class {dataset.label or '-'}",
        f"seed {dataset.seed if dataset.seed is not None else '-'}",
    ]
    for g in dataset.groups:
        if g.bases is None:
            desc = "-"
            width = 2 * dataset.n
        else:
            desc = "".join(str(b) for b in g.bases)
            width = dataset.n
        for key, c in g.counts.items():
            bits = "".join(str((key >> i) & 1) for i in range(width))
            lines.append(f"{desc} {bits} {c}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> OutcomeDataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n = int(lines.pop(0).split()[1])
    label = lines.pop(0).split()[1]
    seed_tok = lines.pop(0).split()[1]
    seed = None if seed_tok == "-" else int(seed_tok)
    groups = []
    current_desc = object()
    counts = None
    bases = None
    for ln in lines:
        if ln == "end":
            break
        desc, bits, count = ln.split()
        if desc != current_desc:
            if counts is not None:
                groups.append(ShotGroup(bases, counts))
            current_desc = desc
            bases = None if desc == "-" else tuple(int(ch) for ch in desc)
            counts = {}
        key = sum(int(ch) << i for i, ch in enumerate(bits))
        counts[key] = counts.get(key, 0) + int(count)
    if counts is not None:
        groups.append(ShotGroup(bases, counts))
    return OutcomeDataset(n, tuple(groups), label="" if label == "-" else label, seed=seed)
