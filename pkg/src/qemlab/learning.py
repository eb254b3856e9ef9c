"""Gate-set noise learning.

Cycle-benchmarking circuits and decay fits, non-negative least-squares
generator fits, pair-fidelity re-weighting, and design-matrix learning
of a whole gate set (state prep, layers, measurement) with the gauge
freedom exposed as the null space of the design matrix.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .channels import GaugeParams, PauliFidelities, SPLModel
from .pauli import (
    CliffordTableau,
    PauliString,
    anticommutation_matrix,
    conjugate,
    inverse,
    pattern,
)
from .simulate import Circuit, noisy_clifford_expectation, single_qubit_layer

NOISE_FLOOR = 0.02  # absolute signal below which decay points are unusable
NNLS_TOL = 1e-12

_I2 = np.eye(2, dtype=complex)
_LETTER_MATS = {
    "I": _I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}
# U with U Z Udag = letter; maps |0> to the +1 eigenstate of the letter
_BASIS_ROT = {
    "Z": _I2,
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "Y": np.array([[1, 1], [1j, -1j]], dtype=complex) / np.sqrt(2),
}
_LETTER_BITS = {"X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


# ---------------------------------------------------------------------------
# experiments and layouts


@dataclass(frozen=True)
class LearningExperiment:
    """One prepare-layers-measure datum class.

    The preparation is the +1 eigenstate of `prep`; `layers` is the tag
    sequence of noisy layers applied; `meas` must be the forward image
    of `prep` under the ideal layers and `sign` the ideal +-1 signal.
    """

    prep: PauliString
    layers: tuple
    meas: PauliString
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.prep.n != self.meas.n:
            raise ValueError("preparation and measurement widths differ")
        if self.prep.phase_exp % 2 or self.meas.phase_exp % 2:
            raise ValueError("experiment Paulis must be Hermitian")
        if self.prep.is_identity() or self.meas.is_identity():
            raise ValueError("identity carries no learning signal")
        if self.sign not in (-1, 1):
            raise ValueError("expected sign must be +1 or -1")


@dataclass(frozen=True)
class GateSetLayout:
    """Names the model parameters.

    `layers` maps each tag to its ideal Clifford tableau; the modeled
    noise support defaults to the tableau's non-trivial qubits and can
    be widened per tag through `supports`.  `mode` sets the SPAM
    resolution: 'full' keeps one fidelity per support pattern, 'local'
    one per qubit (pattern fidelities factorize).
    """

    n: int
    layers: dict
    mode: str = "full"
    supports: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("full", "local"):
            raise ValueError(f"unknown layout mode {self.mode!r}")
        if not self.layers:
            raise ValueError("layout needs at least one layer tag")
        for tag, tab in self.layers.items():
            if ":" in tag:
                raise ValueError("layer tags must not contain ':'")
            if tab.n != self.n:
                raise ValueError(f"tableau width mismatch for layer {tag!r}")

    def support_of(self, tag: str) -> int:
        if tag in self.supports:
            return int(self.supports[tag])
        return _tableau_support(self.layers[tag])


def _tableau_support(t: CliffordTableau) -> int:
    ident = CliffordTableau.identity(t.n)
    mask = 0
    for q in range(t.n):
        if t.x_images[q] != ident.x_images[q] or t.z_images[q] != ident.z_images[q]:
            mask |= 1 << q
    return mask


def _letters_of(p: PauliString) -> dict:
    out = {}
    for q in range(p.n):
        x = (p.x_mask >> q) & 1
        z = (p.z_mask >> q) & 1
        if x or z:
            out[q] = "Y" if x and z else ("X" if x else "Z")
    return out


def _pauli_on(n: int, assignment: dict) -> PauliString:
    x = z = 0
    for q, letter in assignment.items():
        bx, bz = _LETTER_BITS[letter]
        x |= bx << q
        z |= bz << q
    return PauliString(n, x, z, 0)


def _support_paulis(n: int, mask: int) -> list:
    """All non-identity Paulis supported inside the mask, sorted by key."""
    qubits = [q for q in range(n) if (mask >> q) & 1]
    out = []
    for combo in itertools.product("IXYZ", repeat=len(qubits)):
        if all(c == "I" for c in combo):
            continue
        out.append(_pauli_on(n, {q: c for q, c in zip(qubits, combo) if c != "I"}))
    out.sort(key=lambda p: p.key())
    return out


def _restrict(p: PauliString, mask: int) -> PauliString:
    return PauliString(p.n, p.x_mask & mask, p.z_mask & mask, 0)


def forward_image(layout: GateSetLayout, prep: PauliString, tags) -> tuple:
    """(measured Pauli, ideal sign) of prep pushed through the tag sequence."""
    cur = prep.with_phase(0)
    for tag in tags:
        cur = conjugate(layout.layers[tag], cur)
    return cur.with_phase(0), cur.hermitian_sign()


def _path_entries(tableaus: dict, e: LearningExperiment) -> list:
    """Backpropagated Paulis a_0 .. a_{T+1}; validates the experiment."""
    cur = e.meas.with_phase(0)
    rev = [cur]
    inverses = {}
    for tag in reversed(e.layers):
        if tag not in tableaus:
            raise ValueError(f"unknown layer tag {tag!r}")
        if tag not in inverses:
            inverses[tag] = inverse(tableaus[tag])
        cur = conjugate(inverses[tag], cur)
        rev.append(cur.with_phase(0))
    if cur.key() != e.prep.key():
        raise ValueError("measured Pauli is not the forward image of the preparation")
    if cur.hermitian_sign() != e.sign:
        raise ValueError("expected sign disagrees with the ideal Clifford path")
    ordered = list(reversed(rev))
    return [ordered[0]] + ordered


# ---------------------------------------------------------------------------
# noise model


@dataclass(frozen=True)
class LayerNoise:
    """Pauli-diagonal noise of one layer: fidelity table on its support."""

    tableau: CliffordTableau
    fidelities: PauliFidelities
    support: int

    def fidelity(self, p: PauliString) -> float:
        q = _restrict(p, self.support)
        if q.is_identity():
            return 1.0
        try:
            return self.fidelities.get(q)
        except KeyError:
            raise ValueError(f"no fidelity for layer Pauli {q.to_text()}") from None


@dataclass(frozen=True)
class GateSetNoiseModel:
    """Generalized-depolarizing SPAM tables plus per-tag layer noise.

    prep/meas map support-pattern masks to fidelities (the identity
    pattern is implicitly 1).  Fidelities may exceed 1 on gauged,
    non-physical representatives; they must stay positive.  `kernel`
    holds gauge directions in log-fidelity space over `columns`.
    """

    n: int
    prep: dict
    meas: dict
    layers: dict
    mode: str = "full"
    columns: tuple = ()
    kernel: tuple = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, table in (("prep", self.prep), ("meas", self.meas)):
            for mask, f in table.items():
                if mask == 0 and abs(f - 1.0) > 1e-12:
                    raise ValueError(f"identity {name} fidelity must be 1")
                if not np.isfinite(f) or f <= 0:
                    raise ValueError(f"{name} fidelity must be positive and finite")
        for tag, ln in self.layers.items():
            if ln.tableau.n != self.n:
                raise ValueError(f"layer {tag!r} width mismatch")

    def prep_fidelity(self, p: PauliString) -> float:
        return self._spam(self.prep, p, "preparation")

    def meas_fidelity(self, p: PauliString) -> float:
        return self._spam(self.meas, p, "measurement")

    def layer_fidelity(self, tag: str, p: PauliString) -> float:
        if tag not in self.layers:
            raise ValueError(f"model has no layer {tag!r}")
        return self.layers[tag].fidelity(p)

    def _spam(self, table: dict, p: PauliString, name: str) -> float:
        if p.support == 0:
            return 1.0
        try:
            return float(table[p.support])
        except KeyError:
            raise ValueError(f"no {name} fidelity for pattern {pattern(p)}") from None

    @property
    def physical(self) -> bool:
        spam_ok = all(
            f <= 1 + 1e-12
            for table in (self.prep, self.meas)
            for f in table.values()
        )
        return spam_ok and all(ln.fidelities.physical for ln in self.layers.values())


def predict_signal(model: GateSetNoiseModel, e: LearningExperiment) -> float:
    """Expected signal of an experiment under the model (Pauli path product)."""
    tableaus = {tag: ln.tableau for tag, ln in model.layers.items()}
    entries = _path_entries(tableaus, e)
    value = float(e.sign) * model.prep_fidelity(entries[0])
    for tag, a_k in zip(e.layers, entries[1:-1]):
        value *= model.layer_fidelity(tag, a_k)
    return value * model.meas_fidelity(entries[-1])


def sample_signal(
    model: GateSetNoiseModel, e: LearningExperiment, shots: int, rng: np.random.Generator
) -> float:
    """Binomial shot noise around the model's signal (exact for +-1 outcomes)."""
    v = predict_signal(model, e)
    p = min(max((1.0 + v) / 2.0, 0.0), 1.0)
    return 2.0 * rng.binomial(int(shots), p) / int(shots) - 1.0


def model_to_text(model: GateSetNoiseModel) -> str:
    def tab_pairs(t):
        return {
            "x": [p.to_text() for p in t.x_images],
            "z": [p.to_text() for p in t.z_images],
        }

    doc = {
        "n": model.n,
        "mode": model.mode,
        "prep": sorted((int(m), float(f)) for m, f in model.prep.items()),
        "meas": sorted((int(m), float(f)) for m, f in model.meas.items()),
        "layers": {
            tag: {
                "support": int(ln.support),
                "tableau": tab_pairs(ln.tableau),
                "fidelities": ln.fidelities.to_pairs(),
            }
            for tag, ln in sorted(model.layers.items())
        },
        "columns": [column_label(c, model.n) for c in model.columns],
        "kernel": [[float(v) for v in vec] for vec in model.kernel],
        "provenance": dict(model.provenance),
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def model_from_text(text: str) -> GateSetNoiseModel:
    doc = json.loads(text)
    n = int(doc["n"])
    layers = {}
    for tag, spec in doc["layers"].items():
        tab = CliffordTableau(
            n,
            tuple(PauliString.from_text(t) for t in spec["tableau"]["x"]),
            tuple(PauliString.from_text(t) for t in spec["tableau"]["z"]),
        )
        layers[tag] = LayerNoise(
            tab, PauliFidelities.from_pairs(spec["fidelities"]), int(spec["support"])
        )
    return GateSetNoiseModel(
        n=n,
        prep={int(m): float(f) for m, f in doc["prep"]},
        meas={int(m): float(f) for m, f in doc["meas"]},
        layers=layers,
        mode=doc["mode"],
        columns=tuple(parse_column_label(lbl) for lbl in doc["columns"]),
        kernel=tuple(np.array(vec) for vec in doc["kernel"]),
        provenance=doc.get("provenance", {}),
    )


# ---------------------------------------------------------------------------
# cycle benchmarking


@dataclass(frozen=True)
class CbPoint:
    """All twirl realizations probing one Pauli at one depth.

    `depth` counts layer pairs; the circuits apply twice that many
    tagged layers.  `signs` holds the ideal +-1 of each realization;
    multiplying the measured value by it undoes the twirl.
    """

    experiment: LearningExperiment
    pauli: PauliString
    depth: int
    circuits: tuple
    signs: tuple
    shots: int | None = None


def _batch_settings(basis, n: int):
    """Greedy basis batching: parity-alternating settings first.

    Two-local nearest-neighbor bases on a line land entirely in the 9
    parity settings; anything else falls through to fresh settings.
    """
    parity = list(itertools.product("XYZ", repeat=2))
    parity_used = {}
    extras = []
    assign = []
    for p in basis:
        letters = _letters_of(p)
        placed = None
        for idx, (u, v) in enumerate(parity):
            if all(l == (u if q % 2 == 0 else v) for q, l in letters.items()):
                parity_used.setdefault(idx, None)
                placed = ("p", idx)
                break
        if placed is None:
            for k, extra in enumerate(extras):
                if all(extra.get(q, l) == l for q, l in letters.items()):
                    extra.update(letters)
                    placed = ("e", k)
                    break
        if placed is None:
            extras.append(dict(letters))
            placed = ("e", len(extras) - 1)
        assign.append(placed)
    settings = []
    index_of = {}
    for idx in sorted(parity_used):
        u, v = parity[idx]
        index_of[("p", idx)] = len(settings)
        settings.append(tuple(u if q % 2 == 0 else v for q in range(n)))
    for k, extra in enumerate(extras):
        index_of[("e", k)] = len(settings)
        settings.append(tuple(extra.get(q, "Z") for q in range(n)))
    return settings, [index_of[a] for a in assign]


def make_cb_circuits(layer, basis, depths, twirls, shots=None, rng=None):
    """Cycle-benchmarking points for one tagged layer.

    `depths` are even layer counts (the layer is applied in pairs); a
    random Pauli twirl precedes every application and the measurement
    is twirled with X flips.  Paulis sharing a preparation/measurement
    setting share circuits.
    """
    if layer.tag is None:
        raise ValueError("cycle benchmarking needs a tagged layer")
    if layer.tableau is None:
        raise ValueError("cycle benchmarking needs a Clifford layer")
    n = layer.n
    tag = layer.tag
    rng = np.random.default_rng(0) if rng is None else rng
    depths = [int(d) for d in depths]
    for d in depths:
        if d < 0 or d % 2:
            raise ValueError(f"depth {d} must be an even, nonnegative layer count")
    basis = list(basis)
    for p in basis:
        if p.n != n:
            raise ValueError("basis Pauli width mismatch")
        if p.is_identity() or p.phase_exp % 2:
            raise ValueError("basis Paulis must be Hermitian and non-identity")
        twice = conjugate(layer.tableau, conjugate(layer.tableau, p))
        if twice.key() != p.key():
            raise ValueError(
                f"{p.to_text()} does not return to itself after a layer pair"
            )
    settings, assign = _batch_settings(basis, n)

    pool = {}
    for s_idx, letters in enumerate(settings):
        rot = single_qubit_layer(n, [_BASIS_ROT[l] for l in letters])
        for d in depths:
            circuits = []
            for _ in range(twirls):
                stack = [rot]
                for _ in range(d):
                    mats = [
                        _LETTER_MATS["IXYZ"[k]] for k in rng.integers(0, 4, size=n)
                    ]
                    stack.append(single_qubit_layer(n, mats))
                    stack.append(layer)
                flips = rng.integers(0, 2, size=n)
                stack.append(
                    single_qubit_layer(
                        n, [_LETTER_MATS["X"] if b else _I2 for b in flips]
                    )
                )
                circuits.append(Circuit(n, tuple(stack)))
            pool[(s_idx, d)] = tuple(circuits)

    points = []
    for i, p in enumerate(basis):
        for d in depths:
            img = p.with_phase(0)
            for _ in range(d):
                img = conjugate(layer.tableau, img)
            e = LearningExperiment(
                p, (tag,) * d, img.with_phase(0), img.hermitian_sign()
            )
            circuits = pool[(assign[i], d)]
            signs = tuple(
                noisy_clifford_expectation(c, e.meas, None) for c in circuits
            )
            points.append(CbPoint(e, p, d // 2, circuits, signs, shots))
    return points


def cb_signal(point: CbPoint, gateset=None, rng=None):
    """(signal, variance) of one point; exact unless shots and rng are given."""
    values = [
        noisy_clifford_expectation(c, point.experiment.meas, gateset)
        for c in point.circuits
    ]
    k = len(values)
    if point.shots is None or rng is None:
        signal = float(np.mean([s * v for s, v in zip(point.signs, values)]))
        return signal, 0.0
    shots = int(point.shots)
    drawn = []
    for s, v in zip(point.signs, values):
        prob = min(max((1.0 + v) / 2.0, 0.0), 1.0)
        drawn.append(s * (2.0 * rng.binomial(shots, prob) / shots - 1.0))
    signal = float(np.mean(drawn))
    var = max(1.0 - signal * signal, 1.0 / shots) / (shots * k)
    return signal, var


# ---------------------------------------------------------------------------
# decay and generator fits


@dataclass(frozen=True)
class DecayFit:
    pair_fidelity: float
    pair_err: float
    spam: float
    spam_err: float
    base: float  # per-depth decay factor f * f'
    residual: float
    used: int
    dropped: int


def fit_decay(points, variances=None) -> DecayFit:
    """Weighted log-linear fit of signal = spam * base^depth.

    Weights follow the delta method for the log transform: signal^2
    when no variances are supplied, signal^2/variance otherwise.
    Points at or below the noise floor are dropped with a warning.
    """
    depths = np.array([float(d) for d, _ in points])
    signals = np.array([float(s) for _, s in points])
    var = None if variances is None else np.asarray(variances, dtype=float)
    keep = signals > NOISE_FLOOR
    if not np.all(keep):
        warnings.warn(
            f"dropped {int(np.sum(~keep))} decay points at or below the noise floor",
            RuntimeWarning,
            stacklevel=2,
        )
    depths, signals = depths[keep], signals[keep]
    if var is not None:
        var = var[keep]
    if np.unique(depths).size < 2:
        raise ValueError("need at least two usable depths to fit a decay")
    y = np.log(signals)
    w = signals**2 if var is None else signals**2 / np.maximum(var, 1e-300)
    a = np.stack([depths, np.ones_like(depths)], axis=1)
    aw = a * w[:, None]
    normal = a.T @ aw
    coef = np.linalg.solve(normal, aw.T @ y)
    resid = y - a @ coef
    ssr = float(resid @ (w * resid))
    cov = np.linalg.inv(normal)
    if var is None:
        dof = max(len(y) - 2, 1)
        cov = cov * (ssr / dof if len(y) > 2 else 1.0)
    slope_err, offset_err = np.sqrt(np.diag(cov))
    base = float(np.exp(coef[0]))
    fbar = float(np.exp(coef[0] / 2.0))
    spam = float(np.exp(coef[1]))
    return DecayFit(
        pair_fidelity=fbar,
        pair_err=fbar * float(slope_err) / 2.0,
        spam=spam,
        spam_err=spam * float(offset_err),
        base=base,
        residual=ssr,
        used=int(len(y)),
        dropped=int(np.sum(~keep)),
    )


def nnls(a: np.ndarray, y: np.ndarray, tol: float = NNLS_TOL, max_iter=None):
    """Lawson-Hanson active-set NNLS: argmin ||a x - y|| subject to x >= 0.

    Ties in the gradient are broken by the lowest column index.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    m, k = a.shape
    if y.shape != (m,):
        raise ValueError("shape mismatch between matrix and target")
    max_iter = 10 * k if max_iter is None else int(max_iter)
    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    for _ in range(max_iter):
        grad = a.T @ (y - a @ x)
        grad[passive] = -np.inf
        j = int(np.argmax(grad))
        if grad[j] <= tol:
            return x, float(np.linalg.norm(y - a @ x))
        passive[j] = True
        while True:
            sub = np.linalg.lstsq(a[:, passive], y, rcond=None)[0]
            if sub.size and np.min(sub) > tol:
                x[passive] = sub
                x[~passive] = 0.0
                break
            cur = x[passive]
            blocking = sub <= tol
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(blocking, cur / (cur - sub), np.inf)
            alpha = float(np.min(steps))
            x[passive] = cur + alpha * (sub - cur)
            drop = np.zeros(k, dtype=bool)
            drop[passive] = x[passive] <= tol
            x[drop] = 0.0
            passive[drop] = False
            if not np.any(passive):
                break
    raise RuntimeError("non-negative least squares did not converge")


@dataclass(frozen=True)
class GeneratorFit:
    model: SPLModel
    residual: float


def fit_generators(pair_fidelities: PauliFidelities, tableau: CliffordTableau):
    """Fit SPL rates to pair fidelities of a layer.

    Stacks the anticommutation matrices of the probe basis and of its
    layer-conjugates, so each pair fidelity constrains both members.
    """
    basis = [p for p, _ in pair_fidelities.items()]
    fbar = np.array([f for _, f in pair_fidelities.items()])
    if np.any(fbar <= 0):
        raise ValueError("pair fidelities must be positive")
    images = [conjugate(tableau, p).with_phase(0) for p in basis]
    m = anticommutation_matrix(basis).astype(float)
    m_conj = np.zeros_like(m)
    for i, img in enumerate(images):
        for j, g in enumerate(basis):
            from .pauli import anticommutes

            m_conj[i, j] = 1.0 if anticommutes(img, g) else 0.0
    target = -0.5 * np.log(np.concatenate([fbar, fbar]))
    stacked = np.vstack([m, m_conj])
    rates, residual = nnls(stacked, target)
    return GeneratorFit(SPLModel(tuple(basis), rates), residual)


# ---------------------------------------------------------------------------
# pair-fidelity re-weighting


@dataclass(frozen=True)
class SplitFidelities:
    """Asymmetric split of pair fidelities.

    For each probe Pauli P the table stores (f on P, f on its layer
    conjugate); the geometric mean always reproduces the pair value.
    """

    n: int
    entries: dict  # key -> (pauli, forward, conjugate)

    def forward(self, p: PauliString) -> float:
        return self.entries[p.key()][1]

    def conjugate_of(self, p: PauliString) -> float:
        return self.entries[p.key()][2]

    def items(self):
        for key in sorted(self.entries):
            yield self.entries[key]


def _alpha_of(fbar: float, delta: float) -> float:
    return delta * fbar + (1.0 - delta) / fbar


def reweight(pair_fidelities: PauliFidelities, deltas=None) -> SplitFidelities:
    """Split each pair fidelity into (alpha*fbar, fbar/alpha).

    `deltas` maps Paulis (or their keys) to split parameters in [0, 1];
    a scalar applies everywhere.  Unlisted Paulis keep the symmetric
    split alpha = 1.
    """
    table = {}
    if deltas is None:
        lookup = lambda p: None
    elif np.isscalar(deltas):
        lookup = lambda p: float(deltas)
    else:
        by_key = {
            (k.key() if isinstance(k, PauliString) else k): v
            for k, v in deltas.items()
        }
        lookup = lambda p: by_key.get(p.key())
    for p, fbar in pair_fidelities.items():
        delta = lookup(p)
        if delta is None:
            alpha = 1.0
        else:
            delta = float(delta)
            if not 0.0 <= delta <= 1.0:
                raise ValueError(f"split parameter {delta} outside [0, 1]")
            alpha = _alpha_of(fbar, delta)
        table[p.key()] = (p, alpha * fbar, fbar / alpha)
    return SplitFidelities(pair_fidelities.n, table)


def match_clifford_points(groups, targets, carry: float = 1.0):
    """Uniform split parameters reproducing measured Clifford products.

    Walks the data points depth-first: for each group of newly entering
    pair fidelities, bisects the single delta shared by the group until
    the running product of forward fidelities matches the target.
    Unreachable targets clamp delta to the nearest endpoint.
    """
    if len(groups) != len(targets):
        raise ValueError("need one target per fidelity group")
    deltas = []
    products = []
    running = float(carry)
    for fbars, target in zip(groups, targets):
        fbars = [float(f) for f in fbars]
        if target <= 0:
            raise ValueError("Clifford targets must be positive")

        def product(delta):
            out = running
            for f in fbars:
                out *= _alpha_of(f, delta) * f
            return out

        lo, hi = 0.0, 1.0
        if target >= product(0.0):
            delta = 0.0
        elif target <= product(1.0):
            delta = 1.0
        else:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if product(mid) > target:
                    lo = mid
                else:
                    hi = mid
            delta = 0.5 * (lo + hi)
        deltas.append(delta)
        running = product(delta)
        products.append(running)
    return deltas, products


# ---------------------------------------------------------------------------
# design systems


def layout_columns(layout: GateSetLayout) -> tuple:
    cols = []
    if layout.mode == "full":
        cols.extend(("S", mask) for mask in range(1, 1 << layout.n))
        cols.extend(("M", mask) for mask in range(1, 1 << layout.n))
    else:
        cols.extend(("S", q) for q in range(layout.n))
        cols.extend(("M", q) for q in range(layout.n))
    for tag in sorted(layout.layers):
        for p in _support_paulis(layout.n, layout.support_of(tag)):
            cols.append(("G", tag, p.key()))
    return tuple(cols)


def column_label(col, n: int) -> str:
    kind = col[0]
    if kind in ("S", "M"):
        return f"{kind}:{col[1]}"
    z, x = col[2]
    return f"G:{col[1]}:{PauliString(n, x, z, 0).to_text()}"


def parse_column_label(label: str):
    kind, _, rest = label.partition(":")
    if kind in ("S", "M"):
        return (kind, int(rest))
    tag, _, text = rest.partition(":")
    p = PauliString.from_text(text)
    return ("G", tag, p.key())


def _spam_entries(layout: GateSetLayout, col_index: dict, kind: str, p: PauliString):
    """(column, increment) pairs for one SPAM pattern touch."""
    if layout.mode == "full":
        return [((kind, p.support), 1.0)]
    return [((kind, q), 1.0) for q in range(layout.n) if (p.support >> q) & 1]


def build_design(experiments, layout: GateSetLayout, signals):
    """Design matrix F and observations b = -log(sign * signal).

    One row per experiment; entries count how often each log-fidelity
    parameter appears on the backpropagated Pauli path.  Rows with
    nonpositive corrected signals are dropped with a warning.
    """
    signals = list(signals)
    if len(signals) != len(experiments):
        raise ValueError("need one signal per experiment")
    columns = layout_columns(layout)
    col_index = {c: i for i, c in enumerate(columns)}
    rows, obs, kept = [], [], []
    for e, s in zip(experiments, signals):
        entries = _path_entries(layout.layers, e)
        corrected = e.sign * float(s)
        if corrected <= 0:
            warnings.warn(
                f"dropping experiment on {e.meas.to_text()} with nonpositive signal",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        row = np.zeros(len(columns))
        for col, inc in _spam_entries(layout, col_index, "S", entries[0]):
            row[col_index[col]] += inc
        for tag, a_k in zip(e.layers, entries[1:-1]):
            local = _restrict(a_k, layout.support_of(tag))
            if local.is_identity():
                continue
            row[col_index[("G", tag, local.key())]] += 1.0
        for col, inc in _spam_entries(layout, col_index, "M", entries[-1]):
            row[col_index[col]] += inc
        rows.append(row)
        obs.append(-np.log(corrected))
        kept.append(e)
    if not rows:
        raise ValueError("no usable experiments")
    return DesignSystem(
        layout, np.array(rows), np.array(obs), columns, tuple(kept)
    )


@dataclass(frozen=True)
class DesignSystem:
    """Linear system b = F x over the layout's log-fidelity parameters."""

    layout: GateSetLayout
    matrix: np.ndarray
    b: np.ndarray
    columns: tuple
    experiments: tuple = ()

    def __post_init__(self):
        if self.matrix.shape != (self.b.size, len(self.columns)):
            raise ValueError("design shape mismatch")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("observations must be finite")
        rounded = np.round(self.matrix)
        if np.any(self.matrix < 0) or np.max(np.abs(self.matrix - rounded)) > 1e-9:
            raise ValueError("design entries must be nonnegative integers")

    def to_triplet_text(self) -> str:
        lines = [f"design {self.matrix.shape[0]} {self.matrix.shape[1]}"]
        for j, col in enumerate(self.columns):
            lines.append(f"col {j} {column_label(col, self.layout.n)}")
        for i, j in zip(*np.nonzero(self.matrix)):
            lines.append(f"ent {i} {j} {int(round(self.matrix[i, j]))}")
        for i, v in enumerate(self.b):
            lines.append(f"obs {i} {v:.17g}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_triplet_text(text: str, layout: GateSetLayout) -> "DesignSystem":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0][0] != "design":
            raise ValueError("triplet text must start with a design line")
        n_rows, n_cols = int(lines[0][1]), int(lines[0][2])
        columns = [None] * n_cols
        matrix = np.zeros((n_rows, n_cols))
        b = np.zeros(n_rows)
        for parts in lines[1:]:
            if parts[0] == "col":
                columns[int(parts[1])] = parse_column_label(parts[2])
            elif parts[0] == "ent":
                matrix[int(parts[1]), int(parts[2])] = float(parts[3])
            elif parts[0] == "obs":
                b[int(parts[1])] = float(parts[2])
            else:
                raise ValueError(f"unrecognized triplet line {' '.join(parts)!r}")
        if any(c is None for c in columns):
            raise ValueError("triplet text is missing column labels")
        return DesignSystem(layout, matrix, b, tuple(columns))


def gauge_experiment_set(layout: GateSetLayout, depths=(0, 1, 2)):
    """Depth-0 SPAM probes plus per-tag repeated-layer probes.

    Enough rows to reach the maximal design rank: anything left in the
    null space is genuine gauge freedom.
    """
    out = []
    if 0 in depths:
        for mask in range(1, 1 << layout.n):
            p = PauliString(layout.n, 0, mask, 0)
            out.append(LearningExperiment(p, (), p, 1))
    for d in sorted(set(depths) - {0}):
        for tag in sorted(layout.layers):
            for p in _support_paulis(layout.n, layout.support_of(tag)):
                meas, sign = forward_image(layout, p, (tag,) * d)
                out.append(LearningExperiment(p, (tag,) * d, meas, sign))
    return out


def _solve_core(system: DesignSystem, eps: float):
    f, b = system.matrix, system.b
    x0 = np.linalg.lstsq(f, b, rcond=None)[0]
    residual = float(np.linalg.norm(f @ x0 - b))
    if residual > eps:
        raise ValueError(
            f"design residual {residual:.3e} exceeds the allowance {eps:.3e}; "
            "the model class cannot explain the data"
        )
    _, svals, vt = np.linalg.svd(f)
    tol = (svals[0] if svals.size else 0.0) * max(f.shape) * np.finfo(float).eps
    rank = int(np.sum(svals > tol))
    kernel = tuple(vt[rank:])
    return x0, residual, kernel


def _model_from_vector(
    system: DesignSystem, x: np.ndarray, kernel, provenance: dict
) -> GateSetNoiseModel:
    layout = system.layout
    col_index = {c: i for i, c in enumerate(system.columns)}
    fid = np.exp(-np.asarray(x, dtype=float))
    if layout.mode == "full":
        prep = {m: float(fid[col_index[("S", m)]]) for m in range(1, 1 << layout.n)}
        meas = {m: float(fid[col_index[("M", m)]]) for m in range(1, 1 << layout.n)}
    else:
        prep, meas = {}, {}
        for mask in range(1, 1 << layout.n):
            qs = [q for q in range(layout.n) if (mask >> q) & 1]
            prep[mask] = float(np.prod([fid[col_index[("S", q)]] for q in qs]))
            meas[mask] = float(np.prod([fid[col_index[("M", q)]] for q in qs]))
    layers = {}
    for tag in sorted(layout.layers):
        support = layout.support_of(tag)
        entries = []
        for p in _support_paulis(layout.n, support):
            entries.append((p, float(fid[col_index[("G", tag, p.key())]])))
        layers[tag] = LayerNoise(
            layout.layers[tag], PauliFidelities(layout.n, entries), support
        )
    return GateSetNoiseModel(
        n=layout.n,
        prep=prep,
        meas=meas,
        layers=layers,
        mode=layout.mode,
        columns=system.columns,
        kernel=tuple(np.array(v) for v in kernel),
        provenance=provenance,
    )


def solve_gateset(
    system: DesignSystem, eps: float, provenance=None
) -> GateSetNoiseModel:
    """Least-squares gate-set solve with the gauge exposed, not resolved.

    Returns the minimum-norm particular solution; the kernel basis on
    the model spans every data-equivalent representative.
    """
    x0, residual, kernel = _solve_core(system, eps)
    prov = {
        "gauge_mode": system.layout.mode,
        "residual": residual,
        "epsilon": float(eps),
        "rows": int(system.matrix.shape[0]),
        "gauge_dimension": len(kernel),
    }
    if provenance:
        prov.update(provenance)
    return _model_from_vector(system, x0, kernel, prov)


def symmetric_model(
    layout: GateSetLayout, pair_tables: dict, spam_products: dict, provenance=None
) -> GateSetNoiseModel:
    """Standard-benchmarking model: every pair and SPAM product split evenly.

    `pair_tables` maps layer tags to pair-fidelity tables, and
    `spam_products` maps support patterns to measured depth-0 products.
    This reproduces pair data but is blind to split asymmetries.
    """
    prep, meas = {}, {}
    for mask, prod in spam_products.items():
        if prod <= 0:
            raise ValueError("SPAM products must be positive")
        root = float(np.sqrt(prod))
        prep[int(mask)] = root
        meas[int(mask)] = root
    layers = {}
    for tag in sorted(layout.layers):
        table = pair_tables[tag]
        layers[tag] = LayerNoise(
            layout.layers[tag],
            PauliFidelities(layout.n, [(p, f) for p, f in table.items()]),
            layout.support_of(tag),
        )
    prov = {"gauge_mode": layout.mode, "symmetric": True}
    if provenance:
        prov.update(provenance)
    return GateSetNoiseModel(
        n=layout.n, prep=prep, meas=meas, layers=layers, mode=layout.mode,
        provenance=prov,
    )


def gauge_direction(layout: GateSetLayout, eta: GaugeParams) -> np.ndarray:
    """Log-fidelity shift of the gauge transform, over the layout columns.

    Prep picks up +eta, measurement -eta, and each layer the rate
    difference between a pattern and its conjugate image; by the
    telescoping of Pauli paths the design matrix annihilates it.
    """
    if eta.n != layout.n:
        raise ValueError("gauge parameter width mismatch")
    if eta.mode != layout.mode:
        raise ValueError("gauge mode must match the layout mode")
    columns = layout_columns(layout)
    y = np.zeros(len(columns))
    for i, col in enumerate(columns):
        if col[0] == "S":
            mask = col[1] if layout.mode == "full" else (1 << col[1])
            y[i] = eta.rate_of_pattern(mask)
        elif col[0] == "M":
            mask = col[1] if layout.mode == "full" else (1 << col[1])
            y[i] = -eta.rate_of_pattern(mask)
        else:
            _, tag, (z, x) = col
            p = PauliString(layout.n, x, z, 0)
            img = conjugate(layout.layers[tag], p)
            y[i] = eta.rate_of(img) - eta.rate_of(p)
    return y


def gauge_shift(model: GateSetNoiseModel, y, t: float = 1.0) -> GateSetNoiseModel:
    """Move the model along a log-fidelity direction: x -> x + t*y."""
    if not model.columns:
        raise ValueError("model carries no column layout")
    y = np.asarray(y, dtype=float)
    if y.size != len(model.columns):
        raise ValueError("direction length mismatch")
    factors = np.exp(-t * y)
    prep = dict(model.prep)
    meas = dict(model.meas)
    tables = {tag: dict() for tag in model.layers}
    for col, fac in zip(model.columns, factors):
        if col[0] == "S":
            if model.mode == "full":
                prep[col[1]] = prep[col[1]] * fac
            else:
                q = col[1]
                for mask in prep:
                    if (mask >> q) & 1:
                        prep[mask] *= fac
        elif col[0] == "M":
            if model.mode == "full":
                meas[col[1]] = meas[col[1]] * fac
            else:
                q = col[1]
                for mask in meas:
                    if (mask >> q) & 1:
                        meas[mask] *= fac
        else:
            tables[col[1]][col[2]] = fac
    layers = {}
    for tag, ln in model.layers.items():
        entries = [
            (p, f * tables[tag].get(p.key(), 1.0)) for p, f in ln.fidelities.items()
        ]
        layers[tag] = replace(ln, fidelities=PauliFidelities(model.n, entries))
    return replace(model, prep=prep, meas=meas, layers=layers)


# ---------------------------------------------------------------------------
# sampling overhead and gauge optimization


def _layer_rates(ln: LayerNoise):
    """SPL rates reproducing a layer's fidelity table exactly."""
    paulis = [p for p, _ in ln.fidelities.items()]
    f = np.array([v for _, v in ln.fidelities.items()])
    if np.any(f <= 0):
        raise ValueError("layer fidelities must be positive to extract rates")
    m = anticommutation_matrix(paulis).astype(float)
    x = -np.log(f)
    rates, *_ = np.linalg.lstsq(2.0 * m, x, rcond=None)
    if np.linalg.norm(2.0 * m @ rates - x) > 1e-8 * max(np.linalg.norm(x), 1.0):
        raise ValueError("layer fidelities are not SPL-expressible on their support")
    return paulis, rates


def overhead(model: GateSetNoiseModel) -> float:
    """Sampling overhead of inverting every gate layer, SPAM excluded."""
    total = 1.0
    for tag in sorted(model.layers):
        _, rates = _layer_rates(model.layers[tag])
        gamma = float(np.exp(np.sum(np.maximum(2.0 * rates, 0.0))))
        total *= gamma**2
    return total


def _rate_map(system: DesignSystem):
    """Linear map T with lambda = T x, stacked over every gate layer."""
    layout = system.layout
    col_index = {c: i for i, c in enumerate(system.columns)}
    blocks = []
    for tag in sorted(layout.layers):
        paulis = _support_paulis(layout.n, layout.support_of(tag))
        m = anticommutation_matrix(paulis).astype(float)
        m_inv = np.linalg.pinv(2.0 * m)
        if np.linalg.norm(2.0 * m @ m_inv - np.eye(len(paulis))) > 1e-8:
            raise ValueError(f"rate extraction is singular for layer {tag!r}")
        block = np.zeros((len(paulis), len(system.columns)))
        for j, p in enumerate(paulis):
            block[:, col_index[("G", tag, p.key())]] = m_inv[:, j]
        blocks.append(block)
    return np.vstack(blocks)


def _positive_part(t_map: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum(np.maximum(2.0 * (t_map @ x), 0.0)))


def _subgradient_descent(t_map, x0, kernel_t, steps=2000):
    c = np.zeros(kernel_t.shape[1])
    best_c, best_val = c.copy(), _positive_part(t_map, x0)
    tk = t_map @ kernel_t
    for step in range(1, steps + 1):
        lam = 2.0 * (t_map @ (x0 + kernel_t @ c))
        grad = 2.0 * tk.T @ (lam > 0).astype(float)
        norm = np.linalg.norm(grad)
        if norm < 1e-14:
            break
        c = c - 0.5 / (norm * np.sqrt(step)) * grad
        val = _positive_part(t_map, x0 + kernel_t @ c)
        if val < best_val:
            best_val, best_c = val, c.copy()
    return best_c


def gauge_optimize(
    system: DesignSystem, eps: float, provenance=None
) -> GateSetNoiseModel:
    """Pick the gauge representative with the smallest sampling overhead.

    The objective sum of max(2*lambda, 0) is piecewise linear along the
    gauge orbit, so it is solved as a linear program with slack
    variables; a projected subgradient pass covers solver failures.
    Within the orbit the residual never moves, so feasibility is just
    residual <= eps.
    """
    x0, residual, kernel = _solve_core(system, eps)
    prov = {
        "gauge_mode": system.layout.mode,
        "residual": residual,
        "epsilon": float(eps),
        "gauge_dimension": len(kernel),
        "gauge": "optimized",
    }
    if provenance:
        prov.update(provenance)
    if not kernel:
        return _model_from_vector(system, x0, kernel, prov)
    t_map = _rate_map(system)
    kernel_t = np.stack(kernel, axis=1)
    c_star = None
    try:
        from scipy.optimize import linprog

        n_c, n_s = kernel_t.shape[1], t_map.shape[0]
        cost = np.concatenate([np.zeros(n_c), np.ones(n_s)])
        a_ub = np.hstack([2.0 * t_map @ kernel_t, -np.eye(n_s)])
        b_ub = -2.0 * t_map @ x0
        res = linprog(
            cost,
            A_ub=a_ub,
            b_ub=b_ub,
            bounds=[(None, None)] * n_c + [(0, None)] * n_s,
            method="highs",
        )
        if res.status == 0:
            c_star = res.x[:n_c]
    except Exception:
        c_star = None
    if c_star is None:
        c_star = _subgradient_descent(t_map, x0, kernel_t)
    x_star = x0 + kernel_t @ c_star
    if _positive_part(t_map, x_star) > _positive_part(t_map, x0) + 1e-12:
        x_star = x0
    prov["objective"] = _positive_part(t_map, x_star)
    return _model_from_vector(system, x_star, kernel, prov)
