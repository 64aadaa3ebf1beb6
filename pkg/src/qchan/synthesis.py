"""Gate-sequence synthesis of single-qubit unitaries over a finite gate set.

Up to a global phase, every 2x2 unitary is exp(-i theta . sigma) for a
coordinate theta in the closed ball of radius pi/2 (antipodal boundary
points identified).  A cubic lattice over that ball backs a lookup
database: breadth-first enumeration of reduced gate words claims each
lattice cell with the first word whose product lands in it, so a cell hit
guarantees coordinate distance at most side*sqrt(3), and operator
(projective) distance never exceeds coordinate distance.

On top of the database sits the recursive refinement: the residual
between the target and its current approximation is factored into a
balanced group commutator V W V^dag W^dag, the two small rotations are
synthesized at the previous level, and word length grows by at most 5x
per level while the error contracts like eps^(3/2).

All distances in this module are projective (global phase discarded);
synthesized objects are channels downstream, which cannot see the phase.
The scalar phase is still tracked in coordinates so products reassemble
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from qchan.channels import I2, SX, SY, SZ, Unitary2, unitary_distance

__all__ = [
    "SynthesisError",
    "RotationCoord",
    "GateSet",
    "GateWord",
    "LookupDatabase",
    "LookupResult",
    "standard_gate_set",
    "to_coord",
    "from_coord",
    "cell_index",
    "build_lookup_db",
    "ball_cells",
    "lookup",
    "gc_factor",
    "sk_decompose",
    "word_to_unitary",
    "reduce_word",
    "inverse_word",
    "save_db",
    "load_db",
    "audit_db",
    "PAPER_CELL_SIDE",
]

BALL_RADIUS = np.pi / 2.0
PAPER_CELL_SIDE = 1.0 / (32.0 * np.sqrt(3.0))


class SynthesisError(RuntimeError):
    """Synthesis could not proceed (empty database, unsupported gate set...)."""


def _as_matrix(u) -> np.ndarray:
    if isinstance(u, Unitary2):
        return u.u
    return np.asarray(u, dtype=complex)


# ---------------------------------------------------------------------------
# Rotation coordinates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RotationCoord:
    """Axis-angle coordinate theta (|theta| <= pi/2) plus the global phase."""

    theta: np.ndarray
    phase: float

    def __post_init__(self):
        th = np.array(self.theta, dtype=float)
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)


def to_coord(u) -> RotationCoord:
    """Coordinates with u = exp(i phase) exp(-i theta . sigma).

    Rotations by more than pi/2 are wrapped to the antipodal representative
    theta * (1 - pi/|theta|), which shifts the phase by pi, so the returned
    |theta| never exceeds pi/2.
    """
    m = _as_matrix(u)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    phase = 0.5 * np.arctan2(det.imag, det.real)
    s = m * np.exp(-1j * phase)
    a0 = 0.5 * (s[0, 0] + s[1, 1]).real
    avec = np.array(
        [
            0.5 * (1j * (s[0, 1] + s[1, 0])).real,
            0.5 * (s[1, 0] - s[0, 1]).real,
            0.5 * (1j * (s[0, 0] - s[1, 1])).real,
        ]
    )
    norm = np.linalg.norm(avec)
    angle = float(np.arctan2(norm, a0))  # in [0, pi]
    if norm < 1e-300:
        theta = np.zeros(3)
        if angle > BALL_RADIUS:  # s = -I
            phase += np.pi
            theta = np.zeros(3)
    else:
        theta = avec / norm * angle
        if angle > BALL_RADIUS + 1e-12:
            theta = theta * (1.0 - np.pi / angle)
            phase += np.pi
    phase = float(np.remainder(phase + np.pi, 2.0 * np.pi) - np.pi)
    return RotationCoord(theta, phase)


def from_coord(c: RotationCoord) -> Unitary2:
    """Inverse of `to_coord` up to the antipodal identification."""
    angle = np.linalg.norm(c.theta)
    if angle < 1e-300:
        return Unitary2(np.exp(1j * c.phase) * I2)
    axis = c.theta / angle
    gen = axis[0] * SX + axis[1] * SY + axis[2] * SZ
    su2 = np.cos(angle) * I2 - 1j * np.sin(angle) * gen
    return Unitary2(np.exp(1j * c.phase) * su2)


def cell_index(c: RotationCoord, side: float) -> tuple:
    """Integer lattice cell of a coordinate (floor per axis).

    A point on a cell face belongs to the cell whose lower face it sits
    on, which keeps the assignment deterministic.
    """
    if side <= 0:
        raise SynthesisError("cell side must be positive")
    return tuple(int(np.floor(x / side)) for x in c.theta)


# ---------------------------------------------------------------------------
# Gate sets and words
# ---------------------------------------------------------------------------

_KNOWN_GATES = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0),
    "T": np.diag([1.0, np.exp(1j * np.pi / 4.0)]).astype(complex),
    "S": np.diag([1.0, 1j]).astype(complex),
    "X": SX,
    "Y": SY,
    "Z": SZ,
}


def _phase_order(m: np.ndarray, cap: int = 16) -> int | None:
    """Smallest n >= 1 with m^n proportional to the identity, up to `cap`."""
    acc = m.copy()
    for n in range(1, cap + 1):
        off = abs(acc[0, 1]) + abs(acc[1, 0])
        if off < 1e-12 and abs(acc[0, 0] - acc[1, 1]) < 1e-12:
            return n
        acc = acc @ m
    return None


@dataclass(frozen=True)
class GateSet:
    """Named generators with their reduction orders.

    `orders[name]` is the smallest n with g^n proportional to the
    identity (None if no such n was found); it drives word reduction and
    lets inverses be emitted as g^(n-1).  Density of the generated group
    in SU(2) is assumed, not checked.
    """

    names: tuple
    matrices: tuple
    orders: dict = field(compare=False)

    @property
    def id(self) -> str:
        return ",".join(self.names)

    @classmethod
    def from_generators(cls, generators) -> "GateSet":
        names = tuple(name for name, _ in generators)
        mats = []
        for _, m in generators:
            arr = np.array(m, dtype=complex)
            arr.setflags(write=False)
            mats.append(arr)
        orders = {name: _phase_order(m) for name, m in zip(names, mats)}
        return cls(names, tuple(mats), orders)

    def matrix(self, name: str) -> np.ndarray:
        try:
            return self.matrices[self.names.index(name)]
        except ValueError:
            raise SynthesisError(f"unknown generator {name!r}") from None

    def supports_inverses(self) -> bool:
        return all(self.orders[n] is not None for n in self.names)


def standard_gate_set(spec: str = "H,T") -> GateSet:
    """Gate set from comma-separated names out of H, T, S, X, Y, Z."""
    gens = []
    for name in spec.split(","):
        name = name.strip().upper()
        if name not in _KNOWN_GATES:
            raise SynthesisError(f"unknown gate name {name!r}")
        gens.append((name, _KNOWN_GATES[name]))
    return GateSet.from_generators(gens)


@dataclass(frozen=True)
class GateWord:
    """Sequence of (generator name, inverted?) tokens; product is left to right."""

    tokens: tuple = ()

    def __len__(self) -> int:
        return len(self.tokens)

    def concat(self, other: "GateWord") -> "GateWord":
        return GateWord(self.tokens + other.tokens)

    def inverse(self) -> "GateWord":
        return GateWord(tuple((n, not inv) for n, inv in reversed(self.tokens)))

    def display(self) -> str:
        return ".".join(n + ("'" if inv else "") for n, inv in self.tokens) or "<empty>"


def word_to_unitary(gs: GateSet, word: GateWord) -> Unitary2:
    """Ordered product of the word's generators (empty word = identity)."""
    acc = I2
    for name, inv in word.tokens:
        m = gs.matrix(name)
        acc = acc @ (m.conj().T if inv else m)
    return Unitary2(acc)


def reduce_word(gs: GateSet, word: GateWord) -> GateWord:
    """Canonical reduction: merge runs and fold exponents modulo gate order.

    Folding g^n to a phase changes the product only by that phase, so
    reduced and unreduced words are projectively equal.  Exponents are
    normalized to (-order/2, order/2], which also rewrites long runs into
    shorter inverse runs (e.g. a run of six eighth-turns into two inverse
    ones).
    """
    stack: list[list] = []  # [name, signed exponent]
    for name, inv in word.tokens:
        step = -1 if inv else 1
        if stack and stack[-1][0] == name:
            stack[-1][1] += step
        else:
            stack.append([name, step])
        while stack:
            name_top, exp = stack[-1]
            order = gs.orders.get(name_top)
            if order:
                exp = exp % order
                if exp > order / 2:
                    exp -= order
            if exp == 0:
                stack.pop()
                if len(stack) >= 2 and stack[-1][0] == stack[-2][0]:
                    prev = stack.pop()
                    stack[-1][1] += prev[1]
                    continue
            else:
                stack[-1][1] = exp
            break
    tokens = []
    for name, exp in stack:
        tokens.extend([(name, exp < 0)] * abs(exp))
    return GateWord(tuple(tokens))


def inverse_word(gs: GateSet, word: GateWord) -> GateWord:
    """Exact inverse: reversed tokens with flipped inversion flags."""
    return reduce_word(gs, word.inverse())


def expand_inverses(gs: GateSet, word: GateWord) -> GateWord:
    """Rewrite inverse tokens as positive powers (g^-1 -> g^(order-1)).

    This is the emission form for hardware that only has the plain
    generators; it changes the product by a phase at most.
    """
    tokens = []
    for name, inv in word.tokens:
        if not inv:
            tokens.append((name, False))
            continue
        order = gs.orders.get(name)
        if order is None:
            raise SynthesisError(
                f"generator {name!r} has no finite order; cannot emit its inverse"
            )
        tokens.extend([(name, False)] * (order - 1))
    return GateWord(tuple(tokens))


# ---------------------------------------------------------------------------
# Lookup database
# ---------------------------------------------------------------------------


@dataclass
class LookupDatabase:
    """Map from lattice cell to the first enumerated word landing in it."""

    gate_set: GateSet
    cell_side: float
    max_len: int
    cells: dict  # (i, j, k) -> (GateWord, RotationCoord)
    total_ball_cells: int
    max_word_len: int

    @property
    def coverage(self) -> float:
        return len(self.cells) / self.total_ball_cells if self.total_ball_cells else 1.0


@dataclass(frozen=True)
class LookupResult:
    word: GateWord
    coord: RotationCoord
    fallback: bool


def ball_cells(side: float, radius: float = BALL_RADIUS) -> set:
    """All lattice cells whose closed cube intersects the closed ball."""
    kmax = int(np.floor(radius / side)) + 1
    idx = np.arange(-kmax - 1, kmax + 1)
    lo = idx * side
    hi = (idx + 1) * side
    # squared distance from the origin to the nearest point of [lo, hi]
    near = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
    ii, jj, kk = np.meshgrid(near, near, near, indexing="ij")
    mask = ii**2 + jj**2 + kk**2 <= radius**2 + 1e-15
    sel = np.argwhere(mask)
    return {(int(idx[a]), int(idx[b]), int(idx[c])) for a, b, c in sel}


def antipodal(c: RotationCoord) -> RotationCoord | None:
    """The second coordinate of the same unitary: theta * (1 - pi/|theta|).

    Its norm is pi - |theta| >= pi/2, so it lies outside the ball but can
    still sit inside a boundary cube, which is a legitimate lattice domain.
    Returns None for the identity.
    """
    norm = np.linalg.norm(c.theta)
    if norm < 1e-300:
        return None
    return RotationCoord(c.theta * (1.0 - np.pi / norm), float(
        np.remainder(c.phase + 2.0 * np.pi, 2.0 * np.pi) - np.pi
    ))


def build_lookup_db(
    gs: GateSet, side: float, max_len: int, verbose: bool = False
) -> LookupDatabase:
    """Breadth-first word enumeration claiming lattice cells first-come.

    Words are enumerated length-major / lexicographic-minor over the
    generator order, pruned by the run-length reduction rules and by a
    visited-coordinate hash that drops exact projective duplicates.  Each
    product claims the cell of its canonical coordinate and, near the
    boundary, also the cell of its antipodal coordinate when that cube
    intersects the ball.  The build stops at full coverage of
    ball-intersecting cells or at `max_len`; partial coverage is reported,
    not an error.
    """
    targets = ball_cells(side)
    cells: dict = {}
    quantum = 1e-9  # duplicate-pruning resolution, far below any cell side
    visited = set()
    max_claimed = 0

    def claim(tokens, matrix) -> bool:
        nonlocal max_claimed
        coord = to_coord(matrix)
        key = tuple(int(round(x / quantum)) for x in coord.theta)
        if key in visited:
            return False
        visited.add(key)
        for rep in (coord, antipodal(coord)):
            if rep is None:
                continue
            cell = cell_index(rep, side)
            if cell in targets and cell not in cells:
                cells[cell] = (GateWord(tokens), rep)
                max_claimed = max(max_claimed, len(tokens))
        return True

    claim((), I2)
    frontier = [((), I2)]
    for length in range(1, max_len + 1):
        if len(cells) >= len(targets):
            break
        new_frontier = []
        for tokens, matrix in frontier:
            for name in gs.names:
                order = gs.orders.get(name)
                run = 0
                for tok, _ in reversed(tokens):
                    if tok != name:
                        break
                    run += 1
                if order is not None and run + 1 >= order:
                    continue  # the extension would reduce
                new_tokens = tokens + ((name, False),)
                new_matrix = matrix @ gs.matrix(name)
                if claim(new_tokens, new_matrix):
                    new_frontier.append((new_tokens, new_matrix))
        frontier = new_frontier
        if verbose:
            print(
                f"len {length}: frontier {len(frontier)}, "
                f"coverage {len(cells)}/{len(targets)}"
            )
        if not frontier:
            break
    return LookupDatabase(
        gate_set=gs,
        cell_side=side,
        max_len=max_len,
        cells=cells,
        total_ball_cells=len(targets),
        max_word_len=max_claimed,
    )


def _shell(center: tuple, r: int):
    """Cells at Chebyshev distance exactly r from `center`."""
    cx, cy, cz = center
    if r == 0:
        yield center
        return
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                if max(abs(dx), abs(dy), abs(dz)) == r:
                    yield (cx + dx, cy + dy, cz + dz)


def lookup(db: LookupDatabase, u) -> LookupResult:
    """Word stored for the target's cell, else the nearest populated neighbor.

    Both coordinates of the target (canonical and antipodal) are tried; a
    hit in either cube guarantees coordinate distance at most side*sqrt(3)
    (the cube diagonal) in that chart, and projective operator distance
    never exceeds coordinate distance.  A neighbor-shell fallback is
    flagged in the result.
    """
    if not db.cells:
        raise SynthesisError("lookup database is empty")
    coord = to_coord(u)
    reps = [coord]
    anti = antipodal(coord)
    if anti is not None:
        reps.append(anti)
    for rep in reps:
        hit = db.cells.get(cell_index(rep, db.cell_side))
        if hit is not None:
            return LookupResult(hit[0], hit[1], False)
    cell = cell_index(coord, db.cell_side)
    max_r = int(np.ceil(np.pi / db.cell_side)) + 2
    for r in range(1, max_r + 1):
        found = []
        for neighbor in _shell(cell, r):
            entry = db.cells.get(neighbor)
            if entry is not None:
                found.append(entry)
        if found:
            word, coord_stored = min(
                found, key=lambda e: np.linalg.norm(e[1].theta - coord.theta)
            )
            return LookupResult(word, coord_stored, True)
    raise SynthesisError("no populated cell found in the database")


# ---------------------------------------------------------------------------
# Group commutator and the recursive synthesis
# ---------------------------------------------------------------------------


def _su2_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    gen = axis[0] * SX + axis[1] * SY + axis[2] * SZ
    return np.cos(angle / 2.0) * I2 - 1j * np.sin(angle / 2.0) * gen


def _commutator_angle(phi: float) -> float:
    rx = _su2_rotation(np.array([1.0, 0, 0]), phi)
    ryy = _su2_rotation(np.array([0, 1.0, 0]), phi)
    comm = rx @ ryy @ rx.conj().T @ ryy.conj().T
    return 2.0 * float(np.linalg.norm(to_coord(comm).theta))


def gc_factor(delta) -> tuple:
    """Balanced group-commutator factors: V W V^dag W^dag = delta (up to phase).

    V and W are equal-angle rotations about conjugated x/y axes; the
    common angle solves the commutator-angle equation and scales like the
    square root of delta's distance to the identity, which is what makes
    each refinement level contract.
    """
    dmat = _as_matrix(delta)
    if unitary_distance(dmat, I2, "projective") >= 1.0:
        raise SynthesisError("group commutator requires delta close to the identity")
    coord = to_coord(dmat)
    angle = np.linalg.norm(coord.theta)
    if angle < 1e-300:
        return Unitary2(I2), Unitary2(I2)
    target = 2.0 * angle  # rotation angle of delta

    phi_peak = 2.0 * np.arcsin(2.0 ** (-0.25))  # commutator angle peaks here
    phi = brentq(lambda f: _commutator_angle(f) - target, 0.0, phi_peak, xtol=1e-15)

    rx = _su2_rotation(np.array([1.0, 0, 0]), phi)
    ryy = _su2_rotation(np.array([0, 1.0, 0]), phi)
    comm = rx @ ryy @ rx.conj().T @ ryy.conj().T
    m_axis = to_coord(comm).theta
    m_axis = m_axis / np.linalg.norm(m_axis)
    n_axis = coord.theta / angle

    cross = np.cross(m_axis, n_axis)
    dot = float(np.dot(m_axis, n_axis))
    sin_norm = np.linalg.norm(cross)
    if sin_norm < 1e-14:
        if dot > 0:
            s = I2
        else:
            perp = np.cross(m_axis, [1.0, 0, 0])
            if np.linalg.norm(perp) < 1e-8:
                perp = np.cross(m_axis, [0, 1.0, 0])
            s = _su2_rotation(perp / np.linalg.norm(perp), np.pi)
    else:
        s = _su2_rotation(cross / sin_norm, float(np.arctan2(sin_norm, dot)))
    v = s @ rx @ s.conj().T
    w = s @ ryy @ s.conj().T
    return Unitary2(v), Unitary2(w)


def sk_decompose(u, depth: int, db: LookupDatabase) -> GateWord:
    """Recursive synthesis: depth 0 is the database lookup; each further
    level multiplies the residual away through a balanced group commutator
    synthesized at the previous level.

    Word length grows by at most 5x per level.  Inverse tokens are exact
    word reversals; emitting them needs a gate set whose generators have
    finite order (or hardware inverses), checked here for depth >= 1.
    """
    if depth < 0:
        raise SynthesisError("depth must be >= 0")
    gs = db.gate_set
    if depth == 0:
        return lookup(db, u).word
    if not gs.supports_inverses():
        raise SynthesisError(
            f"gate set {gs.id!r} has generators without finite order; "
            "inverse words cannot be realized"
        )
    w_prev = sk_decompose(u, depth - 1, db)
    u_prev = word_to_unitary(gs, w_prev).u
    delta = _as_matrix(u) @ u_prev.conj().T
    v, w = gc_factor(delta)
    wv = sk_decompose(v, depth - 1, db)
    ww = sk_decompose(w, depth - 1, db)
    tokens = (
        wv.tokens
        + ww.tokens
        + inverse_word(gs, wv).tokens
        + inverse_word(gs, ww).tokens
        + w_prev.tokens
    )
    return reduce_word(gs, GateWord(tokens))


# ---------------------------------------------------------------------------
# Database file format
# ---------------------------------------------------------------------------

DB_FORMAT_VERSION = 1


def save_db(db: LookupDatabase, path) -> None:
    """Versioned JSON: header plus (i, j, k, generator-index word) entries."""
    name_to_idx = {n: i for i, n in enumerate(db.gate_set.names)}
    entries = []
    for (i, j, k), (word, _) in sorted(db.cells.items()):
        entries.append([i, j, k, [name_to_idx[n] for n, _ in word.tokens]])
    data = {
        "version": DB_FORMAT_VERSION,
        "gate_set_id": db.gate_set.id,
        "generators": [
            [n, [[float(x.real), float(x.imag)] for x in m.reshape(-1)]]
            for n, m in zip(db.gate_set.names, db.gate_set.matrices)
        ],
        "cell_side": db.cell_side,
        "max_len": db.max_len,
        "max_word_len": db.max_word_len,
        "total_ball_cells": db.total_ball_cells,
        "entries": entries,
    }
    Path(path).write_text(json.dumps(data, sort_keys=True))


def load_db(path) -> LookupDatabase:
    data = json.loads(Path(path).read_text())
    if data.get("version") != DB_FORMAT_VERSION:
        raise SynthesisError(f"unsupported database version {data.get('version')!r}")
    gens = []
    for name, pairs in data["generators"]:
        flat = np.array([complex(re, im) for re, im in pairs])
        gens.append((name, flat.reshape(2, 2)))
    gs = GateSet.from_generators(gens)
    cells = {}
    max_word = 0
    for i, j, k, idxs in data["entries"]:
        word = GateWord(tuple((gs.names[ix], False) for ix in idxs))
        coord = to_coord(word_to_unitary(gs, word))
        rep = coord
        if cell_index(coord, float(data["cell_side"])) != (i, j, k):
            anti = antipodal(coord)
            if anti is not None:
                rep = anti
        cells[(i, j, k)] = (word, rep)
        max_word = max(max_word, len(word))
    return LookupDatabase(
        gate_set=gs,
        cell_side=float(data["cell_side"]),
        max_len=int(data["max_len"]),
        cells=cells,
        total_ball_cells=int(data["total_ball_cells"]),
        max_word_len=max_word,
    )


def audit_db(db: LookupDatabase) -> dict:
    """Re-verify soundness (every word sits in its cell) and coverage.

    A stored word is sound when one of its two coordinates (canonical or
    antipodal) lies in the keyed cell and matches the stored coordinate.
    """
    bad = []
    for cell, (word, coord) in db.cells.items():
        recomputed = to_coord(word_to_unitary(db.gate_set, word))
        reps = [recomputed]
        anti = antipodal(recomputed)
        if anti is not None:
            reps.append(anti)
        hits = [r for r in reps if cell_index(r, db.cell_side) == cell]
        if not hits:
            bad.append(cell)
        elif min(np.linalg.norm(r.theta - coord.theta) for r in hits) > 1e-9:
            bad.append(cell)
    targets = ball_cells(db.cell_side)
    missing = sorted(targets - set(db.cells))
    return {
        "sound": not bad,
        "bad_cells": bad,
        "coverage": len(set(db.cells) & targets) / len(targets),
        "missing_cells": missing,
        "populated": len(db.cells),
        "total_ball_cells": len(targets),
        "max_word_len": db.max_word_len,
    }
