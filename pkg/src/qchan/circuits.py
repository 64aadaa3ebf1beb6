"""Two-qubit circuit programs and an exact density-matrix simulator.

Programs act on a `system` wire and one resettable `ancilla` wire and may
contain a mid-circuit ancilla measurement feeding a classically
controlled X.  The deterministic simulator keeps every measurement branch
(weighted by its probability) and sums them after tracing out the
ancilla, so it reproduces the compiled channel exactly; the shot
simulator samples branches and outcomes instead.

A factor with damping angles (mu, nu) compiles to the fixed skeleton

    U_pre(system) . Ry(ancilla) . CNOT . Ry(ancilla) . measure
    . X-if-1(system) . U_post(system)

with rotation angles beta - alpha + pi/2 and beta + alpha - pi/2 for
alpha = (mu + nu)/2, beta = (mu - nu)/2: ancilla outcome 0 realizes the
diagonal Kraus operator, outcome 1 the antidiagonal one (after the X
correction, which can be absorbed into U_post).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qchan.channels import (
    I2,
    SX,
    SY,
    SZ,
    AffineChannel,
    DensityMatrix,
    ValidationError,
)
from qchan.decompose import QuasiExtremeChannel

__all__ = [
    "Gate1Q",
    "Cnot",
    "MeasureAncilla",
    "ClassicallyControlledX",
    "ResetAncilla",
    "CircuitProgram",
    "BranchedProgram",
    "ShotRecord",
    "build_qe_circuit",
    "simulate_deterministic",
    "simulate_shot",
    "channel_of_program",
    "program_to_dict",
    "program_from_dict",
    "save_program",
    "load_program",
]

WIRES = ("system", "ancilla")

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)

KET0 = np.array([[1, 0], [0, 0]], dtype=complex)
KET1 = np.array([[0, 0], [0, 1]], dtype=complex)


def ry(angle: float) -> np.ndarray:
    """Rotation exp(-i Y angle / 2) about the y axis."""
    c, s = np.cos(angle / 2.0), np.sin(angle / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gate1Q:
    """Single-qubit gate on one wire.

    `condition` restricts the gate to measurement branches with that
    classical bit value; `merged_with_x` records that the matrix already
    contains the classically controlled X correction.
    """

    wire: str
    matrix: np.ndarray
    name: str = "u"
    angle: float | None = None
    condition: int | None = None
    merged_with_x: bool = False

    def __post_init__(self):
        if self.wire not in WIRES:
            raise ValidationError(f"unknown wire {self.wire!r}")
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValidationError("gate matrix must be 2x2")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class Cnot:
    """CNOT with the system as control and the ancilla as target."""


@dataclass(frozen=True)
class MeasureAncilla:
    """Computational-basis measurement of the ancilla into a classical bit."""


@dataclass(frozen=True)
class ClassicallyControlledX:
    """X on the system when the last measured bit is 1."""


@dataclass(frozen=True)
class ResetAncilla:
    """Discard the ancilla and reload |0>."""


Instruction = (Gate1Q, Cnot, MeasureAncilla, ClassicallyControlledX, ResetAncilla)


@dataclass(frozen=True)
class CircuitProgram:
    """Ordered instruction list over the {system, ancilla} wires."""

    instructions: tuple

    def __post_init__(self):
        instrs = tuple(self.instructions)
        measured = False
        for ins in instrs:
            if not isinstance(ins, Instruction):
                raise ValidationError(f"not an instruction: {ins!r}")
            if isinstance(ins, MeasureAncilla):
                measured = True
            if isinstance(ins, ClassicallyControlledX) and not measured:
                raise ValidationError("classically controlled X before any measurement")
            if isinstance(ins, Gate1Q) and ins.condition is not None and not measured:
                raise ValidationError("conditioned gate before any measurement")
            if isinstance(ins, ResetAncilla):
                measured = False
        object.__setattr__(self, "instructions", instrs)

    def cnot_count(self) -> int:
        return sum(isinstance(i, Cnot) for i in self.instructions)

    def gate1q_count(self) -> int:
        return sum(isinstance(i, Gate1Q) for i in self.instructions)


@dataclass(frozen=True)
class BranchedProgram:
    """Probabilistic choice: run branch1 with probability p, else branch2."""

    p: float
    branch1: CircuitProgram
    branch2: CircuitProgram

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"branch probability {self.p} outside [0, 1]")


@dataclass(frozen=True)
class ShotRecord:
    """Sampled choices of one shot: branch index (if any) and measured bits."""

    branch: int | None
    outcomes: tuple


# ---------------------------------------------------------------------------
# Building the factor circuit
# ---------------------------------------------------------------------------


def build_qe_circuit(qe: QuasiExtremeChannel) -> CircuitProgram:
    """Compile a rank-<=2 factor into the one-CNOT two-qubit skeleton."""
    alpha = (qe.mu + qe.nu) / 2.0
    beta = (qe.mu - qe.nu) / 2.0
    a1 = beta - alpha + np.pi / 2.0
    a2 = beta + alpha - np.pi / 2.0
    return CircuitProgram(
        (
            Gate1Q("system", qe.pre.u, name="u"),
            Gate1Q("ancilla", ry(a1), name="ry", angle=a1),
            Cnot(),
            Gate1Q("ancilla", ry(a2), name="ry", angle=a2),
            MeasureAncilla(),
            ClassicallyControlledX(),
            Gate1Q("system", qe.post.u, name="u"),
        )
    )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _lift(m: np.ndarray, wire: str) -> np.ndarray:
    return np.kron(m, I2) if wire == "system" else np.kron(I2, m)


_P0 = _lift(KET0, "ancilla")
_P1 = _lift(KET1, "ancilla")
_X_SYS = _lift(SX, "system")


def _trace_ancilla(rho4: np.ndarray) -> np.ndarray:
    return np.einsum("saza->sz", rho4.reshape(2, 2, 2, 2))


def _fuse(program: CircuitProgram) -> CircuitProgram:
    """Merge adjacent single-qubit gates on the same wire and condition.

    Exact rewriting; used to keep simulation of long synthesized gate
    sequences cheap.
    """
    out: list = []
    for ins in program.instructions:
        if (
            isinstance(ins, Gate1Q)
            and out
            and isinstance(out[-1], Gate1Q)
            and out[-1].wire == ins.wire
            and out[-1].condition == ins.condition
        ):
            prev = out.pop()
            out.append(
                Gate1Q(
                    ins.wire,
                    ins.matrix @ prev.matrix,
                    name="u",
                    condition=ins.condition,
                )
            )
        else:
            out.append(ins)
    return CircuitProgram(tuple(out))


def simulate_deterministic(prog, rho_in: DensityMatrix) -> DensityMatrix:
    """Exact channel output: all measurement branches retained and summed."""
    if isinstance(prog, BranchedProgram):
        out1 = simulate_deterministic(prog.branch1, rho_in).m
        out2 = simulate_deterministic(prog.branch2, rho_in).m
        return DensityMatrix(prog.p * out1 + (1.0 - prog.p) * out2)
    if not isinstance(prog, CircuitProgram):
        raise ValidationError(f"not a program: {prog!r}")

    # branches: (unnormalized joint state, measured bits)
    branches = [(np.kron(rho_in.m, KET0), ())]
    for ins in _fuse(prog).instructions:
        if isinstance(ins, Gate1Q):
            u = _lift(ins.matrix, ins.wire)
            branches = [
                (u @ r @ u.conj().T, bits)
                if ins.condition is None or (bits and bits[-1] == ins.condition)
                else (r, bits)
                for r, bits in branches
            ]
        elif isinstance(ins, Cnot):
            branches = [(CNOT @ r @ CNOT.conj().T, bits) for r, bits in branches]
        elif isinstance(ins, MeasureAncilla):
            branches = [
                piece
                for r, bits in branches
                for piece in (
                    (_P0 @ r @ _P0, bits + (0,)),
                    (_P1 @ r @ _P1, bits + (1,)),
                )
            ]
        elif isinstance(ins, ClassicallyControlledX):
            branches = [
                (_X_SYS @ r @ _X_SYS, bits) if bits and bits[-1] == 1 else (r, bits)
                for r, bits in branches
            ]
        elif isinstance(ins, ResetAncilla):
            branches = [
                (np.kron(_trace_ancilla(r), KET0), bits) for r, bits in branches
            ]
    out = sum(_trace_ancilla(r) for r, _ in branches)
    return DensityMatrix(out)


def simulate_shot(prog, rho_in: DensityMatrix, rng_seed: int | np.random.Generator = 0):
    """Sample one run: branch choice and measurement outcomes drawn randomly.

    Returns (DensityMatrix, ShotRecord).  Averaging many shots converges
    to `simulate_deterministic` at the usual 1/sqrt(N) rate.
    """
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    branch_idx = None
    if isinstance(prog, BranchedProgram):
        branch_idx = 0 if rng.random() < prog.p else 1
        prog = prog.branch1 if branch_idx == 0 else prog.branch2
    if not isinstance(prog, CircuitProgram):
        raise ValidationError(f"not a program: {prog!r}")

    rho = np.kron(rho_in.m, KET0)
    bits: tuple = ()
    for ins in prog.instructions:
        if isinstance(ins, Gate1Q):
            if ins.condition is None or (bits and bits[-1] == ins.condition):
                u = _lift(ins.matrix, ins.wire)
                rho = u @ rho @ u.conj().T
        elif isinstance(ins, Cnot):
            rho = CNOT @ rho @ CNOT.conj().T
        elif isinstance(ins, MeasureAncilla):
            p1 = float(np.trace(_P1 @ rho).real)
            outcome = 1 if rng.random() < p1 else 0
            proj = _P1 if outcome == 1 else _P0
            rho = proj @ rho @ proj
            rho = rho / np.trace(rho).real
            bits = bits + (outcome,)
        elif isinstance(ins, ClassicallyControlledX):
            if bits and bits[-1] == 1:
                rho = _X_SYS @ rho @ _X_SYS
        elif isinstance(ins, ResetAncilla):
            rho = np.kron(_trace_ancilla(rho), KET0)
    return DensityMatrix(_trace_ancilla(rho)), ShotRecord(branch_idx, bits)


def channel_of_program(prog) -> AffineChannel:
    """Reconstruct the affine map implemented by a program.

    Simulates the four inputs I/2 and (I + sigma_j)/2 and reads the shift
    and distortion off the Pauli expectations, exact to simulator
    precision.
    """
    basis_states = [
        DensityMatrix(0.5 * I2),
        DensityMatrix(0.5 * (I2 + SX)),
        DensityMatrix(0.5 * (I2 + SY)),
        DensityMatrix(0.5 * (I2 + SZ)),
    ]
    outs = [simulate_deterministic(prog, rho).m for rho in basis_states]
    t = np.array([np.trace(s @ outs[0]).real for s in (SX, SY, SZ)])
    big_t = np.empty((3, 3))
    for j in range(3):
        for i, s in enumerate((SX, SY, SZ)):
            big_t[i, j] = np.trace(s @ outs[j + 1]).real - t[i]
    return AffineChannel(t, big_t)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _matrix_to_pairs(m: np.ndarray) -> list:
    return [[float(x.real), float(x.imag)] for x in m.reshape(-1)]


def _pairs_to_matrix(pairs) -> np.ndarray:
    flat = np.array([complex(re, im) for re, im in pairs])
    return flat.reshape(2, 2)


def _instr_to_dict(ins, named_gates: dict | None) -> dict:
    if isinstance(ins, Cnot):
        return {"op": "cnot"}
    if isinstance(ins, MeasureAncilla):
        return {"op": "measure"}
    if isinstance(ins, ClassicallyControlledX):
        return {"op": "cx_classical"}
    if isinstance(ins, ResetAncilla):
        return {"op": "reset"}
    entry: dict = {"gate": ins.name, "wire": ins.wire}
    if named_gates is None or ins.name not in named_gates:
        entry["matrix"] = _matrix_to_pairs(ins.matrix)
    params = {}
    if ins.angle is not None:
        params["angle"] = float(ins.angle)
    if ins.condition is not None:
        params["condition"] = int(ins.condition)
    if ins.merged_with_x:
        params["merged_with_x"] = True
    if params:
        entry["params"] = params
    return entry


def _instr_from_dict(entry: dict, named_gates: dict) -> object:
    if "op" in entry:
        op = entry["op"]
        if op == "cnot":
            return Cnot()
        if op == "measure":
            return MeasureAncilla()
        if op == "cx_classical":
            return ClassicallyControlledX()
        if op == "reset":
            return ResetAncilla()
        raise ValidationError(f"unknown op {op!r}")
    name = entry["gate"]
    if "matrix" in entry:
        matrix = _pairs_to_matrix(entry["matrix"])
    elif name in named_gates:
        matrix = named_gates[name]
    else:
        raise ValidationError(f"gate {name!r} has no matrix and is not in the gate set")
    params = entry.get("params", {})
    return Gate1Q(
        entry["wire"],
        matrix,
        name=name,
        angle=params.get("angle"),
        condition=params.get("condition"),
        merged_with_x=params.get("merged_with_x", False),
    )


def program_to_dict(prog: BranchedProgram, meta: dict | None = None) -> dict:
    """JSON form {"p":..., "branch1": [...], "branch2": [...], "meta": {...}}.

    Gate matrices listed in meta["gate_set"] are stored once there and
    omitted from individual instructions.
    """
    meta = dict(meta or {})
    named = None
    if "gate_set" in meta:
        named = {
            name: _pairs_to_matrix(pairs) for name, pairs in meta["gate_set"].items()
        }
    data = {
        "p": float(prog.p),
        "branch1": [_instr_to_dict(i, named) for i in prog.branch1.instructions],
        "branch2": [_instr_to_dict(i, named) for i in prog.branch2.instructions],
    }
    if meta:
        data["meta"] = meta
    return data


def program_from_dict(data: dict) -> BranchedProgram:
    meta = data.get("meta", {})
    named = {
        name: _pairs_to_matrix(pairs)
        for name, pairs in meta.get("gate_set", {}).items()
    }
    return BranchedProgram(
        float(data["p"]),
        CircuitProgram(tuple(_instr_from_dict(e, named) for e in data["branch1"])),
        CircuitProgram(tuple(_instr_from_dict(e, named) for e in data["branch2"])),
    )


def save_program(prog: BranchedProgram, path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(program_to_dict(prog, meta), sort_keys=True))


def load_program(path) -> BranchedProgram:
    return program_from_dict(json.loads(Path(path).read_text()))
