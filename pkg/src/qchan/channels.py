"""Single-qubit states, channel representations, and error metrics.

A channel can be held as a list of Kraus operators, as an affine map on
Bloch vectors (shift vector ``t`` plus 3x3 distortion matrix ``T``), or as
a Choi matrix (trace normalized to 1).  Conversions between the three are
exact linear algebra.  Complete positivity is certified through the Choi
spectrum; trace preservation is structural in the affine form.

All value types are immutable after construction and every operation is a
pure function.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ValidationError",
    "DensityMatrix",
    "BlochVector",
    "KrausChannel",
    "AffineChannel",
    "ChoiMatrix",
    "Unitary2",
    "CptpReport",
    "default_tol",
    "kraus_apply",
    "kraus_to_affine",
    "kraus_to_choi",
    "affine_apply",
    "affine_to_choi",
    "choi_to_affine",
    "choi_to_kraus",
    "validate_cptp",
    "channel_distance",
    "unitary_distance",
    "compose_affine",
    "mix_affine",
    "identity_affine",
    "load_channel_spec",
    "channel_spec_to_dict",
    "as_affine",
]

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, SX, SY, SZ)


class ValidationError(ValueError):
    """An input failed a physicality or well-formedness check."""


def default_tol() -> float:
    """Default numerical tolerance; override via the QCHAN_TOL env var."""
    return float(os.environ.get("QCHAN_TOL", "1e-9"))


def _frozen_array(value, dtype, shape) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    if arr.shape != shape:
        raise ValidationError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityMatrix:
    """2x2 density matrix: Hermitian, unit trace, positive semidefinite."""

    m: np.ndarray

    def __post_init__(self):
        m = _frozen_array(self.m, complex, (2, 2))
        tol = default_tol()
        if np.abs(m - dagger(m)).max() > tol:
            raise ValidationError("density matrix not Hermitian")
        if abs(m.trace() - 1.0) > tol:
            raise ValidationError(f"density matrix trace {m.trace():.6g} != 1")
        if np.linalg.eigvalsh(m).min() < -tol:
            raise ValidationError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "m", m)

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        v = np.asarray(ket, dtype=complex).reshape(2)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def from_bloch(cls, b: "BlochVector") -> "DensityMatrix":
        x, y, z = b.b
        return cls(0.5 * (I2 + x * SX + y * SY + z * SZ))

    def bloch(self) -> "BlochVector":
        return BlochVector(
            [np.trace(s @ self.m).real for s in (SX, SY, SZ)]
        )


@dataclass(frozen=True)
class BlochVector:
    """Real 3-vector inside (or on) the unit ball."""

    b: np.ndarray

    def __post_init__(self):
        b = _frozen_array(self.b, float, (3,))
        if np.linalg.norm(b) > 1.0 + default_tol():
            raise ValidationError(f"Bloch vector has norm {np.linalg.norm(b):.6g} > 1")
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class KrausChannel:
    """Channel given by 2x2 Kraus operators with sum K_i^dag K_i = I.

    At most four operators are kept; longer lists are reduced through the
    Choi eigendecomposition (four operators always suffice for a qubit).
    """

    ops: tuple

    def __post_init__(self):
        ops = tuple(_frozen_array(k, complex, (2, 2)) for k in self.ops)
        if not ops:
            raise ValidationError("empty Kraus list")
        if len(ops) > 4:
            ops = _reduce_kraus(ops)
        total = sum(dagger(k) @ k for k in ops)
        if np.abs(total - I2).max() > default_tol():
            raise ValidationError("Kraus operators do not sum to identity (not TP)")
        object.__setattr__(self, "ops", ops)


@dataclass(frozen=True)
class AffineChannel:
    """Bloch-ball affine map b -> T b + t.

    Construction checks only shape and realness; physicality (complete
    positivity) is a separate question answered by `validate_cptp`, so
    non-CP maps such as the transpose can still be represented and
    diagnosed.
    """

    t: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen_array(self.t, float, (3,)))
        object.__setattr__(self, "T", _frozen_array(self.T, float, (3, 3)))


@dataclass(frozen=True)
class ChoiMatrix:
    """4x4 Choi matrix, trace normalized to 1.

    Index convention: first tensor factor is the retained input copy,
    second is the channel output, so trace preservation reads
    Tr_out(c) = I/2.
    """

    c: np.ndarray

    def __post_init__(self):
        c = _frozen_array(self.c, complex, (4, 4))
        if np.abs(c - dagger(c)).max() > 100 * default_tol():
            raise ValidationError("Choi matrix not Hermitian")
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class Unitary2:
    """2x2 unitary."""

    u: np.ndarray

    def __post_init__(self):
        u = _frozen_array(self.u, complex, (2, 2))
        if np.abs(dagger(u) @ u - I2).max() > 1e4 * default_tol():
            raise ValidationError("matrix is not unitary")
        object.__setattr__(self, "u", u)


# ---------------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------------


def kraus_apply(ch: KrausChannel, rho: DensityMatrix) -> DensityMatrix:
    """Apply the operator sum: rho -> sum_i K_i rho K_i^dag."""
    out = sum(k @ rho.m @ dagger(k) for k in ch.ops)
    return DensityMatrix(out)


def _pauli_components(m: np.ndarray):
    """Coefficients (m0, mx, my, mz) of m = (m0*I + m.sigma)/2 (complex)."""
    return np.array([np.trace(s @ m) for s in PAULIS])


def kraus_to_affine(ch: KrausChannel) -> AffineChannel:
    """Shift and distortion from T_ij = tr[sigma_i E(sigma_j)] / 2."""
    tmat = np.empty((4, 4))
    for j, sj in enumerate(PAULIS):
        out = sum(k @ sj @ dagger(k) for k in ch.ops)
        for i, si in enumerate(PAULIS):
            tmat[i, j] = 0.5 * np.trace(si @ out).real
    return AffineChannel(tmat[1:, 0], tmat[1:, 1:])


def _apply_affine_linear(ch: AffineChannel, m: np.ndarray) -> np.ndarray:
    """Linear extension of the affine map to arbitrary 2x2 matrices."""
    comps = _pauli_components(m)
    m0 = comps[0]
    out_vec = ch.T.astype(complex) @ comps[1:] + m0 * ch.t
    return 0.5 * (m0 * I2 + out_vec[0] * SX + out_vec[1] * SY + out_vec[2] * SZ)


def affine_apply(ch: AffineChannel, b: BlochVector) -> BlochVector:
    """b -> T b + t; diagnoses a CP violation if the image leaves the ball."""
    out = ch.T @ b.b + ch.t
    norm = np.linalg.norm(out)
    if norm > 1.0 + default_tol():
        raise ValidationError(
            f"output Bloch vector has norm {norm:.6g} > 1: channel is not CP"
        )
    return BlochVector(out)


def affine_to_choi(ch: AffineChannel) -> ChoiMatrix:
    """Choi matrix of the affine map (trace 1, input factor first)."""
    c = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            e_ij = np.zeros((2, 2), dtype=complex)
            e_ij[i, j] = 1.0
            c += 0.5 * np.kron(e_ij, _apply_affine_linear(ch, e_ij))
    return ChoiMatrix(c)


def kraus_to_choi(ch: KrausChannel) -> ChoiMatrix:
    """Choi matrix as sum of projectors onto vectorized Kraus operators."""
    c = np.zeros((4, 4), dtype=complex)
    for k in ch.ops:
        w = k.T.reshape(-1)
        c += 0.5 * np.outer(w, w.conj())
    return ChoiMatrix(c)


def choi_to_affine(ch: ChoiMatrix) -> AffineChannel:
    """Inverse of `affine_to_choi` (exact on trace-preserving inputs)."""
    c = ch.c.reshape(2, 2, 2, 2)  # [in, out, in', out']
    tmat = np.empty((4, 4))
    for j, sj in enumerate(PAULIS):
        # E(sigma_j) = 2 * Tr_in[ C (sigma_j^T x I) ]
        out = 2.0 * np.einsum("ab,aibj->ij", sj.T, c)
        for i, si in enumerate(PAULIS):
            tmat[i, j] = 0.5 * np.trace(si @ out).real
    return AffineChannel(tmat[1:, 0], tmat[1:, 1:])


def choi_to_kraus(ch: ChoiMatrix, tol: float | None = None) -> KrausChannel:
    """Eigen-decompose the Choi matrix into at most four Kraus operators."""
    tol = default_tol() if tol is None else tol
    vals, vecs = np.linalg.eigh(ch.c)
    ops = []
    for lam, v in zip(vals, vecs.T):
        if lam > tol:
            ops.append(np.sqrt(2.0 * lam) * v.reshape(2, 2).T)
    if not ops:
        raise ValidationError("Choi matrix has no positive eigenvalues")
    return KrausChannel(tuple(ops))


def _reduce_kraus(ops) -> tuple:
    c = np.zeros((4, 4), dtype=complex)
    for k in ops:
        w = k.T.reshape(-1)
        c += 0.5 * np.outer(w, w.conj())
    return choi_to_kraus(ChoiMatrix(c)).ops


def identity_affine() -> AffineChannel:
    return AffineChannel(np.zeros(3), np.eye(3))


def compose_affine(outer: AffineChannel, inner: AffineChannel) -> AffineChannel:
    """Map applying `inner` first, then `outer`."""
    return AffineChannel(outer.T @ inner.t + outer.t, outer.T @ inner.T)


def mix_affine(p: float, a: AffineChannel, b: AffineChannel) -> AffineChannel:
    """Convex combination p*a + (1-p)*b (affine maps mix entrywise)."""
    return AffineChannel(p * a.t + (1 - p) * b.t, p * a.T + (1 - p) * b.T)


# ---------------------------------------------------------------------------
# Validation and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CptpReport:
    """Result of the complete-positivity check on a channel."""

    valid: bool
    choi_eigenvalues: tuple
    violations: tuple
    tol: float

    def summary(self) -> str:
        if self.valid:
            return "CPTP: ok (min Choi eigenvalue %.3g)" % min(self.choi_eigenvalues)
        return "CPTP: violated, negative Choi eigenvalue(s) %s" % (
            ", ".join("%.6g" % v for v in self.violations)
        )


def validate_cptp(ch: AffineChannel, tol: float | None = None) -> CptpReport:
    """Check complete positivity via the Choi spectrum.

    Trace preservation is structural for `AffineChannel` (the 4x4 block
    form has first row (1, 0, 0, 0) by construction), so only positivity
    of the Choi matrix is examined.
    """
    tol = default_tol() if tol is None else tol
    vals = np.linalg.eigvalsh(affine_to_choi(ch).c)
    violations = tuple(float(v) for v in vals if v < -tol)
    return CptpReport(
        valid=not violations,
        choi_eigenvalues=tuple(float(v) for v in vals),
        violations=violations,
        tol=tol,
    )


def _sphere_points(n: int) -> np.ndarray:
    """Quasi-uniform points on the unit sphere (golden spiral)."""
    k = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / n)
    azim = np.pi * (1.0 + np.sqrt(5.0)) * k
    return np.stack(
        [np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)],
        axis=1,
    )


def _max_affine_norm(a: np.ndarray, b: np.ndarray, n_starts: int = 600) -> float:
    """Maximize |a v + b| over unit vectors v.

    The squared objective is convex, so its maximum over the sphere sits at
    an extreme point and the conditional-gradient iteration
    v <- normalize(a^T (a v + b)) increases it monotonically.  Dense
    multistart makes the ascent global in this 3-d problem.
    """
    starts = [_sphere_points(n_starts)]
    _, _, vt = np.linalg.svd(a)
    starts.append(vt)
    starts.append(-vt)
    for extra in (b, a.T @ b):
        nrm = np.linalg.norm(extra)
        if nrm > 0:
            starts.append(extra[None, :] / nrm)
            starts.append(-extra[None, :] / nrm)
    v = np.concatenate(starts, axis=0)
    for _ in range(300):
        g = (v @ a.T + b) @ a
        norms = np.linalg.norm(g, axis=1)
        mask = norms > 1e-300
        if not mask.any():
            break
        v = np.where(mask[:, None], g / np.maximum(norms, 1e-300)[:, None], v)
    best = np.sqrt((np.linalg.norm(v @ a.T + b, axis=1) ** 2).max())
    return float(best)


def channel_distance(a: AffineChannel, b: AffineChannel) -> float:
    """Worst-case trace-norm distance between two qubit channels.

    For qubit channels the output difference on a state with Bloch vector
    v is (dT v + dt).sigma / 2, whose trace norm is |dT v + dt|; the
    maximum over states is attained on pure states by convexity, giving
    max_{|v|=1} |dT v + dt|.
    """
    dt = a.t - b.t
    dT = a.T - b.T
    if np.abs(dt).max() == 0.0 and np.abs(dT).max() == 0.0:
        return 0.0
    return _max_affine_norm(dT, dt)


def unitary_distance(u: np.ndarray, v: np.ndarray, phase_mode: str = "strict") -> float:
    """Worst-case two-norm distance between unitaries.

    strict:     max over states of |(U - V)|psi>| = largest singular value
                of U - V.
    projective: minimum of the strict distance over a global phase applied
                to V; this is the natural metric when only the induced
                channel matters.
    """
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if u.shape != v.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if phase_mode == "strict":
        return float(np.linalg.norm(u - v, 2))
    if phase_mode != "projective":
        raise ValidationError(f"unknown phase_mode {phase_mode!r}")
    # Relative eigenphases of U^dag V; the optimal global phase centres the
    # smallest arc containing them at zero.
    phases = np.sort(np.angle(np.linalg.eigvals(dagger(u) @ v)))
    gaps = np.diff(np.concatenate([phases, [phases[0] + 2 * np.pi]]))
    half_arc = (2 * np.pi - gaps.max()) / 2.0
    return float(2.0 * np.sin(half_arc / 2.0))


# ---------------------------------------------------------------------------
# Channel spec files
# ---------------------------------------------------------------------------


def _complex_to_pairs(m: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def _pairs_to_complex(rows) -> np.ndarray:
    return np.array(
        [[complex(entry[0], entry[1]) for entry in row] for row in rows]
    )


def channel_spec_to_dict(ch: KrausChannel | AffineChannel) -> dict:
    """Serializable form: {"kraus": [...]} or {"affine": {"t":..., "T":...}}."""
    if isinstance(ch, KrausChannel):
        return {"kraus": [_complex_to_pairs(k) for k in ch.ops]}
    if isinstance(ch, AffineChannel):
        return {"affine": {"t": ch.t.tolist(), "T": ch.T.tolist()}}
    raise ValidationError(f"cannot serialize {type(ch).__name__} as a channel spec")


def load_channel_spec(source) -> KrausChannel | AffineChannel:
    """Parse a channel spec from a dict, JSON string, or file path.

    Exactly one of the "kraus" / "affine" forms must be present.
    """
    if isinstance(source, (str, Path)) and Path(source).exists():
        data = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        data = json.loads(source)
    else:
        data = source
    if not isinstance(data, dict):
        raise ValidationError("channel spec must be a JSON object")
    has_kraus = "kraus" in data
    has_affine = "affine" in data
    if has_kraus and has_affine:
        raise ValidationError("channel spec provides both 'kraus' and 'affine'")
    if has_kraus:
        return KrausChannel(tuple(_pairs_to_complex(k) for k in data["kraus"]))
    if has_affine:
        aff = data["affine"]
        return AffineChannel(np.asarray(aff["t"], float), np.asarray(aff["T"], float))
    raise ValidationError("channel spec provides neither 'kraus' nor 'affine'")


def as_affine(ch: KrausChannel | AffineChannel) -> AffineChannel:
    """Normalize either channel form to the affine representation."""
    if isinstance(ch, KrausChannel):
        return kraus_to_affine(ch)
    if isinstance(ch, AffineChannel):
        return ch
    raise ValidationError(f"not a channel: {type(ch).__name__}")
