"""Splitting a qubit channel into two damping-like factors.

Every CPTP qubit channel is a convex combination of two channels that
need at most two Kraus operators each (Choi rank <= 2).  Such a factor,
after rotating input and output frames, takes the canonical form

    shift      t = (0, 0, sin(mu) sin(nu))
    distortion T = diag(cos(nu), cos(mu), cos(mu) cos(nu))

which generalizes amplitude damping and is exactly what one ancilla plus
one CNOT can realize.  This module extracts that canonical form and
computes the two-factor split.

The split is done on the Choi matrix: writing the source as
C = C^(1/2) M C^(1/2) + C^(1/2) (I - M) C^(1/2) with 0 <= M <= I makes
both parts automatically positive; the rank conditions pin the spectrum
of M (a rank-2 projector for a rank-4 source) and trace preservation of
each part reduces to three real equations, solved by a damped
Gauss-Newton iteration over a local subspace chart.  Decompositions are
not unique; the contract is the reconstruction residual and the factor
ranks, certified explicitly before returning.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from qchan.channels import (
    I2,
    SX,
    SY,
    SZ,
    AffineChannel,
    ChoiMatrix,
    KrausChannel,
    Unitary2,
    ValidationError,
    affine_to_choi,
    choi_to_affine,
    compose_affine,
    default_tol,
    mix_affine,
    validate_cptp,
)

__all__ = [
    "QuasiExtremeChannel",
    "ChannelDecomposition",
    "DecompositionError",
    "rotation_of",
    "unitary_from_rotation",
    "diagonalize_affine",
    "qe_affine",
    "qe_kraus",
    "decompose_channel",
]

RECONSTRUCTION_TOL = 1e-8
FACTOR_RANK_TOL = 1e-7

_SIGMA = np.stack([SX, SY, SZ])


class DecompositionError(RuntimeError):
    """The two-factor split failed to converge; carries the best residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (best residual {residual:.3g})")
        self.residual = residual


# ---------------------------------------------------------------------------
# Rotations and canonical factors
# ---------------------------------------------------------------------------


def rotation_of(u: Unitary2) -> np.ndarray:
    """SO(3) rotation R with R b . sigma = u (b . sigma) u^dag."""
    conj = np.einsum("ab,jbc,dc->jad", u.u, _SIGMA, u.u.conj())
    return 0.5 * np.einsum("iab,jba->ij", _SIGMA, conj).real


def unitary_from_rotation(r: np.ndarray) -> Unitary2:
    """One of the two SU(2) preimages of a rotation matrix."""
    x, y, z, w = Rotation.from_matrix(r).as_quat()
    return Unitary2(np.array([[w - 1j * z, -y - 1j * x], [y - 1j * x, w + 1j * z]]))


def diagonalize_affine(ch: AffineChannel):
    """Factor ch = R(post) . core . R(pre) with diagonal core distortion.

    Both rotation factors are proper (det +1); any reflection is folded
    into the core diagonal, which may then carry negative entries.  Returns
    (post, core, pre) as (Unitary2, AffineChannel, Unitary2).
    """
    u, s, vh = np.linalg.svd(ch.T)
    d = s.copy()
    if np.linalg.det(u) < 0:
        u = u.copy()
        u[:, 2] *= -1.0
        d[2] *= -1.0
    if np.linalg.det(vh) < 0:
        vh = vh.copy()
        vh[2, :] *= -1.0
        d[2] *= -1.0
    core = AffineChannel(u.T @ ch.t, np.diag(d))
    return unitary_from_rotation(u), core, unitary_from_rotation(vh)


def qe_affine(mu: float, nu: float) -> AffineChannel:
    """Canonical two-Kraus factor as an affine map."""
    return AffineChannel(
        [0.0, 0.0, np.sin(mu) * np.sin(nu)],
        np.diag([np.cos(nu), np.cos(mu), np.cos(mu) * np.cos(nu)]),
    )


def qe_kraus(mu: float, nu: float) -> KrausChannel:
    """Kraus pair of the canonical factor (generalized amplitude damping)."""
    alpha = (mu + nu) / 2.0
    beta = (mu - nu) / 2.0
    k0 = np.diag([np.cos(beta), np.cos(alpha)]).astype(complex)
    k1 = np.array([[0.0, np.sin(alpha)], [np.sin(beta), 0.0]], dtype=complex)
    return KrausChannel((k0, k1))


@dataclass(frozen=True)
class QuasiExtremeChannel:
    """Rank-<=2 channel: rotate by `pre`, damp with angles (mu, nu), rotate by `post`."""

    pre: Unitary2
    post: Unitary2
    mu: float
    nu: float

    def affine(self) -> AffineChannel:
        core = qe_affine(self.mu, self.nu)
        framed = compose_affine(
            AffineChannel(np.zeros(3), rotation_of(self.post)), core
        )
        return compose_affine(framed, AffineChannel(np.zeros(3), rotation_of(self.pre)))

    def kraus(self) -> KrausChannel:
        core = qe_kraus(self.mu, self.nu)
        return KrausChannel(tuple(self.post.u @ k @ self.pre.u for k in core.ops))


@dataclass(frozen=True)
class ChannelDecomposition:
    """Convex split p * first + (1 - p) * second of a source channel."""

    p: float
    first: QuasiExtremeChannel
    second: QuasiExtremeChannel

    def __post_init__(self):
        if not -1e-12 <= self.p <= 1.0 + 1e-12:
            raise ValidationError(f"probability {self.p} outside [0, 1]")
        object.__setattr__(self, "p", float(min(max(self.p, 0.0), 1.0)))

    def affine(self) -> AffineChannel:
        return mix_affine(self.p, self.first.affine(), self.second.affine())


# ---------------------------------------------------------------------------
# Damped Gauss-Newton on small residual systems
# ---------------------------------------------------------------------------


def _gauss_newton(fun, x0, target=5e-14, max_iter=60, fd_step=1e-7, clip=None):
    """Minimize |fun(x)| by Gauss-Newton with step halving.

    Underdetermined systems take the minimum-norm step.  Returns
    (best_x, best_norm).
    """
    x = np.asarray(x0, dtype=float).copy()
    if clip is not None:
        x = clip(x)
    f = fun(x)
    best_x, best_norm = x.copy(), float(np.linalg.norm(f))
    for _ in range(max_iter):
        norm0 = np.linalg.norm(f)
        if norm0 < target:
            break
        jac = np.empty((f.size, x.size))
        for k in range(x.size):
            xp = x.copy()
            xp[k] += fd_step
            jac[:, k] = (fun(xp) - f) / fd_step
        dx, *_ = np.linalg.lstsq(jac, -f, rcond=None)
        step = 1.0
        improved = False
        for _ in range(15):
            xn = x + step * dx
            if clip is not None:
                xn = clip(xn)
            fn = fun(xn)
            if np.linalg.norm(fn) < norm0:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        x, f = xn, fn
        if np.linalg.norm(f) < best_norm:
            best_x, best_norm = x.copy(), float(np.linalg.norm(f))
    return best_x, best_norm


# ---------------------------------------------------------------------------
# Canonical-form extraction for rank-<=2 channels
# ---------------------------------------------------------------------------

# Proper re-labelings of the diagonal frame: axis permutations combined with
# an even number of sign flips keep both rotation factors in SO(3).
_EVEN_FLIPS = ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1))


def _perm_sign(perm) -> float:
    sign = 1.0
    for i in range(3):
        for j in range(i + 1, 3):
            if perm[i] > perm[j]:
                sign = -sign
    return sign


def _frame_candidates(post: np.ndarray, d: np.ndarray, pre: np.ndarray, t: np.ndarray):
    """Yield (post', d', t', pre') over the 24 proper axis re-labelings."""
    for perm in itertools.permutations(range(3)):
        pmat = np.zeros((3, 3))
        for i in range(3):
            pmat[i, perm[i]] = 1.0
        s1 = np.array([_perm_sign(perm), 1.0, 1.0])
        for flips in _EVEN_FLIPS:
            s2 = np.array(flips) * s1
            g1 = s1[:, None] * pmat
            g2 = s2[:, None] * pmat
            new_post = post @ g1.T
            new_pre = g2 @ pre
            new_d = np.array(flips) * d[list(perm)]
            yield new_post, new_d, new_post.T @ t, new_pre


def _qe_pattern_score(d: np.ndarray, t: np.ndarray) -> float:
    """Deviation of a diagonal frame from the canonical factor pattern."""
    sin_sq = np.sqrt(max(0.0, 1.0 - d[0] ** 2) * max(0.0, 1.0 - d[1] ** 2))
    return max(
        abs(t[0]),
        abs(t[1]),
        abs(d[2] - d[0] * d[1]),
        abs(abs(t[2]) - sin_sq),
        max(0.0, abs(d[0]) - 1.0),
        max(0.0, abs(d[1]) - 1.0),
    )


def _affine_gap(a: AffineChannel, b: AffineChannel) -> float:
    return max(np.abs(a.t - b.t).max(), np.abs(a.T - b.T).max())


def _params_affine(x) -> tuple[np.ndarray, np.ndarray]:
    """(t, T) of the factor with parameters (rotvec_pre, mu, nu, rotvec_post)."""
    rpre = Rotation.from_rotvec(x[0:3]).as_matrix()
    rpost = Rotation.from_rotvec(x[5:8]).as_matrix()
    mu, nu = x[3], x[4]
    diag = np.array([np.cos(nu), np.cos(mu), np.cos(mu) * np.cos(nu)])
    t = rpost[:, 2] * (np.sin(mu) * np.sin(nu))
    return t, (rpost * diag) @ rpre


def _qe_from_params(x) -> QuasiExtremeChannel:
    pre = unitary_from_rotation(Rotation.from_rotvec(x[0:3]).as_matrix())
    post = unitary_from_rotation(Rotation.from_rotvec(x[5:8]).as_matrix())
    return QuasiExtremeChannel(pre, post, float(x[3]), float(x[4]))


def _extract_qe_params(aff: AffineChannel) -> np.ndarray:
    """Parameters (rotvec_pre, mu, nu, rotvec_post) fitting a rank-<=2 channel."""
    post_u, core, pre_u = diagonalize_affine(aff)
    d = np.diag(core.T).copy()
    post_r = rotation_of(post_u)
    pre_r = rotation_of(pre_u)

    # A unitary conjugation has d = (1,1,1); collapse it onto `post` so the
    # descriptor is the unitary itself with mu = nu = 0.
    if np.abs(d - 1.0).max() < 1e-9 and np.abs(aff.t).max() < 1e-9:
        return np.concatenate(
            [np.zeros(3), [0.0, 0.0], Rotation.from_matrix(aff.T).as_rotvec()]
        )

    best = None
    for new_post, new_d, new_t, new_pre in _frame_candidates(post_r, d, pre_r, aff.t):
        score = _qe_pattern_score(new_d, new_t)
        if best is None or score < best[0]:
            best = (score, new_post, new_d, new_t, new_pre)
    _, rpost, dd, tt, rpre = best
    nu = float(np.arccos(np.clip(dd[0], -1.0, 1.0)))
    mu = float(np.arccos(np.clip(dd[1], -1.0, 1.0)))
    if tt[2] < 0:
        nu = -nu
    x = np.concatenate(
        [
            Rotation.from_matrix(rpre).as_rotvec(),
            [mu, nu],
            Rotation.from_matrix(rpost).as_rotvec(),
        ]
    )

    def resid(params):
        t, big_t = _params_affine(params)
        return np.concatenate([t - aff.t, (big_t - aff.T).ravel()])

    if np.linalg.norm(resid(x)) > 1e-12:
        x, _ = _gauss_newton(resid, x, target=1e-13, max_iter=40)
    return x


def _extract_qe(aff: AffineChannel) -> QuasiExtremeChannel:
    return _qe_from_params(_extract_qe_params(aff))


# ---------------------------------------------------------------------------
# Two-factor split at the Choi level
# ---------------------------------------------------------------------------


def _tp_defect(b: np.ndarray, p: float) -> np.ndarray:
    """Residual of Tr_out(B B^dag) = p I / 2 as three real numbers.

    `b` holds columns whose outer-product sum is one Choi part; the index
    layout is (input x output, column).
    """
    br = b.reshape(2, 2, -1)
    marg = np.einsum("ioc,joc->ij", br, br.conj())
    return np.array(
        [
            marg[0, 0].real - 0.5 * p,
            marg[0, 1].real,
            marg[0, 1].imag,
        ]
    )


def _orthonormal(cols: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(cols)
    return q


def _split_starts_rank4(c, csqrt, vecs, rng):
    """Candidate rank-2 projectors M solving the balance equations."""
    starts = [vecs[:, [i, j]] for i, j in itertools.combinations(range(4), 2)]

    def attempt(q0raw):
        q0 = _orthonormal(np.asarray(q0raw, dtype=complex))
        anchor = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        full = _orthonormal(np.concatenate([q0, anchor], axis=1))
        q0c = full[:, 2:]

        def assemble(x):
            z = (x[0:4] + 1j * x[4:8]).reshape(2, 2)
            return _orthonormal(q0 + q0c @ z)

        def resid(x):
            q = assemble(x)
            b = csqrt @ q
            return _tp_defect(b, float(np.einsum("ic,ic->", b, b.conj()).real))

        x, err = _gauss_newton(resid, np.zeros(8), target=5e-14)
        q = assemble(x)
        return q @ q.conj().T, err

    for q0 in starts:
        yield attempt(q0)
    while True:
        yield attempt(rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2)))


def _split_starts_rank3(c, csqrt, vecs, rng):
    """Rank-3 source: M has spectrum (1, m, 0) inside the 3-d Choi range."""
    basis = vecs[:, 1:]  # eigenvalues ascending: drop the null direction
    eye = np.eye(3, 2)
    starts = [eye, np.roll(eye, 1, axis=0), np.roll(eye, 2, axis=0)]

    def clip(x):
        x = x.copy()
        x[12] = min(max(x[12], 0.0), 1.0)
        return x

    def attempt(g0):
        g0 = np.asarray(g0, dtype=complex)

        def assemble(x):
            q = _orthonormal(g0 + (x[0:6] + 1j * x[6:12]).reshape(3, 2))
            mid = q[:, :1] @ q[:, :1].conj().T
            mid = mid + x[12] * (q[:, 1:] @ q[:, 1:].conj().T)
            return basis @ mid @ basis.conj().T

        def resid(x):
            m = assemble(x)
            k = csqrt @ m @ csqrt
            p = float(np.trace(c @ m).real)
            kr = k.reshape(2, 2, 2, 2)
            marg = np.einsum("ibjb->ij", kr)
            return np.array(
                [marg[0, 0].real - 0.5 * p, marg[0, 1].real, marg[0, 1].imag]
            )

        x0 = np.concatenate([np.zeros(12), [0.5]])
        x, err = _gauss_newton(resid, x0, target=5e-14, clip=clip)
        return assemble(x), err

    for g0 in starts:
        yield attempt(g0)
    while True:
        yield attempt(rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2)))


def _psd_sqrt(c: np.ndarray):
    vals, vecs = np.linalg.eigh(c)
    clipped = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(clipped)) @ vecs.conj().T, vals, vecs


def decompose_channel(
    ch: AffineChannel, tol: float | None = None, seed: int = 0
) -> ChannelDecomposition:
    """Split a CPTP channel into two rank-<=2 factors.

    The returned mixture reproduces the input within RECONSTRUCTION_TOL
    entrywise and each factor has third/fourth Choi eigenvalues below
    FACTOR_RANK_TOL; both facts are certified before returning, and a
    `DecompositionError` carrying the best residual is raised otherwise.
    Deterministic for a fixed seed.
    """
    tol = default_tol() if tol is None else tol
    report = validate_cptp(ch, tol)
    if not report.valid:
        raise ValidationError("channel is not CP: " + report.summary())

    c = affine_to_choi(ch).c
    csqrt, vals, vecs = _psd_sqrt(c)
    rank = int(np.sum(vals > tol))

    if rank <= 2:
        qe = _extract_qe(ch)
        resid = _affine_gap(qe.affine(), ch)
        if resid > RECONSTRUCTION_TOL:
            raise DecompositionError("canonical-form fit did not converge", resid)
        return ChannelDecomposition(1.0, qe, qe)

    rng = np.random.default_rng(seed)
    gen = (
        _split_starts_rank4(c, csqrt, vecs, rng)
        if rank == 4
        else _split_starts_rank3(c, csqrt, vecs, rng)
    )

    best_resid = np.inf
    for m, err in itertools.islice(gen, 24):
        if err > 1e-12:
            best_resid = min(best_resid, err)
            continue
        p = float(np.trace(c @ m).real)
        if not 1e-9 < p < 1.0 - 1e-9:
            continue
        c1 = csqrt @ m @ csqrt / p
        c2 = csqrt @ (np.eye(4) - m) @ csqrt / (1.0 - p)
        try:
            qe1 = _extract_qe(choi_to_affine(ChoiMatrix(c1)))
            qe2 = _extract_qe(choi_to_affine(ChoiMatrix(c2)))
        except ValidationError:
            continue
        cand = ChannelDecomposition(p, qe1, qe2)
        resid = _affine_gap(cand.affine(), ch)
        if resid > RECONSTRUCTION_TOL / 100:
            cand = _refine_decomposition(cand, ch)
            resid = _affine_gap(cand.affine(), ch)
        if resid <= RECONSTRUCTION_TOL:
            return cand
        best_resid = min(best_resid, resid)
    raise DecompositionError("two-factor split did not converge", best_resid)


def _refine_decomposition(
    dec: ChannelDecomposition, target: AffineChannel
) -> ChannelDecomposition:
    """Polish (p, factor parameters) against the reconstruction residual."""

    def clip(x):
        x = x.copy()
        x[0] = min(max(x[0], 0.0), 1.0)
        return x

    def resid(x):
        p = x[0]
        t1, big1 = _params_affine(x[1:9])
        t2, big2 = _params_affine(x[9:17])
        return np.concatenate(
            [
                p * t1 + (1 - p) * t2 - target.t,
                (p * big1 + (1 - p) * big2 - target.T).ravel(),
            ]
        )

    x0 = np.concatenate(
        [
            [dec.p],
            _extract_qe_params(dec.first.affine()),
            _extract_qe_params(dec.second.affine()),
        ]
    )
    x, _ = _gauss_newton(resid, x0, target=1e-13, max_iter=50, clip=clip)
    return ChannelDecomposition(
        float(x[0]), _qe_from_params(x[1:9]), _qe_from_params(x[9:17])
    )
