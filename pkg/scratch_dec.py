import numpy as np, time
from qchan import channels as C
from qchan import decompose as D

def haar(n, rng):
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))

def random_kraus(rng, env=4):
    u = haar(2 * env, rng)
    ops = [np.array([[u[s2 * env + i, s1 * env + 0] for s1 in range(2)] for s2 in range(2)])
           for i in range(env)]
    return C.KrausChannel(tuple(ops))

rng = np.random.default_rng(7)

# 1. rank-2 extraction on random 2-Kraus channels
worst = 0.0
for k in range(200):
    ch = C.kraus_to_affine(random_kraus(rng, env=2))
    qe = D._extract_qe(ch)
    gap = D._affine_gap(qe.affine(), ch)
    worst = max(worst, gap)
print("rank2 extract worst gap:", worst)

# 2. full decompose on random rank-4 channels
t0 = time.time()
worst = 0.0; worst_rank = 0.0
n = 100
for k in range(n):
    ch = C.kraus_to_affine(random_kraus(rng, env=4))
    dec = D.decompose_channel(ch, seed=k)
    gap = D._affine_gap(dec.affine(), ch)
    worst = max(worst, gap)
    for f in (dec.first, dec.second):
        ev = np.sort(np.linalg.eigvalsh(C.affine_to_choi(f.affine()).c))
        worst_rank = max(worst_rank, abs(ev[0]), abs(ev[1]))
print(f"decompose {n}: worst recon {worst:.3g}, worst factor eig34 {worst_rank:.3g}, {(time.time()-t0)/n*1000:.1f} ms/ch")

# 3. special channels
ident = C.identity_affine()
dec = D.decompose_channel(ident)
print("identity: p=", dec.p, "mu,nu:", dec.first.mu, dec.first.nu)

depol = C.AffineChannel(np.zeros(3), np.zeros((3, 3)))
dec = D.decompose_channel(depol)
print("depolarizing recon:", D._affine_gap(dec.affine(), depol), "p:", dec.p)

# unitary channel
u = haar(2, rng)
aff_u = C.AffineChannel(np.zeros(3), D.rotation_of(C.Unitary2(u)))
dec = D.decompose_channel(aff_u)
print("unitary: p=", dec.p, "mu=", dec.first.mu, "pre=I?", np.abs(D.rotation_of(dec.first.pre) - np.eye(3)).max(),
      "post=U?", np.abs(D.rotation_of(dec.first.post) - D.rotation_of(C.Unitary2(u))).max())

# mixture of two same-frame qe channels
mix = C.mix_affine(0.3, D.qe_affine(0.7, 0.2), D.qe_affine(1.1, -0.4))
dec = D.decompose_channel(mix)
print("same-frame mix recon:", D._affine_gap(dec.affine(), mix))

# rank-3 example: mixture of unitary and qe? rank(choi): check
mix3 = C.mix_affine(0.5, D.qe_affine(0.9, 0.3), C.identity_affine())
ev = np.sort(np.linalg.eigvalsh(C.affine_to_choi(mix3).c))
print("mix3 choi eigs:", ev)
dec = D.decompose_channel(mix3)
print("rank3 recon:", D._affine_gap(dec.affine(), mix3))
