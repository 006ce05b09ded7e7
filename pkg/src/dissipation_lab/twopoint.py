"""Finite-dimensional two-point machinery for transport-noise generators.

Generators are anti-Hermitian matrices A_k = i L_k.  The two-point operator on
Hermitian matrices is

    M  ->  -1/2 sum_k [L_k, [L_k, M]]

and its kernel is the joint commutant of the L_k.  Eigenspaces of a generic
kernel element are the common invariant subspaces of the family.

For truncations too large for the d^2 x d^2 superoperator, the commutant is
read off from a generic element of the algebra generated by the L_k instead
(:func:`algebra_decomposition`).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .profiles import ProfileFamily, ShearProfile

log = logging.getLogger(__name__)

NULL_TOL = 1e-9
GAP_RATIO = 10.0


class GeneratorError(ValueError):
    pass


class RankDecisionError(RuntimeError):
    pass


@dataclass
class GeneratorFamily:
    """Anti-Hermitian d x d matrices A_k; the Hermitian generators are L_k = -i A_k."""

    matrices: list[np.ndarray]
    modes: np.ndarray | None = None  # per basis vector wavevector, for H^1 weights
    provenance: dict = field(default_factory=dict)
    correction_norm: float = 0.0

    def __post_init__(self):
        if not self.matrices:
            raise GeneratorError("empty generator family")
        self.matrices = [np.asarray(A, dtype=complex) for A in self.matrices]
        d = self.matrices[0].shape[0]
        for A in self.matrices:
            if A.shape != (d, d):
                raise GeneratorError("generators must be square with a common dimension")
            scale = max(np.abs(A).max(), 1.0)
            if np.abs(A + A.conj().T).max() > 1e-12 * scale:
                raise GeneratorError("generator is not anti-Hermitian")

    @property
    def d(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def hermitian(self) -> list[np.ndarray]:
        return [-1j * A for A in self.matrices]

    def h1_weights(self) -> np.ndarray:
        """|k|^2 per basis vector; zeros if no mode labels are attached."""
        if self.modes is None:
            return np.zeros(self.d)
        k = np.asarray(self.modes, dtype=float).reshape(self.d, -1)
        return np.sum(k ** 2, axis=1)

    def restricted(self, Q: np.ndarray) -> "GeneratorFamily":
        """Compression Q^dag A Q onto the range of an orthonormal Q."""
        mats = [Q.conj().T @ A @ Q for A in self.matrices]
        mats = [(A - A.conj().T) / 2 for A in mats]
        return GeneratorFamily(mats, provenance={"restricted_from": self.d})

    @classmethod
    def from_json(cls, spec: dict) -> "GeneratorFamily":
        kind = spec.get("type", "matrices")
        if kind == "matrices":
            mats = [np.asarray(m["re"]) + 1j * np.asarray(m.get("im", np.zeros_like(m["re"])))
                    for m in spec["matrices"]]
            return cls(mats, provenance={"type": "matrices"})
        if kind == "shear":
            fam = ProfileFamily.from_config(spec["profiles"])
            return galerkin_shear(fam, int(spec["ell"]), int(spec["K"]))
        if kind == "2d":
            fields = [TrigVectorField.from_json(f) for f in spec["fields"]]
            return galerkin_2d(fields, int(spec["K"]))
        raise GeneratorError(f"unknown family type {kind!r}")


# ------------------------------------------------------------- Hermitian basis

def hermitian_basis(d: int) -> np.ndarray:
    """Columns are row-major vec of an HS-orthonormal basis of d x d Hermitian matrices."""
    cols = []
    s = 1.0 / math.sqrt(2.0)
    for i in range(d):
        E = np.zeros((d, d), complex)
        E[i, i] = 1.0
        cols.append(E.ravel())
    for i in range(d):
        for j in range(i + 1, d):
            E = np.zeros((d, d), complex)
            E[i, j] = E[j, i] = s
            cols.append(E.ravel())
            F = np.zeros((d, d), complex)
            F[i, j] = -1j * s
            F[j, i] = 1j * s
            cols.append(F.ravel())
    return np.array(cols).T


def _ad(L: np.ndarray) -> np.ndarray:
    """Matrix of M -> [L, M] on row-major vec(M)."""
    I = np.eye(L.shape[0])
    return np.kron(L, I) - np.kron(I, L.T)


def build_superoperator(family: GeneratorFamily) -> np.ndarray:
    """Real symmetric d^2 x d^2 matrix of M -> -1/2 sum_k [L_k,[L_k,M]] on Hermitian M."""
    B = hermitian_basis(family.d)
    S = np.zeros((family.d ** 2,) * 2, complex)
    for L in family.hermitian:
        ad = _ad(L)
        S -= 0.5 * ad @ ad
    R = B.conj().T @ S @ B
    if np.abs(R.imag).max() > 1e-9 * max(np.abs(R).max(), 1.0):
        raise ArithmeticError("superoperator is not real in the Hermitian basis")
    R = R.real
    return (R + R.T) / 2


def apply_superoperator(family: GeneratorFamily, M: np.ndarray) -> np.ndarray:
    out = np.zeros_like(M, dtype=complex)
    for L in family.hermitian:
        C = L @ M - M @ L
        out -= 0.5 * (L @ C - C @ L)
    return out


def _null_space(sv: np.ndarray, tol: float, scale: float = 0.0) -> int:
    """Number of singular values treated as zero, with the gap-ratio check.

    `scale` is a natural size of the operator; values below tol * scale count as
    zero even when every singular value is roundoff (e.g. scalar generators).
    """
    sv = np.sort(np.abs(sv))[::-1]
    smax = max(sv[0] if sv.size else 0.0, scale)
    if smax == 0.0:
        return sv.size
    zero = sv < tol * smax
    r = int(np.count_nonzero(zero))
    if 0 < r < sv.size:
        kept, dropped = sv[sv.size - r - 1], sv[sv.size - r]
        if dropped > 0 and kept / dropped < GAP_RATIO:
            raise RankDecisionError(
                f"ambiguous rank: singular value gap {kept:.3e}/{dropped:.3e} < {GAP_RATIO}; "
                "override tol_null")
    elif r == 0:
        # the smallest kept value must also be clearly separated from the threshold
        pass
    return r


@dataclass
class KernelBasis:
    matrices: list[np.ndarray]
    coords: np.ndarray  # real coordinates in hermitian_basis, one column per element
    tol_null: float
    commutator_max: float = 0.0
    oracle_max_angle: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.matrices)

    def nontrivial_dim(self) -> int:
        """Kernel dimension beyond multiples of the identity."""
        d = self.matrices[0].shape[0] if self.matrices else 0
        if d == 0:
            return 0
        eye = np.eye(d).ravel() / math.sqrt(d)
        V = np.array([M.ravel() for M in self.matrices]).T
        overlap = np.linalg.norm(V.conj().T @ eye)
        return self.dim - (1 if overlap > 0.5 else 0)


def _coords_to_matrices(B: np.ndarray, coords: np.ndarray, d: int) -> list[np.ndarray]:
    mats = []
    for c in coords.T:
        M = (B @ c).reshape(d, d)
        mats.append((M + M.conj().T) / 2)
    return mats


def commutant_oracle(family: GeneratorFamily, tol_null: float = NULL_TOL) -> np.ndarray:
    """Real coordinates (in hermitian_basis) of all Hermitian M with [L_k, M] = 0 for every k."""
    d = family.d
    B = hermitian_basis(d)
    blocks = []
    for L in family.hermitian:
        C = _ad(L) @ B
        blocks += [C.real, C.imag]
    J = np.vstack(blocks)
    _, s, Vt = np.linalg.svd(J, full_matrices=True)
    sv = np.zeros(d * d)
    sv[: s.size] = s
    scale = max((np.linalg.norm(L, 2) for L in family.hermitian), default=0.0)
    r = _null_space(sv, tol_null, scale)
    return Vt[d * d - r:].T if r else np.zeros((d * d, 0))


def kernel_basis(family: GeneratorFamily, tol_null: float = NULL_TOL,
                 verify: bool = True, max_dense: int = 48) -> KernelBasis:
    """Orthonormal basis of the two-point kernel, checked against the commutant oracle."""
    d = family.d
    if d > max_dense:
        raise ValueError(f"d={d} too large for the dense superoperator; "
                         "use algebra_decomposition")
    B = hermitian_basis(d)
    w, U = np.linalg.eigh(build_superoperator(family))
    order = np.argsort(np.abs(w))
    w, U = w[order], U[:, order]
    scale = sum(np.linalg.norm(L, 2) ** 2 for L in family.hermitian)
    r = _null_space(w, tol_null, scale)
    coords = U[:, :r]
    mats = _coords_to_matrices(B, coords, d)
    comm = max((np.abs(L @ M - M @ L).max() for L in family.hermitian for M in mats), default=0.0)
    angle = 0.0
    if verify:
        oracle = commutant_oracle(family, tol_null)
        if oracle.shape[1] != r:
            raise ArithmeticError(f"kernel dimension {r} disagrees with commutant oracle "
                                  f"dimension {oracle.shape[1]}")
        if r:
            angle = float(np.max(sla.subspace_angles(coords, oracle)))
    return KernelBasis(mats, coords, tol_null, float(comm), angle)


# ----------------------------------------------------- invariant subspaces

@dataclass
class InvariantDecomposition:
    projections: list[np.ndarray]
    gammas: list[float]
    degenerate: bool = False
    invariance_max: float = 0.0

    @property
    def dims(self) -> list[int]:
        return [int(round(np.trace(P).real)) for P in self.projections]


def _group_eigenvalues(w: np.ndarray, rel: float, spread: float | None = None) -> list[np.ndarray]:
    """Split sorted eigenvalues wherever consecutive gaps exceed rel * spread."""
    if spread is None:
        spread = w[-1] - w[0] if w.size else 0.0
    scale = max(abs(w[0]), abs(w[-1]), 1e-300) if w.size else 1.0
    if spread <= 1e-12 * scale:
        return [np.arange(w.size)]
    groups = [[0]]
    for a in range(1, w.size):
        if w[a] - w[groups[-1][-1]] <= rel * spread:
            groups[-1].append(a)
        else:
            groups.append([a])
    return [np.array(g) for g in groups]


def _leakage(family: GeneratorFamily, P: np.ndarray) -> float:
    I = np.eye(P.shape[0])
    return max(np.linalg.norm((I - P) @ A @ P, 2) for A in family.matrices)


def invariant_subspaces(basis: KernelBasis, family: GeneratorFamily, seed: int = 0,
                        merge_rel: float = 1e-6, tol_inv: float | None = None,
                        draws: int = 5, isotypic: bool = True) -> InvariantDecomposition:
    """Eigenspaces of a generic kernel element, verified invariant under every generator.

    With `isotypic` (the default) eigenspaces linked by some kernel element are
    merged, so equivalent copies of one irreducible block come back as a single
    projection; otherwise each eigenspace is returned as a minimal subspace.
    """
    if basis.dim == 0:
        raise ValueError("empty kernel basis")
    scale = max(max(np.linalg.norm(A, 2) for A in family.matrices), 1.0)
    tol_inv = 1e-8 * scale if tol_inv is None else tol_inv
    rng = np.random.default_rng(seed)
    candidates = []
    for _ in range(draws):
        c = rng.standard_normal(basis.dim)
        M = sum(ci * Mi for ci, Mi in zip(c, basis.matrices))
        w, V = np.linalg.eigh(M)
        groups = _group_eigenvalues(w, merge_rel)
        if isotypic and len(groups) > 1:
            n = len(groups)
            link = np.zeros((n, n), bool)
            for Mi in basis.matrices:
                C = V.conj().T @ Mi @ V
                cut = 1e-6 * max(np.abs(C).max(), 1e-300)
                for a in range(n):
                    for b in range(a + 1, n):
                        if np.abs(C[np.ix_(groups[a], groups[b])]).max() > cut:
                            link[a, b] = True
            _, lab = csgraph.connected_components(sp.csr_matrix(link), directed=False)
            groups = [np.concatenate([groups[a] for a in range(n) if lab[a] == L])
                      for L in range(lab.max() + 1)]
        projs, gammas = [], []
        for g in groups:
            Vg = V[:, g]
            projs.append(Vg @ Vg.conj().T)
            gammas.append(float(w[g].mean()))
        leak = max(_leakage(family, P) for P in projs)
        if leak <= tol_inv:
            candidates.append(InvariantDecomposition(projs, gammas, False, leak))
            counts = [len(cand.projections) for cand in candidates]
            if counts.count(max(counts)) >= 2:
                return next(cd for cd in candidates if len(cd.projections) == max(counts))
    if not candidates:
        raise ArithmeticError("no draw produced invariant eigenspaces; tolerance too tight")
    best = max(candidates, key=lambda cd: len(cd.projections))
    best.degenerate = True
    return best


def has_invariant_measure(family: GeneratorFamily, projector: np.ndarray | None = None,
                          tol: float = 1e-8):
    """Decide whether a proper common invariant subspace lies inside range(projector).

    Returns (flag, witness) where witness is an orthonormal basis of such a subspace.
    The full truncated space itself does not count: only kernel elements that are
    not multiples of the identity witness an invariant measure.
    """
    d = family.d
    P = np.eye(d) if projector is None else np.asarray(projector, dtype=complex)
    scale = max(max(np.linalg.norm(A, 2) for A in family.matrices), 1.0)
    if max(np.linalg.norm(P @ A - A @ P, 2) for A in family.matrices) > tol * scale:
        raise ValueError("projector does not commute with the generators")
    w, V = np.linalg.eigh((P + P.conj().T) / 2)
    Q = V[:, w > 0.5]
    if Q.shape[1] == 0:
        return False, None
    if Q.shape[1] < d:
        return True, Q
    basis = kernel_basis(family) if d <= 48 else None
    if basis is not None:
        if basis.nontrivial_dim() == 0:
            return False, None
        dec = invariant_subspaces(basis, family, isotypic=False)
        Pj = min(dec.projections, key=lambda p: np.trace(p).real)
        w, V = np.linalg.eigh(Pj)
        return True, V[:, w > 0.5]
    dec = algebra_decomposition(family)
    if dec.commutant_dim <= 1:
        return False, None
    return True, min(dec.components, key=lambda c: c.dim).basis


# ----------------------------------------------------- algebra decomposition

@dataclass
class Component:
    """An isotypic block of the generated algebra.

    `multiplicity` counts equivalent irreducible copies over the complex numbers and
    `commutant_dim` is the block's contribution to the kernel dimension.
    """
    basis: np.ndarray
    multiplicity: int
    commutant_dim: int
    uniform: bool
    h1_max: float = float("nan")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass
class AlgebraDecomposition:
    components: list[Component]
    leakage: float
    min_gap: float
    real_form: bool

    @property
    def commutant_dim(self) -> int:
        return sum(c.commutant_dim for c in self.components)

    @property
    def degenerate(self) -> bool:
        return not all(c.uniform for c in self.components)


def _real_form(family: GeneratorFamily, tol: float = 1e-12):
    """Unitary U with U^dag A_k U real for every k, or None.

    Exists when the basis is a set of Fourier modes closed under k -> -k and the
    generators commute with f_k -> conj(f_{-k}), i.e. they map real fields to real fields.
    """
    if all(np.abs(A.imag).max() <= tol * max(np.abs(A).max(), 1.0) for A in family.matrices):
        return sp.identity(family.d, format="csr", dtype=complex)
    if family.modes is None:
        return None
    modes = [tuple(np.round(m).astype(int)) for m in np.asarray(family.modes).reshape(family.d, -1)]
    index = {m: i for i, m in enumerate(modes)}
    if any(tuple(-x for x in m) not in index for m in modes):
        return None
    U = sp.lil_matrix((family.d, family.d), dtype=complex)
    col = 0
    s = 1.0 / math.sqrt(2.0)
    for m, i in index.items():
        j = index[tuple(-x for x in m)]
        if i == j:
            U[i, col] = 1.0
            col += 1
        elif i < j:
            U[i, col], U[j, col] = s, s
            U[i, col + 1], U[j, col + 1] = -1j * s, 1j * s
            col += 2
    U = U.tocsr()
    for A in family.matrices:
        B = (U.conj().T @ sp.csr_matrix(A) @ U).toarray()
        if np.abs(B.imag).max() > 1e-10 * max(np.abs(B).max(), 1.0):
            return None
    return U


def _generic_element(As: list, rng, real: bool, rounds: int = 2, reach: float = 64.0) -> np.ndarray:
    """Random self-adjoint element of the algebra generated by the A_k.

    A short-word polynomial alone is banded in Fourier space, so states at
    opposite ends of the band can be split only by exponentially small amounts.
    Products of Cayley transforms (I - tA)^{-1}(I + tA), which are rational in A
    and hence in the algebra, couple the whole band and remove those collisions.
    """
    dense = [A.toarray() for A in As]
    d = dense[0].shape[0]
    P0 = np.zeros((d, d), float if real else complex)
    n = len(As)
    for i in range(n):
        if not real:
            P0 += rng.standard_normal() * (-1j) * dense[i]
        for j in range(n):
            P = np.asarray(As[i] @ dense[j])
            P0 += rng.standard_normal() * (P + P.conj().T)
            if not real and i < j:
                P0 += rng.standard_normal() * 1j * (P - P.conj().T)
            for k in range(n):
                W = np.asarray(As[k] @ P)
                P0 += rng.standard_normal() * (W - W.conj().T if real else 1j * (W - W.conj().T))
    del dense
    amax = np.abs(P0).max()
    Z = P0 / amax if amax > 0 else P0
    del P0
    W = np.eye(d, dtype=Z.dtype)
    I = sp.identity(d, format="csc", dtype=Z.dtype)
    for _ in range(rounds):
        for A in As:
            a = abs(A).max()
            if a == 0:
                continue
            t = rng.uniform(0.5, 1.5) * reach / a
            lu = spla.splu(sp.csc_matrix(I - t * A))
            W = lu.solve(np.asarray((I + t * A) @ W))
    Z += W + W.conj().T
    return (Z + Z.conj().T) / 2


def _block_norms(C: np.ndarray, owner: np.ndarray, n: int) -> np.ndarray:
    """Frobenius norms of the (a, b) blocks of C under the labelling `owner`."""
    E = sp.csr_matrix((np.ones(owner.size), (np.arange(owner.size), owner)), shape=(owner.size, n))
    return np.sqrt(np.asarray(E.T @ (np.abs(C) ** 2) @ E))


def _compression_rank(E: np.ndarray, As: list, rng, tol: float = 1e-8) -> int:
    """Real dimension of {E^T X E : X in the algebra}: 1, 2 or 4 by block type."""
    mats = [np.eye(E.shape[1])]
    dense = [np.asarray(A @ E) for A in As]
    for _ in range(6):
        c = rng.standard_normal((len(As), len(As)))
        X = sum(c[i, j] * np.asarray(As[i] @ dense[j]) for i in range(len(As)) for j in range(len(As)))
        X = X + sum(rng.standard_normal() * D for D in dense)
        mats.append(E.T @ X)
    S = np.array([m.ravel() for m in mats])
    s = np.linalg.svd(S, compute_uv=False)
    return int(np.count_nonzero(s > tol * s[0]))


def algebra_decomposition(family: GeneratorFamily, seed: int = 0,
                          exact_rel: float = 1e-13, cluster_rel: float = 1e-6,
                          rel_edge: float = 1e-3, tol_inv: float | None = None
                          ) -> AlgebraDecomposition:
    """Isotypic blocks of the algebra generated by the A_k, via generic algebra elements.

    Eigenvalues of a generic element that agree to `exact_rel` are structural
    multiplicities.  Near-collisions (within `cluster_rel`) are resolved by
    diagonalizing a second generic element on the cluster, which cannot couple
    distinct blocks.  Eigenspaces linked by a generator then form one block.
    """
    U = _real_form(family)
    real = U is not None
    if real:
        As = [sp.csr_matrix((U.conj().T @ sp.csr_matrix(A) @ U).real) for A in family.matrices]
    else:
        As = [sp.csr_matrix(A) for A in family.matrices]
    d = family.d
    scale = max(max(abs(A).max() for A in As), 1.0)
    # eigenvector mixing across near-collisions leaves couplings of order
    # eps * |Z| / gap; thresholds sit well above that
    tol_inv = 1e-3 * scale if tol_inv is None else tol_inv

    rng = np.random.default_rng(seed)
    Z = _generic_element(As, rng, real)
    w, V = np.linalg.eigh(Z)
    Z = _generic_element(As, rng, real)
    spread = max(w[-1] - w[0], 0.0)
    spread2 = 2.0 * np.linalg.norm(Z, 1)
    clusters = _group_eigenvalues(w, cluster_rel)
    groups = []
    score = np.inf
    for cl in clusters:
        if cl.size == 1:
            groups.append(cl)
            continue
        Vc = V[:, cl]
        Zc = Vc.conj().T @ (Z @ Vc)
        w2, R = np.linalg.eigh((Zc + Zc.conj().T) / 2)
        V[:, cl] = Vc @ R
        # structural multiplicity must be exact for both elements
        sub = _group_eigenvalues(w2, exact_rel, spread2)
        for g in sub:
            groups.append(cl[g])
        if spread > 0:
            gaps = np.diff(w[cl]) / spread
            gaps = gaps[gaps > exact_rel]
            if gaps.size:
                score = min(score, float(gaps.min()))
    del Z
    order = np.argsort([g[0] for g in groups])
    groups = [groups[i] for i in order]
    g_of = np.empty(d, dtype=int)
    for gi, g in enumerate(groups):
        g_of[g] = gi

    couplings = [V.conj().T @ np.asarray(A @ V) for A in As]
    # strong edges first, then merge any blocks still coupled above tol_inv
    n = len(groups)
    rows, cols = [], []
    for C in couplings:
        cmax = np.abs(C).max()
        if cmax > 0:
            a, b = np.nonzero(np.abs(C) > rel_edge * cmax)
            rows.append(g_of[a])
            cols.append(g_of[b])
    r = np.concatenate(rows) if rows else np.zeros(0, int)
    c = np.concatenate(cols) if cols else np.zeros(0, int)
    G = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, n))
    _, labels = csgraph.connected_components(G, directed=False)
    owner = labels[g_of]
    while True:
        nb = owner.max() + 1
        B = sum(_block_norms(C, owner, nb) for C in couplings)
        np.fill_diagonal(B, 0.0)
        if B.max() <= tol_inv:
            break
        k, lab = csgraph.connected_components(sp.csr_matrix(B > tol_inv), directed=False)
        owner = lab[owner]
    nb = owner.max() + 1
    B = sum(_block_norms(C, owner, nb) for C in couplings)
    np.fill_diagonal(B, 0.0)
    leak = float(B.max()) if nb > 1 else 0.0

    basis_change = U if real else sp.identity(d, format="csr")
    # |k|^2 is shared by the modes k and -k, so the weights stay diagonal
    weights = np.real((basis_change.conj().T @ sp.diags(family.h1_weights()) @ basis_change).diagonal())
    rng = np.random.default_rng([seed, 99])
    comps = []
    for b in range(nb):
        idx = np.flatnonzero(owner == b)
        sizes = sorted({len(groups[g]) for g in np.unique(g_of[idx])})
        g0 = groups[g_of[idx[0]]]
        f = _compression_rank(V[:, g0], As, rng) if real else 1
        mult = max(sizes[-1] // f, 1)
        comp = Component(basis_change @ V[:, idx], mult * (2 if f == 4 else 1),
                         f * mult * mult, len(sizes) == 1 and sizes[0] % f == 0)
        comp.h1_max = _minimal_subspace_h1(V[:, idx], comp.multiplicity, V[:, g0], As, weights)
        comps.append(comp)
    comps.sort(key=lambda c: (c.dim, c.h1_max))
    return AlgebraDecomposition(comps, leak, score, real)


def _minimal_subspace_h1(block: np.ndarray, multiplicity: int, E: np.ndarray, As,
                         weights: np.ndarray) -> float:
    """Max H^1 seminorm over unit vectors of a minimal invariant subspace in the block.

    With multiplicity one the block itself is minimal.  Otherwise the orbit of the
    smoothest vector of one eigenspace is an irreducible copy.
    """
    if not np.any(weights):
        return float("nan")
    if multiplicity == 1:
        W = block
    else:
        _, hv = np.linalg.eigh(E.conj().T @ (weights[:, None] * E))
        W = _orbit(E @ hv[:, 0], As, target=block.shape[1] // multiplicity)
    return math.sqrt(max(_largest_weighted(W, weights), 0.0))


def _largest_weighted(W: np.ndarray, weights: np.ndarray) -> float:
    """Largest eigenvalue of W^dag diag(weights) W."""
    m = W.shape[1]
    if m <= 400:
        G = W.conj().T @ (weights[:, None] * W)
        return float(np.linalg.eigvalsh((G + G.conj().T) / 2)[-1])
    op = spla.LinearOperator((m, m), dtype=W.dtype,
                             matvec=lambda x: W.conj().T @ (weights * (W @ x)))
    v0 = np.ones(m, dtype=W.dtype)
    return float(spla.eigsh(op, k=1, which="LA", tol=1e-10, v0=v0)[0][0])


def _orbit(v: np.ndarray, As, tol: float = 1e-6, target: int | None = None) -> np.ndarray:
    """Orthonormal basis of the smallest subspace containing v and invariant under As.

    New directions are selected from the Gram matrix of the projected images, so
    `tol` is relative to singular values; genuine directions are O(1).
    """
    Q = (v / np.linalg.norm(v))[:, None]
    new = Q
    while new.shape[1] and (target is None or Q.shape[1] < target):
        Y = np.hstack([np.asarray(A @ new) for A in As])
        for _ in range(2):
            Y = Y - Q @ (Q.conj().T @ Y)
        G = Y.conj().T @ Y
        s, R = np.linalg.eigh((G + G.conj().T) / 2)
        if s[-1] <= 0:
            break
        keep = s > (tol ** 2) * max(s[-1], 1.0)
        if not np.any(keep):
            break
        new = Y @ (R[:, keep] / np.sqrt(s[keep]))
        new = new - Q @ (Q.conj().T @ new)
        new, _ = np.linalg.qr(new)
        Q = np.hstack([Q, new])
    return Q


# ----------------------------------------------------------- Galerkin builders

def galerkin_shear(family: ProfileFamily, ell: int, K: int) -> GeneratorFamily:
    """Noise operators u_j(y) d_x on x-mode ell, acting on y-modes -K..K."""
    if K < 2 * family.max_degree():
        raise ValueError(f"K={K} must be at least twice the profile degree")
    n = np.arange(-K, K + 1)
    mats = []
    for u in family:
        c = u.fourier()
        T = np.zeros((n.size, n.size), complex)
        for i, ni in enumerate(n):
            for j, nj in enumerate(n):
                T[i, j] = c.get(int(ni - nj), 0.0)
        mats.append(1j * ell * T)
    modes = np.stack([np.full(n.size, ell), n], axis=1)
    return GeneratorFamily(mats, modes=modes,
                           provenance={"type": "shear", "ell": ell, "K": K})


@dataclass
class TrigVectorField:
    """sigma(x, y) = sum over (p, q) of (ax[p,q], ay[p,q]) e^{i(px + qy)}."""
    ax: dict
    ay: dict

    @classmethod
    def shear_x(cls, u: ShearProfile) -> "TrigVectorField":
        return cls({(0, k): c for k, c in u.fourier().items()}, {})

    @classmethod
    def shear_y(cls, u: ShearProfile) -> "TrigVectorField":
        return cls({}, {(k, 0): c for k, c in u.fourier().items()})

    @classmethod
    def from_json(cls, spec: dict) -> "TrigVectorField":
        from .profiles import parse_profile
        if "shear_x" in spec:
            return cls.shear_x(parse_profile(spec["shear_x"]))
        if "shear_y" in spec:
            return cls.shear_y(parse_profile(spec["shear_y"]))

        def parse(items):
            return {(int(p), int(q)): complex(re, im) for p, q, re, im in items}
        return cls(parse(spec.get("ax", [])), parse(spec.get("ay", [])))

    def divergence_max(self) -> float:
        keys = set(self.ax) | set(self.ay)
        return max((abs(p * self.ax.get((p, q), 0) + q * self.ay.get((p, q), 0))
                    for p, q in keys), default=0.0)

    def is_real(self) -> bool:
        return all(abs(c.get((-p, -q), 0) - np.conj(v)) <= 1e-12 * max(1, abs(v))
                   for c in (self.ax, self.ay) for (p, q), v in c.items())


def galerkin_2d(fields: Sequence[TrigVectorField], K: int) -> GeneratorFamily:
    """sigma_k . grad on mean-free Fourier modes 0 < max(|m|, |n|) <= K."""
    modes = [(m, n) for m in range(-K, K + 1) for n in range(-K, K + 1) if (m, n) != (0, 0)]
    index = {mn: i for i, mn in enumerate(modes)}
    d = len(modes)
    mats = []
    correction = 0.0
    for sigma in fields:
        if sigma.divergence_max() > 1e-12:
            raise GeneratorError("vector field is not divergence-free")
        if not sigma.is_real():
            raise GeneratorError("vector field must be real-valued")
        rows, cols, vals = [], [], []
        keys = set(sigma.ax) | set(sigma.ay)
        for (m2, n2), j in index.items():
            for (p, q) in keys:
                tgt = index.get((m2 + p, n2 + q))
                if tgt is None:
                    continue
                v = 1j * (sigma.ax.get((p, q), 0) * m2 + sigma.ay.get((p, q), 0) * n2)
                if v != 0:
                    rows.append(tgt)
                    cols.append(j)
                    vals.append(v)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(d, d)).toarray()
        S = (A - A.conj().T) / 2
        correction = max(correction, float(np.linalg.norm(S - A)))
        mats.append(S)
    return GeneratorFamily(mats, modes=np.array(modes, dtype=float),
                           provenance={"type": "2d", "K": K}, correction_norm=correction)


# ----------------------------------------------------------- diagnostic

@dataclass
class CutoffReport:
    K: int
    d: int
    kernel_dim: int
    nontrivial_dim: int
    subspaces: list[dict]
    h1_min: float
    degenerate: bool


@dataclass
class EnhancementReport:
    cutoffs: list[CutoffReport]
    verdict: str
    reason: str

    @property
    def enhancing(self) -> bool:
        return self.verdict.startswith("no finite-dimensional")

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "cutoffs": [{"K": c.K, "dim": c.kernel_dim, "nontrivial_dim": c.nontrivial_dim,
                         "h1_min": c.h1_min, "degenerate": c.degenerate,
                         "subspaces": c.subspaces} for c in self.cutoffs],
        }


VERDICT_ENHANCING = "no finite-dimensional H1 invariant subspace detected (enhancing)"
VERDICT_FOUND = "invariant subspace found"
VERDICT_INCONCLUSIVE = "inconclusive"


def enhancement_diagnostic(builder: Callable[[int], GeneratorFamily], K_list: Sequence[int],
                           seed: int = 0, growth: float = 1.2, flat: float = 0.1
                           ) -> EnhancementReport:
    """Truncation diagnostic for finite-dimensional invariant subspaces.

    A proper invariant subspace whose H^1 seminorm stays bounded as K grows is
    reported as found; if every proper subspace's H^1 seminorm grows by at least
    `growth` per cutoff step (or none exist), the family is reported enhancing.
    """
    K_list = list(K_list)
    if len(K_list) < 3 or any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise ValueError("need at least three increasing cutoffs")
    reports = []
    for K in K_list:
        fam = builder(K)
        dec = algebra_decomposition(fam, seed=seed)
        proper = [c for c in dec.components if c.dim < fam.d]
        subspaces = [{"dim": c.dim, "multiplicity": c.multiplicity, "h1_max": c.h1_max}
                     for c in dec.components]
        h1_min = min((c.h1_max for c in proper), default=float("inf"))
        reports.append(CutoffReport(K, fam.d, dec.commutant_dim, dec.commutant_dim - 1,
                                    subspaces, h1_min, dec.degenerate))
        log.info("K=%d d=%d kernel dim %d h1_min %.4g", K, fam.d, dec.commutant_dim, h1_min)
    if all(r.nontrivial_dim == 0 for r in reports):
        return EnhancementReport(reports, VERDICT_ENHANCING, "kernel trivial at every cutoff")
    h = np.array([r.h1_min for r in reports])
    if np.all(np.isfinite(h)):
        ratios = h[1:] / h[:-1]
        if np.all(ratios >= growth):
            return EnhancementReport(reports, VERDICT_ENHANCING,
                                     f"H1 norms diverge with K (ratios {np.round(ratios, 3).tolist()})")
        if (h.max() - h.min()) <= flat * h.min():
            return EnhancementReport(reports, VERDICT_FOUND,
                                     f"bounded H1 norm {h.max():.4g} across cutoffs")
    return EnhancementReport(reports, VERDICT_INCONCLUSIVE,
                             f"no monotone H1 trend: {h.tolist()}")
