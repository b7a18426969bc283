"""Localized orthogonal decomposition: corrected coarse basis and matrices.

The fine-scale space is the kernel of a mass-weighted nodal quasi
interpolation onto the coarse mesh.  For every coarse element a constrained
elliptic problem posed on a k-layer element patch yields corrector columns;
their sum corrects the nodal interpolation basis, and the coarse system
matrices are triple products with the fine ones through the corrected
basis.  Element problems are independent and deterministic, so the basis
is reproducible and reusable across solver runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (CoefficientField, LqrSystem, _stiffness_on,
                       assemble_mass, assemble_stiffness)
from .mesh import TriMesh, ancestor_elements, lineage, prolongation
from .runtime import single_thread_blas


def clement_interpolation(fine: TriMesh, coarse: TriMesh,
                          all_nodes: bool = False) -> sp.csr_matrix:
    """Mass-weighted nodal averaging onto the coarse space.

    Row z maps a fine coefficient vector v to
    (I_H v)(z) = <v, phi_z^H> / <1, phi_z^H>.  By default rows run over the
    free coarse nodes and columns over the free fine nodes.
    """
    lineage(coarse, fine)
    P = prolongation(coarse, fine, all_nodes=True)
    Mf = assemble_mass(fine, all_nodes=True)
    W = (P.T @ Mf).tocsr()
    d = np.asarray(W.sum(axis=1)).ravel()
    I = sp.diags(1.0 / d) @ W
    if all_nodes:
        return I.tocsr()
    return I[coarse.free_nodes][:, fine.free_nodes].tocsr()


def _element_incidence(mesh: TriMesh) -> sp.csr_matrix:
    """Vertex-to-triangle incidence (n_vertices x n_triangles, 0/1)."""
    nt = mesh.n_triangles
    rows = mesh.triangles.ravel()
    cols = np.repeat(np.arange(nt), 3)
    return sp.csr_matrix((np.ones(3 * nt), (rows, cols)),
                         shape=(mesh.n_vertices, nt))


def patch_elements(coarse: TriMesh, K: int, k: int,
                   incidence: sp.csr_matrix | None = None) -> np.ndarray:
    """Sorted ids of the k-layer element patch around element K.

    Layer 0 is {K}; each further layer adds every element sharing at least
    a vertex with the current patch.  Saturates at the full mesh.
    """
    if k < 0:
        raise ValueError("patch radius must be nonnegative")
    if not 0 <= K < coarse.n_triangles:
        raise ValueError(f"element id {K} out of range")
    inc = incidence if incidence is not None else _element_incidence(coarse)
    mask = np.zeros(coarse.n_triangles, dtype=bool)
    mask[K] = True
    for _ in range(k):
        verts = (inc @ mask) > 0
        grown = (inc.T @ verts) > 0
        if (grown == mask).all():
            break
        mask = grown
    return np.nonzero(mask)[0]


def default_patch_radius(coarse: TriMesh) -> int:
    """Layers proportional to log(1/H): ceil(log2(1/pitch))."""
    return max(1, int(np.ceil(np.log2(1.0 / coarse.pitch))))


class _Workspace:
    """Shared immutable data for all corrector solves of one mesh pair."""

    def __init__(self, fine, coarse, kappa, system=None, I_H=None):
        self.fine = fine
        self.coarse = coarse
        self.kappa = kappa
        self.P_full = prolongation(coarse, fine, all_nodes=True)
        self.P_free = self.P_full[fine.free_nodes][:, coarse.free_nodes].tocsr()
        self.I_free = (I_H if I_H is not None
                       else clement_interpolation(fine, coarse)).tocsr()
        self.S_free = (system.S if system is not None
                       else assemble_stiffness(fine, kappa)).tocsr()
        self.anc = ancestor_elements(coarse, fine)
        self.inc_fine = _element_incidence(fine)
        self.inc_coarse = _element_incidence(coarse)
        self.free_mask = np.zeros(fine.n_vertices, dtype=bool)
        self.free_mask[fine.free_nodes] = True
        self.free_index = np.full(fine.n_vertices, -1, dtype=np.int64)
        self.free_index[fine.free_nodes] = np.arange(fine.n_free)
        self.coarse_free_index = np.full(coarse.n_vertices, -1, dtype=np.int64)
        self.coarse_free_index[coarse.free_nodes] = np.arange(coarse.n_free)

    def free_hats(self, K):
        zf = self.coarse_free_index[self.coarse.triangles[K]]
        return self.coarse.triangles[K][zf >= 0], zf[zf >= 0]

    def patch_dofs(self, patch):
        """Free fine vertices strictly interior to the patch."""
        patch_mask = np.zeros(self.coarse.n_triangles, dtype=bool)
        patch_mask[patch] = True
        tri_mask = patch_mask[self.anc]
        inside = (self.inc_fine @ tri_mask) > 0
        outside = (self.inc_fine @ (~tri_mask)) > 0
        return np.nonzero(inside & ~outside & self.free_mask)[0]

    def element_rhs(self, K, verts):
        """Columns int_K kappa grad(phi_z).grad(phi_i) at fine vertices."""
        tri_ids = np.nonzero(self.anc == K)[0]
        SK = _stiffness_on(self.fine, self.kappa, tri_ids)
        cols = self.P_full[:, verts]
        return (SK @ cols).toarray()


def _solve_patch(ws: _Workspace, K: int, patch: np.ndarray):
    """Corrector columns of element K on a given patch.

    Returns (free positions of the patch dofs, dense corrector columns,
    free ids of the coarse hats of K); empty results when K carries no
    free coarse hat.
    """
    hat_verts, hat_free = ws.free_hats(K)
    if hat_verts.size == 0:
        return np.empty(0, np.int64), np.zeros((0, 0)), hat_free
    dof_verts = ws.patch_dofs(patch)
    if dof_verts.size == 0:
        raise np.linalg.LinAlgError(
            f"element {K}: patch has no interior fine nodes")
    dof_free = ws.free_index[dof_verts]

    cverts = np.unique(ws.coarse.triangles[patch])
    c_free = ws.coarse_free_index[cverts]
    c_free = c_free[c_free >= 0]

    Spp = ws.S_free[dof_free][:, dof_free]
    Cp = ws.I_free[c_free][:, dof_free]
    saddle = sp.bmat([[Spp, Cp.T], [Cp, None]], format="csc")
    try:
        lu = splu(saddle)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(
            f"element {K}: singular local corrector system") from exc

    rhs_all = ws.element_rhs(K, hat_verts)[dof_verts]
    rhs = np.vstack([rhs_all, np.zeros((c_free.size, hat_verts.size))])
    sol = lu.solve(rhs)
    return dof_free, sol[: dof_free.size], hat_free


def element_corrector(fine: TriMesh, coarse: TriMesh, I_H: sp.spmatrix,
                      kappa: CoefficientField, K: int,
                      k: int) -> sp.csr_matrix:
    """Corrector contribution of one coarse element as a sparse
    (fine free) x (coarse free) matrix with at most three nonzero columns."""
    if k < 1:
        raise ValueError("corrector patches need at least one layer")
    ws = _Workspace(fine, coarse, kappa, I_H=I_H)
    patch = patch_elements(coarse, K, k, incidence=ws.inc_coarse)
    dof_free, cols, hat_free = _solve_patch(ws, K, patch)
    out = sp.lil_matrix((fine.n_free, coarse.n_free))
    for j, zf in enumerate(hat_free):
        out[dof_free, zf] = cols[:, j]
    return out.tocsr()


@dataclass
class LodBasis:
    """Corrected coarse basis and the corrected system matrices.

    Rh maps corrected-coarse coefficients to fine coefficients; it has one
    column per free coarse node.  The corrected matrices are the triple
    products of the fine ones with Rh.
    """

    k: int
    Rh: sp.csr_matrix
    M_ms: sp.csr_matrix
    S_ms: sp.csr_matrix
    B_ms: np.ndarray
    C_ms: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def n_coarse(self) -> int:
        return self.Rh.shape[1]

    def system(self, Q=None, R=None) -> LqrSystem:
        """Corrected-space LQR system ready for the Riccati solver."""
        return LqrSystem(M=self.M_ms, S=self.S_ms, B=self.B_ms, C=self.C_ms,
                         Q=Q, R=R)


def _corrected_matrices(Rh, system):
    M_ms = (Rh.T @ system.M @ Rh).tocsr()
    S_ms = (Rh.T @ system.S @ Rh).tocsr()
    M_ms = 0.5 * (M_ms + M_ms.T)
    S_ms = 0.5 * (S_ms + S_ms.T)
    B_ms = Rh.T @ system.B
    C_ms = system.C @ Rh
    return M_ms, S_ms, B_ms, C_ms


def build_lod_basis(fine: TriMesh, coarse: TriMesh, kappa: CoefficientField,
                    k: int, system: LqrSystem,
                    I_H: sp.spmatrix | None = None,
                    workers: int = 1) -> LodBasis:
    """Assemble the corrected basis Rh = prolongation - sum of correctors
    and the corrected matrices, solving one local problem per element.

    Element problems are independent; with ``workers > 1`` they run on a
    thread pool.  Results are accumulated in element order either way, so
    the basis is bit-identical for any worker count.
    """
    if k < 1:
        raise ValueError("corrector patches need at least one layer")
    with single_thread_blas():
        return _build_lod_basis(fine, coarse, kappa, k, system, I_H, workers)


def _build_lod_basis(fine, coarse, kappa, k, system, I_H, workers):
    ws = _Workspace(fine, coarse, kappa, system=system, I_H=I_H)

    def solve_one(K):
        patch = patch_elements(coarse, K, k, incidence=ws.inc_coarse)
        return patch.size, _solve_patch(ws, K, patch)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve_one, range(coarse.n_triangles)))
    else:
        results = [solve_one(K) for K in range(coarse.n_triangles)]

    rows, cols, vals = [], [], []
    patch_sizes = []
    for patch_size, (dof_free, qcols, hat_free) in results:
        patch_sizes.append(patch_size)
        for j, zf in enumerate(hat_free):
            rows.append(dof_free)
            cols.append(np.full(dof_free.size, zf))
            vals.append(qcols[:, j])
    if rows:
        Q = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(fine.n_free, coarse.n_free)).tocsr()
    else:
        Q = sp.csr_matrix((fine.n_free, coarse.n_free))
    Rh = (ws.P_free - Q).tocsr()
    M_ms, S_ms, B_ms, C_ms = _corrected_matrices(Rh, system)
    stats = {"n_elements": coarse.n_triangles,
             "patch_elements_min": int(min(patch_sizes)),
             "patch_elements_max": int(max(patch_sizes))}
    return LodBasis(k, Rh, M_ms, S_ms, B_ms, C_ms, stats)


def global_corrector_basis(fine: TriMesh, coarse: TriMesh,
                           kappa: CoefficientField, system: LqrSystem,
                           I_H: sp.spmatrix | None = None) -> LodBasis:
    """Unlocalized construction: one constrained solve over the whole fine
    space with every coarse constraint row.  Reference for testing the
    localized assembly at saturation."""
    ws = _Workspace(fine, coarse, kappa, system=system, I_H=I_H)
    n, nH = fine.n_free, coarse.n_free
    saddle = sp.bmat([[ws.S_free, ws.I_free.T], [ws.I_free, None]],
                     format="csc")
    lu = splu(saddle)
    rhs = np.vstack([(ws.S_free @ ws.P_free).toarray(), np.zeros((nH, nH))])
    Q = lu.solve(rhs)[:n]
    Rh = sp.csr_matrix(ws.P_free - Q)
    M_ms, S_ms, B_ms, C_ms = _corrected_matrices(Rh, system)
    return LodBasis(-1, Rh, M_ms, S_ms, B_ms, C_ms, {"global": True})


def corrector_decay_profile(fine: TriMesh, coarse: TriMesh,
                            kappa: CoefficientField, K: int,
                            k_max: int) -> list[float]:
    """Energy-norm distances between the k-localized and the full-domain
    correctors of element K, for k = 1 .. k_max.

    e_k aggregates the (at most three) hat columns of K; it is
    nonincreasing in k because growing the patch enlarges the Galerkin
    subspace of the same problem.
    """
    if k_max < 2:
        raise ValueError("profile needs k_max >= 2")
    ws = _Workspace(fine, coarse, kappa)
    full_patch = patch_elements(coarse, K, coarse.n_triangles,
                                incidence=ws.inc_coarse)
    dofs_hat, cols_hat, hats = _solve_patch(ws, K, full_patch)
    if hats.size == 0:
        raise ValueError(f"element {K} carries no free coarse hat")
    qhat = np.zeros((fine.n_free, hats.size))
    qhat[dofs_hat] = cols_hat
    energies = []
    for k in range(1, k_max + 1):
        patch = patch_elements(coarse, K, k, incidence=ws.inc_coarse)
        dofs, cols, _ = _solve_patch(ws, K, patch)
        qk = np.zeros_like(qhat)
        qk[dofs] = cols
        diff = qhat - qk
        energies.append(float(np.sqrt((diff * (ws.S_free @ diff)).sum())))
    return energies


def _fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def basis_fingerprints(fine: TriMesh, coarse: TriMesh,
                       kappa: CoefficientField) -> dict:
    if kappa.kind == "grid":
        kp = _fingerprint(kappa.values, np.array([kappa.epsilon]))
    else:
        kp = _fingerprint(kappa.centers,
                          np.array([kappa.width, kappa.background,
                                    kappa.stripe_value]))
    return {"fine": _fingerprint(fine.vertices, fine.triangles),
            "coarse": _fingerprint(coarse.vertices, coarse.triangles),
            "kappa": kp}


def save_lod_basis(basis: LodBasis, path, fine=None, coarse=None,
                   kappa=None) -> None:
    """Persist Rh, k and input checksums so the pre-solve can be reused."""
    prints = (basis_fingerprints(fine, coarse, kappa)
              if fine is not None else {})
    Rh = basis.Rh.tocsr()
    np.savez_compressed(path, k=basis.k, data=Rh.data, indices=Rh.indices,
                        indptr=Rh.indptr, shape=Rh.shape,
                        fingerprints=repr(prints))


def load_lod_basis(path, system: LqrSystem, fine=None, coarse=None,
                   kappa=None) -> LodBasis:
    """Load a saved basis and rebuild the corrected matrices against the
    given fine system; optionally verifies the stored input checksums."""
    with np.load(path, allow_pickle=False) as z:
        Rh = sp.csr_matrix((z["data"], z["indices"], z["indptr"]),
                           shape=tuple(z["shape"]))
        k = int(z["k"])
        stored = str(z["fingerprints"])
    if fine is not None:
        expected = repr(basis_fingerprints(fine, coarse, kappa))
        if stored != expected:
            raise ValueError("saved basis does not match the given inputs")
    M_ms, S_ms, B_ms, C_ms = _corrected_matrices(Rh, system)
    return LodBasis(k, Rh, M_ms, S_ms, B_ms, C_ms, {"loaded": True})
