import numpy as np
import pytest

from mslqr import assembly as asm
from mslqr import mesh as mm
from mslqr import norms
from mslqr.lowrank import LowRankFactor, zero_factor


def meshes(j_coarse=1, j_fine=2):
    m = mm.build_base_mesh(mm.unit_square())
    chain = [m]
    for _ in range(j_fine):
        m = mm.refine_uniform(m)
        chain.append(m)
    return chain[j_coarse], chain[j_fine]


@pytest.fixture(scope="module")
def setup():
    coarse, fine = meshes()
    kappa = asm.kappa_random_grid(2 ** -3, 0.1, 1.0, seed=21)
    M = asm.assemble_mass(fine)
    S = asm.assemble_stiffness(fine, kappa)
    P = mm.prolongation(coarse, fine)
    return dict(coarse=coarse, fine=fine, M=M, S=S, P=P,
                chol_M=norms.SparseCholesky(M), chol_S=norms.SparseCholesky(S))


def rand_factor(n, r, seed):
    rng = np.random.default_rng(seed)
    return LowRankFactor(rng.standard_normal((n, r)),
                         np.diag(rng.uniform(0.2, 1.0, r)))


def pair_of(su, Fh, Fc, lift="P"):
    return norms.make_lifted_pair(Fh, Fc, su["P"] if lift == "P" else lift,
                                  su["M"], su["S"],
                                  chol_M=su["chol_M"], chol_S=su["chol_S"])


def dense_l2(su, pair):
    X = pair.fine.to_dense()
    if pair.coarse.rank:
        lc = pair.lifted_coarse_columns()
        X = X - lc @ pair.coarse.D @ lc.T
    L = np.linalg.cholesky(su["M"].toarray())
    return np.abs(np.linalg.eigvalsh(L.T @ X @ L)).max()


def dense_v(su, pair):
    X = pair.fine.to_dense()
    if pair.coarse.rank:
        lc = pair.lifted_coarse_columns()
        X = X - lc @ pair.coarse.D @ lc.T
    L = np.linalg.cholesky(su["S"].toarray())
    core = L.T @ X @ su["M"].toarray() @ np.linalg.inv(L.T)
    return np.linalg.svd(core, compute_uv=False).max()


def test_sparse_cholesky_factorizes(setup):
    for key in ("M", "S"):
        c = norms.SparseCholesky(setup[key])
        n = setup[key].shape[0]
        X = np.eye(n)
        G = c.factor_tmul(X)            # G^T, rows of the factor transpose
        assert np.allclose(G.T @ G, setup[key].toarray(), atol=1e-12)


def test_identical_factors_give_zero(setup):
    n = setup["fine"].n_free
    F = rand_factor(n, 4, seed=1)
    pair = pair_of(setup, F, F, lift=None)
    assert norms.l2_operator_error(pair) <= 1e-12 * np.abs(F.D).max()
    assert norms.v_operator_error(pair) <= 1e-10 * np.abs(F.D).max()


def test_zero_coarse_reduces_to_single_term(setup):
    n = setup["fine"].n_free
    F = rand_factor(n, 4, seed=2)
    pair = pair_of(setup, F, zero_factor(setup["coarse"].n_free))
    assert norms.l2_operator_error(pair) == pytest.approx(dense_l2(setup, pair),
                                                          rel=1e-11)


def test_l2_matches_dense_oracle(setup):
    F_h = rand_factor(setup["fine"].n_free, 4, seed=3)
    F_c = rand_factor(setup["coarse"].n_free, 3, seed=4)
    pair = pair_of(setup, F_h, F_c)
    assert norms.l2_operator_error(pair) == pytest.approx(dense_l2(setup, pair),
                                                          rel=1e-11)


def test_v_matches_dense_oracle(setup):
    F_h = rand_factor(setup["fine"].n_free, 4, seed=5)
    F_c = rand_factor(setup["coarse"].n_free, 3, seed=6)
    pair = pair_of(setup, F_h, F_c)
    assert norms.v_operator_error(pair) == pytest.approx(dense_v(setup, pair),
                                                         rel=1e-10)


def test_norm_symmetric_under_joint_negation(setup):
    F_h = rand_factor(setup["fine"].n_free, 3, seed=7)
    F_c = rand_factor(setup["coarse"].n_free, 3, seed=8)
    pair = pair_of(setup, F_h, F_c)
    neg = pair_of(setup,
                  LowRankFactor(F_h.L, -F_h.D),
                  LowRankFactor(F_c.L, -F_c.D))
    assert norms.l2_operator_error(pair) == norms.l2_operator_error(neg)
    assert norms.v_operator_error(pair) == pytest.approx(
        norms.v_operator_error(neg), rel=1e-13)


def test_scaling_is_exact(setup):
    F_h = rand_factor(setup["fine"].n_free, 3, seed=9)
    F_c = rand_factor(setup["coarse"].n_free, 2, seed=10)
    pair = pair_of(setup, F_h, F_c)
    c = 3.5
    scaled = pair_of(setup,
                     LowRankFactor(F_h.L, c * F_h.D),
                     LowRankFactor(F_c.L, c * F_c.D))
    for err in (norms.l2_operator_error, norms.v_operator_error):
        assert err(scaled) == pytest.approx(c * err(pair), rel=1e-13)


def test_triangle_inequality(setup):
    n = setup["fine"].n_free
    A = rand_factor(n, 3, seed=11)
    B = rand_factor(n, 3, seed=12)
    C = rand_factor(n, 3, seed=13)
    for err in (norms.l2_operator_error, norms.v_operator_error):
        ab = err(pair_of(setup, A, B, lift=None))
        bc = err(pair_of(setup, B, C, lift=None))
        ac = err(pair_of(setup, A, C, lift=None))
        assert ac <= ab + bc + 1e-12


def test_cholesky_rejects_indefinite():
    import scipy.sparse as sp
    A = sp.diags([1.0, -1.0, 2.0]).tocsr()
    with pytest.raises(np.linalg.LinAlgError):
        norms.SparseCholesky(A)
