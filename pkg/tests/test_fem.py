"""Element-level oracles and operator properties of the assembler."""

import numpy as np
import numpy.testing as npt
import pytest
from scipy.sparse.linalg import eigsh

from pfl import (
    Assembler,
    ConfigurationError,
    FieldState,
    MaterialParams,
    Mesh,
    assemble,
    degradation,
    elasticity_matrix,
    free_energy,
)


def one_element_mesh():
    """Unit right triangle (0,0), (1,0), (0,1); both end sets degenerate."""
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2]])
    return Mesh(
        nodes=nodes,
        elements=elements,
        fixed_set=np.array([0]),
        loaded_set=np.array([1]),
        min_edge=1.0,
    )


@pytest.fixture(scope="module")
def small_material():
    return MaterialParams(
        E=200.0, nu=0.25, rho=3.0, damping=0.5, fatigue_rate=1.0e-2,
        layer_width=0.1, gc=4.0, damage_rate=1.0e-3, thickness=2.0,
    )


@pytest.fixture(scope="module")
def one_element(small_material):
    return Assembler(one_element_mesh(), small_material)


# ------------------------------------------------------------- hand oracles

def test_cst_stiffness_hand_oracle(one_element, small_material):
    """K = A h B^T C B with the B matrix of the unit right triangle.

    Shape gradients: N1 -> (-1,-1), N2 -> (1,0), N3 -> (0,1); area 1/2.
    """
    B = np.array(
        [
            [-1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0, 0.0, 1.0],
            [-1.0, -1.0, 0.0, 1.0, 1.0, 0.0],
        ]
    )
    C = elasticity_matrix(small_material.E, small_material.nu)
    K_hand = 0.5 * small_material.thickness * B.T @ C @ B
    K = one_element.stiffness(np.zeros(3)).toarray()
    npt.assert_allclose(K, K_hand, rtol=1e-13, atol=1e-10)


def test_consistent_mass_hand_oracle(one_element, small_material):
    """M interleaves rho A h / 12 * [[2,1,1],[1,2,1],[1,1,2]] per direction."""
    block = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    scale = small_material.rho * 0.5 * small_material.thickness
    M = one_element.M.toarray()
    npt.assert_allclose(M[0::2, 0::2], scale * block, rtol=1e-13)
    npt.assert_allclose(M[1::2, 1::2], scale * block, rtol=1e-13)
    npt.assert_allclose(M[0::2, 1::2], 0.0, atol=0.0)


def test_viscous_matrix_hand_oracle(one_element, small_material):
    """K_v = b A h B^T S B with S = diag(1, 1, 1/2)."""
    B = np.array(
        [
            [-1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0, 0.0, 1.0],
            [-1.0, -1.0, 0.0, 1.0, 1.0, 0.0],
        ]
    )
    S = np.diag([1.0, 1.0, 0.5])
    Kv_hand = small_material.damping * 0.5 * small_material.thickness * B.T @ S @ B
    npt.assert_allclose(one_element.K_v.toarray(), Kv_hand, rtol=1e-13, atol=1e-12)


def test_element_strain_of_affine_field(one_element):
    """u = (a x + b y, c x + d y) has constant strain (a, d, b + c)."""
    a, b, c, d = 2.0e-3, -1.0e-3, 4.0e-3, 5.0e-4
    xy = one_element.mesh.nodes
    dof = np.empty(6)
    dof[0::2] = a * xy[:, 0] + b * xy[:, 1]
    dof[1::2] = c * xy[:, 0] + d * xy[:, 1]
    eps = one_element.element_strains(dof)
    npt.assert_allclose(eps, [[a, d, b + c]], rtol=1e-12, atol=1e-18)


# ------------------------------------------------------------- matrix laws

def test_stiffness_rigid_body_null_space(coarse_mesh, material):
    asm = Assembler(coarse_mesh, material)
    K = asm.stiffness(np.zeros(coarse_mesh.n_nodes))
    n = coarse_mesh.n_nodes
    tx = np.zeros(2 * n)
    tx[0::2] = 1.0
    ty = np.zeros(2 * n)
    ty[1::2] = 1.0
    rot = np.empty(2 * n)
    rot[0::2] = -coarse_mesh.nodes[:, 1]
    rot[1::2] = coarse_mesh.nodes[:, 0]
    scale = abs(K).max()
    for mode in (tx, ty, rot):
        npt.assert_allclose(K @ mode, 0.0, atol=1e-9 * scale)


def test_stiffness_scales_with_degradation(coarse_mesh, material):
    asm = Assembler(coarse_mesh, material)
    K0 = asm.stiffness(np.zeros(coarse_mesh.n_nodes))
    phi = np.full(coarse_mesh.n_nodes, 0.4)
    K = asm.stiffness(phi)
    npt.assert_allclose(K.toarray(), degradation(0.4) * K0.toarray(),
                        rtol=1e-12, atol=1e-12 * abs(K0).max())


def test_mass_total_and_spd(coarse_mesh, coarse_specimen, material):
    asm = Assembler(coarse_mesh, material)
    M = asm.M
    npt.assert_allclose((M - M.T).toarray(), 0.0, atol=1e-18 * abs(M).max())
    ones_x = np.zeros(2 * coarse_mesh.n_nodes)
    ones_x[0::2] = 1.0
    total = ones_x @ (M @ ones_x)
    expected = material.rho * material.thickness * coarse_mesh.element_areas().sum()
    npt.assert_allclose(total, expected, rtol=1e-12)
    lam = eigsh(M.tocsc(), k=1, which="SA", return_eigenvectors=False)
    assert lam[0] > 0.0


def test_damage_system_spd_at_loaded_state(coarse_mesh, material, rng):
    """M_phi - dt (P_phi + K_c) stays SPD for a strained, damaged state."""
    n = coarse_mesh.n_nodes
    state = FieldState.virgin(n)
    u = rng.normal(scale=1e-5, size=2 * n)
    phi = rng.uniform(0.0, 0.9, n)
    state = FieldState(u=u, v=np.zeros(2 * n), acc=np.zeros(2 * n),
                       phi=phi, fat=np.zeros(n), t=0.0)
    ops = assemble(coarse_mesh, state, material)
    A = (ops.M_phi - 5e-4 * (ops.P_phi + ops.K_c)).toarray()
    npt.assert_allclose(A, A.T, rtol=0, atol=1e-12 * np.abs(A).max())
    assert np.all(np.linalg.eigvalsh(A) > 0.0)


def test_operators_at_virgin_state_are_quiet(coarse_mesh, material):
    state = FieldState.virgin(coarse_mesh.n_nodes)
    ops = assemble(coarse_mesh, state, material)
    npt.assert_allclose(ops.w_a, 0.0, atol=0.0)
    npt.assert_allclose(ops.w_b, 0.0, atol=0.0)
    npt.assert_allclose(ops.w_c, 0.0, atol=0.0)
    npt.assert_allclose(ops.w_d, 0.0, atol=0.0)
    assert ops.M_F.nnz == coarse_mesh.n_nodes  # lumped diagonal


def test_fatigue_rhs_nonnegative(coarse_mesh, material, rng):
    asm = Assembler(coarse_mesh, material)
    n = coarse_mesh.n_nodes
    for _ in range(5):
        u = rng.normal(scale=1e-5, size=2 * n)
        v = rng.normal(scale=1e-3, size=2 * n)
        phi = rng.uniform(-0.05, 1.05, n)
        w_d = asm.fatigue_rhs(u, v, phi)
        assert np.all(w_d >= 0.0)
    npt.assert_allclose(asm.fatigue_rhs(u, np.zeros(2 * n), phi), 0.0, atol=0.0)


def test_gradient_force_zero_for_uniform_phi(coarse_mesh, material):
    asm = Assembler(coarse_mesh, material)
    w_a = asm.gradient_force(np.full(coarse_mesh.n_nodes, 0.7))
    npt.assert_allclose(w_a, 0.0, atol=1e-20)


def test_degenerate_element_rejected(small_material):
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    elements = np.array([[0, 1, 2]])
    mesh = Mesh(nodes=nodes, elements=elements, fixed_set=np.array([0]),
                loaded_set=np.array([2]), min_edge=1.0)
    with pytest.raises(ConfigurationError):
        Assembler(mesh, small_material)


# ------------------------------------------------------------- free energy

def test_free_energy_virgin_is_zero(coarse_mesh, material):
    state = FieldState.virgin(coarse_mesh.n_nodes)
    assert free_energy(state, coarse_mesh, material) == 0.0


def test_free_energy_uniform_phi(coarse_mesh, material):
    n = coarse_mesh.n_nodes
    phi0 = 0.3
    state = FieldState(
        u=np.zeros(2 * n), v=np.zeros(2 * n), acc=np.zeros(2 * n),
        phi=np.full(n, phi0), fat=np.zeros(n), t=0.0,
    )
    area = coarse_mesh.element_areas().sum()
    expected = area * material.gc * 0.5 * phi0**2 / material.layer_width
    npt.assert_allclose(free_energy(state, coarse_mesh, material), expected, rtol=1e-12)


def test_free_energy_uniform_strain(strip_mesh, material):
    """Pure uniaxial strain on the rectangle strip: 0.5 eps^T C eps * area."""
    n = strip_mesh.n_nodes
    exx = 1.0e-4
    u = np.zeros(2 * n)
    u[0::2] = exx * strip_mesh.nodes[:, 0]
    state = FieldState(u=u, v=np.zeros(2 * n), acc=np.zeros(2 * n),
                       phi=np.zeros(n), fat=np.zeros(n), t=0.0)
    C = elasticity_matrix(material.E, material.nu)
    area = strip_mesh.element_areas().sum()
    expected = 0.5 * C[0, 0] * exx**2 * area
    npt.assert_allclose(free_energy(state, strip_mesh, material), expected, rtol=1e-12)
