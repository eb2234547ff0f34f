"""Integrator sub-steps, case table plumbing and the whole-case driver."""

from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pytest
from scipy import sparse
from scipy.sparse.linalg import spsolve

from pfl import (
    Mesh,
    Assembler,
    BoundaryCondition,
    CaseConfig,
    ConfigurationError,
    FieldState,
    MaterialParams,
    case_config,
    material_for_case,
    newmark_alphas,
    ramp_bc,
    run_case,
    select_sensors,
    step_damage,
    step_fatigue,
    step_motion,
)
from pfl.geometry import SensorGrid


# ------------------------------------------------------- Newmark constants

def test_newmark_alphas_frozen_oracle():
    """Average-acceleration constants at the benchmark step size."""
    c = newmark_alphas(0.5, 0.25, 5.0e-4)
    assert c.alpha1 == 1.6e7
    assert c.alpha2 == 8000.0
    assert c.alpha3 == 1.0
    assert c.alpha4 == 4000.0
    assert c.alpha5 == -1.0
    assert c.alpha6 == 0.0


def test_newmark_alphas_generic_values():
    g, b, dt = 0.6, 0.3025, 2.0e-3
    c = newmark_alphas(g, b, dt)
    npt.assert_allclose(c.alpha1, 1.0 / (b * dt * dt), rtol=1e-15)
    npt.assert_allclose(c.alpha2, 1.0 / (b * dt), rtol=1e-15)
    npt.assert_allclose(c.alpha3, (1.0 - 2.0 * b) / (2.0 * b), rtol=1e-15)
    npt.assert_allclose(c.alpha4, g / (b * dt), rtol=1e-15)
    npt.assert_allclose(c.alpha5, 1.0 - g / b, rtol=1e-15)
    npt.assert_allclose(c.alpha6, (1.0 - g / (2.0 * b)) * dt, rtol=1e-15)


def test_newmark_alphas_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        newmark_alphas(0.5, 0.25, 0.0)
    with pytest.raises(ConfigurationError):
        newmark_alphas(0.5, 0.0, 1.0e-3)


def test_newmark_update_matches_trapezoid_rule(rng):
    """gamma=1/2, beta=1/4 reproduces the average-acceleration kinematics."""
    dt = 1.0e-3
    c = newmark_alphas(0.5, 0.25, dt)
    u_n, v_n, a_n, u_next = rng.normal(size=4)
    du = u_next - u_n
    a_next = c.alpha1 * du - c.alpha2 * v_n - c.alpha3 * a_n
    v_next = c.alpha4 * du + c.alpha5 * v_n + c.alpha6 * a_n
    npt.assert_allclose(v_next, v_n + 0.5 * dt * (a_n + a_next), rtol=1e-12)
    npt.assert_allclose(
        u_next, u_n + dt * v_n + 0.25 * dt * dt * (a_n + a_next), rtol=1e-10
    )


# ------------------------------------------------------------- case table

def test_case_table_materials():
    m1 = material_for_case(1)
    assert m1.layer_width == 3.0e-4
    assert m1.gc == 2700.0
    assert m1.damage_rate == 2.0e-6
    m5 = material_for_case(5)
    assert m5.layer_width == 2.0e-3
    assert m5.gc == 5400.0
    assert m5.damage_rate == 1.0e-6
    for cid in range(1, 7):
        m = material_for_case(cid)
        assert m.E == 160.0e9
        assert m.nu == 0.3
        assert m.rho == 7800.0
        assert m.damping == 1.0e8
        assert m.fatigue_rate == 5.0e-7
        assert m.thickness == 5.0e-3


def test_case_table_rejects_unknown_id():
    with pytest.raises(ConfigurationError):
        material_for_case(7)
    with pytest.raises(ConfigurationError):
        case_config(0)


def test_case_config_defaults_and_overrides():
    cfg = case_config(3)
    assert cfg.dt == 5.0e-4
    assert cfg.pull_rate == 4.5e-4
    assert cfg.newmark_gamma == 0.5
    assert cfg.newmark_beta == 0.25
    assert cfg.phi_threshold == 0.999
    cfg2 = case_config(3, dt=1.0e-3, t_max=0.1)
    assert cfg2.dt == 1.0e-3
    assert cfg2.t_max == 0.1


def test_case_config_material_mismatch_rejected(material):
    wrong = material_for_case(2)
    with pytest.raises(ConfigurationError):
        CaseConfig(material=wrong, case_id=1)


def test_case_config_validation():
    m = material_for_case(1)
    with pytest.raises(ConfigurationError):
        CaseConfig(material=m, dt=-1.0e-4)
    with pytest.raises(ConfigurationError):
        CaseConfig(material=m, dt=1.0e-3, t_max=1.0e-3)
    with pytest.raises(ConfigurationError):
        CaseConfig(material=m, solver="gmres")


# ------------------------------------------------------------ ramp BC

def test_ramp_bc_values(strip_mesh):
    rate = 4.5e-4
    t = 0.25
    bc = ramp_bc(strip_mesh, t, rate)
    nf = strip_mesh.fixed_set.size
    npt.assert_allclose(bc.u[: 2 * nf], 0.0, atol=0.0)
    npt.assert_allclose(bc.v[: 2 * nf], 0.0, atol=0.0)
    npt.assert_allclose(bc.u[2 * nf :], rate * t, rtol=1e-15)
    npt.assert_allclose(bc.v[2 * nf :], rate, rtol=1e-15)
    npt.assert_allclose(bc.acc, 0.0, atol=0.0)
    # loaded-end y dofs stay free
    assert not np.intersect1d(bc.dofs, 2 * strip_mesh.loaded_set + 1).size


def test_ramp_bc_displacement_rate_consistency(strip_mesh):
    rate = 4.5e-4
    bc1 = ramp_bc(strip_mesh, 0.1, rate)
    bc2 = ramp_bc(strip_mesh, 0.3, rate)
    du = bc2.u[-1] - bc1.u[-1]
    npt.assert_allclose(du / 0.2, rate, rtol=1e-12)


# ------------------------------------------------------------- sub-steps

def one_dof_ops(m_phi, p, w):
    """1x1 damage system for hand-checking the backward-Euler update."""
    return SimpleNamespace(
        M_phi=sparse.csr_matrix(np.array([[m_phi]])),
        P_phi=sparse.csr_matrix(np.array([[p]])),
        K_c=sparse.csr_matrix(np.array([[0.0]])),
        w_b=np.array([w]),
        w_c=np.array([0.0]),
        assembler=None,
    )


def test_step_damage_one_dof_oracle():
    """phi' = (m phi + dt w) / (m - dt p) for the scalar problem."""
    m, p, w, dt, phi0 = 2.0, -3.0, 0.5, 0.1, 0.2
    state = FieldState(u=np.zeros(2), v=np.zeros(2), acc=np.zeros(2),
                       phi=np.array([phi0]), fat=np.zeros(1), t=0.0)
    ops = one_dof_ops(m, p, w)
    phi1 = step_damage(state, ops, dt)
    npt.assert_allclose(phi1, (m * phi0 + dt * w) / (m - dt * p), rtol=1e-14)


def test_step_damage_accepts_coeffs_for_dt():
    m, p, w, dt, phi0 = 1.5, -1.0, 0.25, 5.0e-4, 0.1
    state = FieldState(u=np.zeros(2), v=np.zeros(2), acc=np.zeros(2),
                       phi=np.array([phi0]), fat=np.zeros(1), t=0.0)
    ops = one_dof_ops(m, p, w)
    coeffs = newmark_alphas(0.5, 0.25, dt)
    npt.assert_allclose(step_damage(state, ops, coeffs),
                        step_damage(state, ops, dt), rtol=0, atol=0)


def _triangle_state(phi, fat=0.0, t=0.0):
    """Uniform-field state on the single unit-triangle mesh."""
    return FieldState(u=np.zeros(6), v=np.zeros(6), acc=np.zeros(6),
                      phi=np.full(3, float(phi)), fat=np.full(3, float(fat)), t=t)


def _triangle_assembler():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2]])
    mesh = Mesh(nodes=nodes, elements=elements, fixed_set=np.array([0]),
                loaded_set=np.array([1]), min_edge=1.0)
    mat = MaterialParams(
        E=200.0, nu=0.25, rho=3.0, damping=0.5, fatigue_rate=1.0e-2,
        layer_width=0.1, gc=4.0, damage_rate=1.0e-3, thickness=2.0,
    )
    return Assembler(mesh, mat), mat


def test_step_damage_matches_linear_solve_in_range():
    """With every node strictly inside [0, 1] the branch-resolved update
    and the frozen-branch linear solve are the same system."""
    from dataclasses import replace as dc_replace

    asm, _ = _triangle_assembler()
    rng = np.random.default_rng(7)
    state = FieldState(
        u=rng.normal(scale=1.0e-3, size=6), v=np.zeros(6), acc=np.zeros(6),
        phi=rng.uniform(0.2, 0.6, size=3), fat=rng.uniform(0.0, 1.0, size=3),
    )
    ops = asm.operators(state)
    with_branches = step_damage(state, ops, 1.0e-3)
    frozen = step_damage(state, dc_replace(ops, assembler=None), 1.0e-3)
    assert np.all(with_branches > 0.0) and np.all(with_branches < 1.0)
    npt.assert_allclose(with_branches, frozen, rtol=1e-12)


def test_step_damage_wall_decay_above_one():
    """Above 1 the only force is the penalty slope: with the mobility
    clamped at full damage, phi drops by dt * c * gc * delta / (gamma *
    delta) = dt * c * gc / gamma, uniformly."""
    asm, mat = _triangle_assembler()
    state = _triangle_state(1.5)
    ops = asm.operators(state)
    dt = 1.0
    expected = 1.5 - dt * mat.damage_rate * mat.gc / mat.layer_width
    npt.assert_allclose(step_damage(state, ops, dt), expected, rtol=1e-12)


def test_step_damage_wall_push_below_zero():
    """Below 0 the penalty pushes up at dt * ilam * gc * delta / gamma
    with the mobility evaluated at phi clamped to 0."""
    asm, mat = _triangle_assembler()
    state = _triangle_state(-0.5)
    ops = asm.operators(state)
    dt = 1.0
    ilam = mat.damage_rate / (1.0 + mat.delta)
    expected = -0.5 + dt * ilam * mat.gc * mat.delta / mat.layer_width
    npt.assert_allclose(step_damage(state, ops, dt), expected, rtol=1e-12)


def test_step_damage_pins_at_one_when_fatigue_exceeds_gc():
    """With fat > gc the in-range equilibrium fat/gc lies above 1 and the
    branch above 1 pushes down: the implicit solution is exactly the
    breakpoint.  The frozen-branch solve overshoots to fat/gc instead."""
    from dataclasses import replace as dc_replace

    asm, mat = _triangle_assembler()
    state = _triangle_state(0.9, fat=2.0 * mat.gc)
    ops = asm.operators(state)
    dt = 1.0e3
    phi1 = step_damage(state, ops, dt)
    npt.assert_array_equal(phi1, 1.0)
    frozen = step_damage(state, dc_replace(ops, assembler=None), dt)
    assert frozen.min() > 1.9  # the overshoot the branch solve prevents


def test_step_damage_pins_at_zero_from_below():
    """A barely negative field with no drive lands exactly on 0 when the
    step dwarfs the penalty relaxation time (classic fling cycle)."""
    asm, _ = _triangle_assembler()
    state = _triangle_state(-0.01)
    ops = asm.operators(state)
    npt.assert_array_equal(step_damage(state, ops, 1.0e6), 0.0)


def test_step_fatigue_one_dof_oracle():
    """Constant rate w over the step adds dt*w/m."""
    m, w, dt = 4.0, 0.8, 0.02
    ops = SimpleNamespace(M_F=sparse.csr_matrix(np.array([[m]])),
                          w_d=np.array([w]), assembler=None)
    s0 = FieldState(u=np.zeros(2), v=np.zeros(2), acc=np.zeros(2),
                    phi=np.zeros(1), fat=np.array([1.0]), t=0.0)
    s1 = FieldState(u=np.zeros(2), v=np.zeros(2), acc=np.zeros(2),
                    phi=np.zeros(1), fat=np.array([1.0]), t=dt)
    npt.assert_allclose(step_fatigue(s0, s1, ops), 1.0 + dt * w / m, rtol=1e-14)


def test_step_fatigue_zero_velocity_is_inert(strip_mesh, material):
    asm = Assembler(strip_mesh, material)
    n = strip_mesh.n_nodes
    state = FieldState.virgin(n)
    ops = asm.operators(state)
    later = FieldState(u=state.u, v=state.v, acc=state.acc, phi=state.phi,
                       fat=state.fat, t=5.0e-4)
    npt.assert_allclose(step_fatigue(state, later, ops), 0.0, atol=0.0)


def test_step_motion_static_limit(strip_mesh, material):
    """Prescribed end displacement drives the interior to the static solution.

    With a huge step size the inertial and viscous terms vanish and one
    Newmark step must return the solution of K_u u = w_a + reactions.
    """
    asm = Assembler(strip_mesh, material)
    n = strip_mesh.n_nodes
    state = FieldState.virgin(n)
    ops = asm.operators(state)
    coeffs = newmark_alphas(0.5, 0.25, 1.0e6)
    pull = 1.0e-6
    bc = BoundaryCondition(
        dofs=np.concatenate([2 * strip_mesh.fixed_set, 2 * strip_mesh.fixed_set + 1,
                             2 * strip_mesh.loaded_set]),
        u=np.concatenate([np.zeros(2 * strip_mesh.fixed_set.size),
                          np.full(strip_mesh.loaded_set.size, pull)]),
        v=np.zeros(2 * strip_mesh.fixed_set.size + strip_mesh.loaded_set.size),
        acc=np.zeros(2 * strip_mesh.fixed_set.size + strip_mesh.loaded_set.size),
    )
    u, v, acc = step_motion(state, state.phi, ops, coeffs, bc)

    K = asm.stiffness(state.phi).tolil()
    rhs = np.zeros(2 * n)
    for d, val in zip(bc.dofs, bc.u):
        K[d, :] = 0.0
        K[d, d] = 1.0
        rhs[d] = val
    u_static = spsolve(K.tocsc(), rhs)
    npt.assert_allclose(u, u_static, rtol=1e-4, atol=1e-5 * pull)


def test_step_motion_energy_decays_with_damping(strip_mesh, material):
    """Free vibration with viscosity: mechanical energy never increases."""
    asm = Assembler(strip_mesh, material)
    n = strip_mesh.n_nodes
    rng = np.random.default_rng(7)
    u0 = 1.0e-8 * rng.normal(size=2 * n)
    state = FieldState.virgin(n)
    ops = asm.operators(state)
    K = asm.stiffness(state.phi)
    acc0 = spsolve(ops.M.tocsc(), -(K @ u0))
    state = FieldState(u=u0, v=np.zeros(2 * n), acc=acc0,
                       phi=np.zeros(n), fat=np.zeros(n), t=0.0)
    coeffs = newmark_alphas(0.5, 0.25, 5.0e-4)
    bc = BoundaryCondition(dofs=np.array([], dtype=np.int64), u=np.array([]),
                           v=np.array([]), acc=np.array([]))

    def energy(s):
        return 0.5 * s.v @ (ops.M @ s.v) + 0.5 * s.u @ (K @ s.u)

    last = energy(state)
    for _ in range(20):
        u, v, acc = step_motion(state, state.phi, ops, coeffs, bc)
        state = FieldState(u=u, v=v, acc=acc, phi=state.phi, fat=state.fat,
                           t=state.t + coeffs.dt)
        e = energy(state)
        assert e <= last * (1.0 + 1e-12)
        last = e
    assert last < 0.9 * energy(FieldState(u=u0, v=np.zeros(2 * n), acc=acc0,
                                          phi=np.zeros(n), fat=np.zeros(n), t=0.0))


def test_step_motion_cg_matches_direct(strip_mesh, material):
    asm = Assembler(strip_mesh, material)
    n = strip_mesh.n_nodes
    state = FieldState.virgin(n)
    ops = asm.operators(state)
    coeffs = newmark_alphas(0.5, 0.25, 5.0e-4)
    bc = ramp_bc(strip_mesh, 5.0e-4, 4.5e-4)
    u_d, v_d, a_d = step_motion(state, state.phi, ops, coeffs, bc, solver="direct")
    u_c, v_c, a_c = step_motion(state, state.phi, ops, coeffs, bc, solver="cg")
    npt.assert_allclose(u_c, u_d, rtol=1e-6, atol=1e-16)


# ------------------------------------------------------------ case driver

@pytest.fixture(scope="module")
def short_run(strip_mesh):
    material = material_for_case(1)
    cfg = CaseConfig(material=material, case_id=1, t_max=0.05)
    sensors = select_sensors(strip_mesh, SensorGrid(nx=3, ny=1))
    return run_case(cfg, strip_mesh, sensors)


def test_run_case_record_shapes(short_run, strip_mesh):
    rec = short_run
    n_rows = rec.times.size
    assert rec.times[0] == 0.0
    npt.assert_allclose(np.diff(rec.times), 5.0e-4, rtol=1e-12)
    assert rec.sensor_phi.shape == (n_rows, rec.sensor_ids.size)
    assert rec.applied_disp.shape == (n_rows,)
    assert rec.reaction_force.shape == (n_rows,)
    npt.assert_allclose(rec.applied_disp, 4.5e-4 * rec.times, rtol=1e-12, atol=0.0)
    assert rec.failure_time is None  # far too short to fail


def test_run_case_fatigue_monotone_and_damage_bounded(short_run):
    rec = short_run
    assert np.all(rec.fat_increment_min >= 0.0)
    delta = material_for_case(1).delta
    assert np.all(rec.phi_min >= -10.0 * delta)
    assert np.all(rec.phi_max <= 1.0 + 10.0 * delta)


def test_run_case_reaction_force_rises(short_run):
    """Early in the ramp the transmitted force grows with the stretch."""
    f = short_run.reaction_force
    # skip the first few steps: the velocity jump at t=0 rings briefly
    assert f[-1] > f[10] > 0.0


def test_run_case_elastic_when_damage_frozen(strip_mesh):
    material = material_for_case(1, damage_rate=0.0)
    cfg = CaseConfig(material=material, t_max=0.02)
    sensors = select_sensors(strip_mesh, SensorGrid(nx=2, ny=1))
    rec = run_case(cfg, strip_mesh, sensors)
    npt.assert_allclose(rec.phi_max, 0.0, atol=1e-15)
    npt.assert_allclose(rec.phi_min, 0.0, atol=1e-15)
    # the fatigue source switches on with damage, so it stays off too
    npt.assert_allclose(rec.final_state.fat, 0.0, atol=0.0)
    assert rec.reaction_force[-1] > 0.0


def test_run_case_store_states(strip_mesh):
    material = material_for_case(1)
    cfg = CaseConfig(material=material, t_max=0.005, store_states=True)
    sensors = select_sensors(strip_mesh, SensorGrid(nx=2, ny=1))
    rec = run_case(cfg, strip_mesh, sensors)
    assert len(rec.states) == rec.times.size
    assert rec.states[0].t == 0.0
    npt.assert_allclose(rec.states[-1].phi, rec.final_state.phi, rtol=0, atol=0)


def test_run_case_series_io_roundtrip(short_run, tmp_path):
    p = tmp_path / "series.csv"
    short_run.write_series(p)
    header = p.read_text().splitlines()[0].split(",")
    assert header[0] == "t"
    assert header[1:] == [f"s{i}" for i in short_run.sensor_ids]
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    npt.assert_allclose(data[:, 0], short_run.times, rtol=1e-15)
    npt.assert_allclose(data[:, 1:], short_run.sensor_phi, rtol=1e-15)

    c = tmp_path / "curve.csv"
    short_run.write_curve(c)
    data = np.loadtxt(c, delimiter=",", skiprows=1)
    npt.assert_allclose(data[:, 1], short_run.applied_disp, rtol=1e-15)
    npt.assert_allclose(data[:, 2], short_run.reaction_force, rtol=1e-15)
