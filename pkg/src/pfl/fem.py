"""Finite element operators for the coupled motion/damage/fatigue model.

Everything is discretized with linear triangles: displacement and velocity
as vector fields (two dofs per node, x then y interleaved), damage and
fatigue as scalar nodal fields.  Strains are element-constant.  The vector
mass matrix of the motion equation is consistent.  The scalar damage and
fatigue equations use exact nodal quadrature throughout (row-sum lumped
mass, nodal reaction and source terms): nodes then couple only through the
Laplacian, whose P1 stiffness matrix is an M-matrix on a Delaunay mesh, so
the implicit damage update obeys a discrete maximum principle and the
damage field cannot oscillate past its physical bounds near a sharp crack
band.  With consistent scalar operators those oscillations reach order
0.1 once the band saturates.

Sign conventions
----------------
``K_u`` and ``K_v`` are assembled positive (semi)definite, so the
semi-discrete balance of momentum reads::

    M @ acc = -K_u(phi) @ u - K_v @ v + w_a(phi) + M @ f

and the damage evolution reads::

    M_phi @ phi_dot = (P_phi + K_c) @ phi + w_b + w_c

with ``P_phi`` and ``K_c`` negative semidefinite, so the backward-Euler
damage system matrix ``M_phi - dt*(P_phi + K_c)`` stays symmetric positive
definite.  Fatigue evolves as ``M_F @ fat_dot = w_d``.

``w_a`` is the nodal force of the damage-gradient stress ``-gamma*gc*
div(grad(phi) x grad(phi))``; the associated boundary term vanishes under
the natural condition ``grad(phi) . n = 0``.  ``w_b`` carries the elastic
driving force of damage, ``w_c`` the transition-potential remainder and the
fatigue coupling, ``w_d`` the fatigue accumulation rate.

Degradation uses the element mean of ``phi`` (one factor per element).
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .constitutive import (
    damage_mobility,
    damage_potential,
    damage_potential_deriv,
    degradation,
    elasticity_matrix,
    fatigue_potential,
    fatigue_potential_deriv,
    fatigue_source,
)
from .errors import AssemblyError

__all__ = ["FieldState", "GlobalOperators", "Assembler", "assemble", "free_energy"]


# =====================================================================
# State
# =====================================================================

@dataclass
class FieldState:
    """Nodal fields at one time instant.

    ``u``, ``v`` and ``acc`` are interleaved vectors of length ``2 * n``
    (x dof of node i at ``2*i``, y dof at ``2*i + 1``); ``phi`` and ``fat``
    have length ``n``.
    """

    u: np.ndarray
    v: np.ndarray
    acc: np.ndarray
    phi: np.ndarray
    fat: np.ndarray
    t: float = 0.0

    @classmethod
    def virgin(cls, n_nodes):
        """Undeformed, undamaged, fatigue-free state at t = 0."""
        return cls(
            u=np.zeros(2 * n_nodes),
            v=np.zeros(2 * n_nodes),
            acc=np.zeros(2 * n_nodes),
            phi=np.zeros(n_nodes),
            fat=np.zeros(n_nodes),
            t=0.0,
        )

    @property
    def n_nodes(self):
        return self.phi.shape[0]


@dataclass
class GlobalOperators:
    """Assembled global operators and load vectors at one state.

    Matrices are scipy CSR.  ``M_phi`` and ``M_F`` are both the row-sum
    lumped scalar mass: its positive diagonal inverse keeps fatigue
    increments nonnegative and, together with nodal reaction terms, keeps
    the damage update monotone.  ``assembler`` references the
    :class:`Assembler` that built the operators so a stepper can
    reassemble the damage-dependent pieces at an updated damage field;
    ``time`` records the state time the operators belong to.
    """

    M: sparse.csr_matrix
    M_phi: sparse.csr_matrix
    M_F: sparse.csr_matrix
    K_u: sparse.csr_matrix
    K_v: sparse.csr_matrix
    P_phi: sparse.csr_matrix
    K_c: sparse.csr_matrix
    w_a: np.ndarray
    w_b: np.ndarray
    w_c: np.ndarray
    w_d: np.ndarray
    assembler: "Assembler | None" = None
    time: float = 0.0


# =====================================================================
# Assembler
# =====================================================================

# Consistent mass template for a linear triangle: area/12 * [[2,1,1],...]
_MASS_TEMPLATE = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class Assembler:
    """Precomputes element geometry once and assembles global operators.

    All state-independent element arrays (strain-displacement matrices,
    areas, base stiffness blocks, scatter index maps) are built in the
    constructor; per-step assembly then reduces to vectorized scaling and
    one COO-to-CSR conversion per operator.
    """

    def __init__(self, mesh, params):
        mesh.validate()
        params.validate()
        self.mesh = mesh
        self.params = params
        self.C = elasticity_matrix(params.E, params.nu)

        elements = mesh.elements
        coords = mesh.nodes[elements]  # (ne, 3, 2)
        x = coords[:, :, 0]
        y = coords[:, :, 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        area = 0.5 * np.einsum("ei,ei->e", x, b)
        if area.min() <= 0.0:
            bad = int(np.argmin(area))
            raise AssemblyError(
                f"element {bad} is degenerate or inverted (area {area[bad]:.3e} m^2)"
            )
        self.area = area

        inv2a = 1.0 / (2.0 * area)
        grad = np.stack([b, c], axis=1) * inv2a[:, None, None]  # (ne, 2, 3)
        self.grad = grad

        ne = elements.shape[0]
        B = np.zeros((ne, 3, 6))
        B[:, 0, 0::2] = grad[:, 0, :]
        B[:, 1, 1::2] = grad[:, 1, :]
        B[:, 2, 0::2] = grad[:, 1, :]
        B[:, 2, 1::2] = grad[:, 0, :]
        self.B = B

        h = params.thickness
        vol = area * h
        self.K0 = vol[:, None, None] * np.einsum("eai,ab,ebj->eij", B, self.C, B)
        # Viscous stress b*D contracted with the symmetric gradient of the
        # test function: in Voigt form diag(1, 1, 1/2) against engineering
        # shear rate.
        S = np.diag([1.0, 1.0, 0.5])
        self.Kv0 = params.damping * vol[:, None, None] * np.einsum(
            "eai,ab,ebj->eij", B, S, B
        )
        self.Ms = vol[:, None, None] * _MASS_TEMPLATE  # consistent scalar template
        self.L0 = vol[:, None, None] * np.einsum("eai,eaj->eij", grad, grad)

        # Scatter maps: scalar (node) and vector (dof) index grids.
        n = mesh.n_nodes
        self.n_nodes = n
        self.n_dofs = 2 * n
        edof = np.empty((ne, 6), dtype=np.int64)
        edof[:, 0::2] = 2 * elements
        edof[:, 1::2] = 2 * elements + 1
        self.edof = edof
        self._rows6 = np.repeat(edof, 6, axis=1).ravel()
        self._cols6 = np.tile(edof, (1, 6)).ravel()
        self._rows3 = np.repeat(elements, 3, axis=1).ravel()
        self._cols3 = np.tile(elements, (1, 3)).ravel()

        # State-independent global matrices.
        rho = params.rho
        Mv = np.zeros((ne, 6, 6))
        Mv[:, 0::2, 0::2] = rho * self.Ms
        Mv[:, 1::2, 1::2] = rho * self.Ms
        self.M = self._to_csr6(Mv)
        self.K_v = self._to_csr6(self.Kv0)
        # Nodal quadrature weight of each element corner and the row-sum
        # lumped scalar mass it induces.  The lumped inverse is positive
        # diagonal, so a nonnegative load vector can never produce a
        # negative fatigue increment (the consistent inverse can, by a few
        # parts in 1e3 of the increment).
        self.wnode = vol / 3.0
        lumped = np.bincount(
            elements.ravel(), weights=np.repeat(self.wnode, 3), minlength=n
        )
        self.M_lump = sparse.diags(lumped).tocsr()
        self._lump_inv = 1.0 / lumped

    # -------------------------------------------------- low-level helpers

    def _to_csr6(self, blocks):
        mat = sparse.coo_matrix(
            (blocks.ravel(), (self._rows6, self._cols6)),
            shape=(self.n_dofs, self.n_dofs),
        )
        return mat.tocsr()

    def _to_csr3(self, blocks):
        mat = sparse.coo_matrix(
            (blocks.ravel(), (self._rows3, self._cols3)),
            shape=(self.n_nodes, self.n_nodes),
        )
        return mat.tocsr()

    def element_strains(self, dofvec):
        """Element-constant Voigt strains (eps11, eps22, 2*eps12) of a dof vector."""
        return np.einsum("eij,ej->ei", self.B, dofvec[self.edof])

    def element_phi_mean(self, phi):
        return phi[self.mesh.elements].mean(axis=1)

    @staticmethod
    def _voigt_to_tensor(voigt):
        """Map (ne, 3) engineering Voigt strains to (ne, 2, 2) tensors."""
        t = np.empty(voigt.shape[:-1] + (2, 2))
        t[..., 0, 0] = voigt[..., 0]
        t[..., 1, 1] = voigt[..., 1]
        t[..., 0, 1] = t[..., 1, 0] = 0.5 * voigt[..., 2]
        return t

    # -------------------------------------------------- per-state operators

    def stiffness(self, phi):
        """Degraded elastic stiffness ``K_u(phi)`` (positive semidefinite)."""
        ge = degradation(self.element_phi_mean(phi))
        return self._to_csr6(ge[:, None, None] * self.K0)

    def gradient_force(self, phi):
        """Nodal force vector ``w_a(phi)`` of the damage-gradient stress."""
        p = self.params
        ph = phi[self.mesh.elements]
        gphi = np.einsum("eai,ei->ea", self.grad, ph)  # (ne, 2)
        gdot = np.einsum("eai,ea->ei", self.grad, gphi)  # grad(N_i) . grad(phi)
        scale = p.layer_width * p.gc * self.area * p.thickness
        local = scale[:, None, None] * gdot[:, :, None] * gphi[:, None, :]  # (ne,3,2)
        return np.bincount(
            self.edof.ravel(), weights=local.reshape(-1, 6).ravel(), minlength=self.n_dofs
        )

    def damage_operators(self, state):
        """Operators of the damage evolution at ``state``.

        Returns ``(P_phi, K_c, w_b, w_c)``.  The mobility ``1/lambda`` and
        the elastic driving force are element-constant, evaluated from the
        element-mean damage and the element strain of ``state.u``.
        """
        p = self.params
        phibar = self.element_phi_mean(state.phi)
        ilam = damage_mobility(phibar, p)
        eps = self.element_strains(state.u)
        Se = np.einsum("ei,ij,ej->e", eps, self.C, eps)  # E^T C E >= 0

        gam = p.layer_width
        corners = self.mesh.elements.ravel()
        # Diffusion keeps the exact P1 stiffness integral; all reaction
        # terms use nodal weights so off-diagonal coupling comes from the
        # Laplacian alone and the implicit update stays monotone.
        P_phi = self._to_csr3(-(ilam * gam * p.gc)[:, None, None] * self.L0)
        react = np.bincount(
            corners,
            weights=np.repeat(ilam * (p.gc / gam) * self.wnode, 3),
            minlength=self.n_nodes,
        )
        P_phi = (P_phi - sparse.diags(react)).tocsr()
        # The elastic drive (1 - phi) E^T C E splits into the constant
        # nodal load w_b and the implicit diagonal K_c with equal weights.
        elast = np.bincount(
            corners,
            weights=np.repeat(ilam * Se * self.wnode, 3),
            minlength=self.n_nodes,
        )
        K_c = (-sparse.diags(elast)).tocsr()
        w_b = elast

        # Transition-potential remainder (penalty branches only) plus the
        # fatigue coupling; the in-range quadratic part of the damage
        # potential already lives in P_phi.
        z = p.gc * (damage_potential_deriv(state.phi, p.delta) - state.phi)
        z = z + state.fat * fatigue_potential_deriv(state.phi)
        ze = z[self.mesh.elements]
        local = -(ilam / gam)[:, None] * self.wnode[:, None] * ze
        w_c = np.bincount(corners, weights=local.ravel(), minlength=self.n_nodes)
        return P_phi, K_c, w_b, w_c

    def damage_pieces(self, state):
        """Nodal pieces of the damage equation at ``state``.

        Returns ``(mob, elast, L_w)``: the nodal mobility weight
        ``mob_i = sum_e (1/lambda_e) vol_e/3``, the implicit elastic drive
        diagonal ``elast_i = sum_e (1/lambda_e) (E^T C E)_e vol_e/3`` and
        the mobility-weighted diffusion stiffness ``L_w`` (positive
        semidefinite).  In these pieces the semi-discrete damage equation
        reads::

            M_phi phi_dot = -L_w phi + elast * (1 - phi)
                            - (gc H'(phi) + fat Hf'(phi)) * mob / gamma

        which a stepper can integrate with the potential branches resolved
        implicitly instead of frozen at the assembly state.
        """
        p = self.params
        phibar = self.element_phi_mean(state.phi)
        ilam = damage_mobility(phibar, p)
        eps = self.element_strains(state.u)
        Se = np.einsum("ei,ij,ej->e", eps, self.C, eps)
        corners = self.mesh.elements.ravel()
        mob = np.bincount(
            corners, weights=np.repeat(ilam * self.wnode, 3), minlength=self.n_nodes
        )
        elast = np.bincount(
            corners,
            weights=np.repeat(ilam * Se * self.wnode, 3),
            minlength=self.n_nodes,
        )
        L_w = self._to_csr3((ilam * p.layer_width * p.gc)[:, None, None] * self.L0)
        return mob, elast, L_w

    def fatigue_rhs(self, u, v, phi):
        """Load vector ``w_d`` of the fatigue evolution at given kinematics."""
        p = self.params
        eps_t = self._voigt_to_tensor(self.element_strains(u))
        deps_t = self._voigt_to_tensor(self.element_strains(v))
        phibar = self.element_phi_mean(phi)
        fhat = fatigue_source(eps_t, deps_t, phibar, p)  # (ne,)
        hf = fatigue_potential(phi)[self.mesh.elements]
        local = -(fhat / p.layer_width)[:, None] * self.wnode[:, None] * hf
        return np.bincount(self.mesh.elements.ravel(), weights=local.ravel(), minlength=self.n_nodes)

    def fatigue_mass_solve(self, rhs):
        """Solve ``M_F x = rhs`` with the lumped scalar mass."""
        return self._lump_inv * rhs

    def operators(self, state):
        """Assemble the full :class:`GlobalOperators` at ``state``."""
        P_phi, K_c, w_b, w_c = self.damage_operators(state)
        return GlobalOperators(
            M=self.M,
            M_phi=self.M_lump,
            M_F=self.M_lump,
            K_u=self.stiffness(state.phi),
            K_v=self.K_v,
            P_phi=P_phi,
            K_c=K_c,
            w_a=self.gradient_force(state.phi),
            w_b=w_b,
            w_c=w_c,
            w_d=self.fatigue_rhs(state.u, state.v, state.phi),
            assembler=self,
            time=state.t,
        )

    # -------------------------------------------------- diagnostics

    def free_energy(self, state):
        """Total free energy per unit thickness (J/m) of a state.

        Elastic strain energy with element-mean degradation, diffuse crack
        surface energy, and the transition-potential contribution
        ``(gc * H(phi) + fat * H_f(phi)) / gamma`` integrated with exact
        nodal weights ``area / 3``.
        """
        p = self.params
        eps = self.element_strains(state.u)
        Se = np.einsum("ei,ij,ej->e", eps, self.C, eps)
        ge = degradation(self.element_phi_mean(state.phi))
        gphi = np.einsum("eai,ei->ea", self.grad, state.phi[self.mesh.elements])
        grad_sq = np.einsum("ea,ea->e", gphi, gphi)

        elastic = 0.5 * np.sum(ge * Se * self.area)
        surface = 0.5 * p.gc * p.layer_width * np.sum(grad_sq * self.area)
        pot = (
            p.gc * damage_potential(state.phi, p.delta)
            + state.fat * fatigue_potential(state.phi)
        ) / p.layer_width
        potential = np.sum(pot[self.mesh.elements].sum(axis=1) * self.area / 3.0)
        return float(elastic + surface + potential)


def assemble(mesh, state, params):
    """Build :class:`GlobalOperators` for a mesh/state/parameter triple.

    Convenience wrapper that constructs a fresh :class:`Assembler`; long
    runs should construct the assembler once and call
    :meth:`Assembler.operators` per step.
    """
    return Assembler(mesh, params).operators(state)


def free_energy(state, mesh, params):
    """Total free energy per unit thickness (J/m); see :meth:`Assembler.free_energy`."""
    return Assembler(mesh, params).free_energy(state)
