"""Upwinded EG transport of the injected-fluid concentration.

The advective terms are driven by the reconstructed face flux and the
quadrature-point cell velocities of the current pressure step, so the
discrete constant state is preserved exactly (up to the compressible mass
term): the volume advection, interior upwind term and dynamically classified
inflow/outflow boundary terms telescope against the pressure equation tested
with the same function.  Dispersion lags one step, D(U^n).  The entropy
dissipation form enters the matrix (implicit treatment), with the plain
average of the cellwise-constant stabilization viscosity on interior faces.

All face integrals here use the unweighted average; only the pressure system
uses permeability weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .egspace import AssemblyContext, cell_field_values, face_field_values
from .flow import FaceFlux, bdf_coefficients, solve_reduced
from .linalg import GmresResult, scatter_csr

__all__ = [
    "SourceField",
    "TransportBC",
    "TransportParams",
    "assemble_transport",
    "solve_transport",
    "source_split",
    "upwind_value",
]


@dataclass(frozen=True)
class TransportParams:
    """Medium constants and penalties for the concentration solve."""

    phi: float = 1.0
    rho0: float = 1.0
    alpha_c: float = 2.0      # jump penalty
    alpha_s: float = 1.0      # stabilization-viscosity jump penalty
    bdf_order: int = 2
    theta: float = 0.0        # the nonsymmetric variant is the only one used

    def __post_init__(self):
        if not (0.0 < self.phi <= 1.0):
            raise ValueError(f"porosity must lie in (0, 1], got {self.phi}")
        if self.alpha_c <= 0.0:
            raise ValueError(f"penalty must be positive, got {self.alpha_c}")
        if self.alpha_s < 0.0:
            raise ValueError(f"stab penalty must be nonnegative, got {self.alpha_s}")
        if self.bdf_order not in (1, 2):
            raise ValueError(f"time stepping order must be 1 or 2, got {self.bdf_order}")
        if self.theta != 0.0:
            raise ValueError("only the theta = 0 transport form is implemented")
        if self.rho0 <= 0.0:
            raise ValueError(f"reference density must be positive, got {self.rho0}")


@dataclass(frozen=True)
class TransportBC:
    """Inflow concentration; faces classify as inflow/outflow by flux sign.

    c_in is a scalar, a callable f(x, y), or a per-side dict of either.
    A boundary face is inflow when its mean normal flux is negative.
    """

    c_in: object = 0.0

    def side_value(self, side: str):
        if isinstance(self.c_in, dict):
            return self.c_in.get(side, 0.0)
        return self.c_in


@dataclass(frozen=True)
class SourceField:
    """Volumetric source q (scalar, per-cell array, or callable) with injected
    concentration c_q; the sink side q^- removes fluid at the resident
    concentration and is folded into the system matrix."""

    q: object = 0.0
    c_q: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.c_q <= 1.0):
            raise ValueError(f"injected concentration must lie in [0,1], got {self.c_q}")


def upwind_value(C_plus, C_minus, U_dot_n_plus):
    """Upwind trace: the plus-side value where U.n+ < 0, else the minus side."""
    return np.where(np.asarray(U_dot_n_plus, dtype=float) < 0.0, C_plus, C_minus)


def source_split(q):
    """(q^+, q^-) = (max(0, q), min(0, q)); the parts sum back to q."""
    q = np.asarray(q, dtype=float)
    return np.maximum(q, 0.0), np.minimum(q, 0.0)


def assemble_transport(ctx: AssemblyContext, params: TransportParams,
                       bc: TransportBC, flux: FaceFlux, D_cells, mu_cells,
                       C_n, C_nm1=None, sources: SourceField = SourceField(),
                       dt: float = 1.0, m: int | None = None):
    """Assemble the concentration system in the full EG dof layout.

    D_cells: (n_cells, 2, 2) cellwise-constant dispersion (None for pure
    advection).  mu_cells: (n_cells,) cellwise stabilization viscosity (None
    to disable).  flux supplies both the face normal fluxes and the volume
    quadrature velocities.  Returns (A, b).
    """
    mesh, dm = ctx.mesh, ctx.dofmap
    m_eff = params.bdf_order if m is None else m
    a0, a1, a2 = bdf_coefficients(m_eff, dt)
    rho0, phi = params.rho0, params.phi
    mass_coef = phi * rho0

    if m_eff == 2 and C_nm1 is None:
        raise ValueError("second-order time stepping needs two history levels")
    nc = mesh.n_active
    if flux.face_un.shape != (mesh.n_faces, 3):
        raise ValueError(
            f"flux has {flux.face_un.shape[0]} faces, mesh has {mesh.n_faces}"
        )
    if D_cells is not None:
        D_cells = np.asarray(D_cells, dtype=float)
        if D_cells.shape != (nc, 2, 2):
            raise ValueError(f"dispersion must be ({nc}, 2, 2), got {D_cells.shape}")
    if mu_cells is not None:
        mu_cells = np.asarray(mu_cells, dtype=float)
        if mu_cells.shape != (nc,):
            raise ValueError(f"stab viscosity must be ({nc},), got {mu_cells.shape}")

    q_qp = cell_field_values(ctx, sources.q)
    qp_pos, qp_neg = source_split(q_qp)

    n = dm.n_dofs
    rows, cols, vals = [], [], []
    b = np.zeros(n)

    for g in ctx.cell_groups:
        mloc = np.einsum("q,qa,qb->ab", g.wq, g.N, g.N)
        contrib = (mass_coef * a0) * np.broadcast_to(
            mloc, (g.idx.size, 5, 5)
        ).copy()
        # volume advection  -(rho0 U C, grad v)
        U = flux.cell_velocity[g.idx]
        contrib -= rho0 * np.einsum("q,qad,mqd,qb->mab", g.wq, g.dN, U, g.N)
        if D_cells is not None:
            contrib += mass_coef * np.einsum(
                "q,qad,mde,qbe->mab", g.wq, g.dN, D_cells[g.idx], g.dN
            )
        if mu_cells is not None:
            kloc = np.einsum("q,qad,qbd->ab", g.wq, g.dN, g.dN)
            contrib += mu_cells[g.idx][:, None, None] * kloc[None]
        # sink at resident concentration, folded into the matrix
        contrib -= np.einsum("q,qa,qb,mq->mab", g.wq, g.N, g.N, qp_neg[g.idx])
        rows.append(np.broadcast_to(g.dofs[:, :, None], contrib.shape).ravel())
        cols.append(np.broadcast_to(g.dofs[:, None, :], contrib.shape).ravel())
        vals.append(contrib.ravel())

        hist = -a1 * C_n[g.dofs]
        if m_eff == 2:
            hist -= a2 * C_nm1[g.dofs]
        rhs = mass_coef * np.einsum("ab,mb->ma", mloc, hist)
        rhs += np.einsum("q,qa,mq->ma", g.wq, g.N, sources.c_q * qp_pos[g.idx])
        np.add.at(b, g.dofs.ravel(), rhs.ravel())

    mean_un = flux.mean_un
    for g in ctx.face_groups:
        un = flux.face_un[g.idx]                                # (m, 3)
        if g.nb is not None:
            No_pad = np.pad(g.N_o, ((0, 0), (0, 5)))
            Nn_pad = np.pad(g.N_n, ((0, 0), (5, 0)))
            jump = No_pad - Nn_pad                              # (3, 10)
            sel = upwind_value(Nn_pad[None], No_pad[None], un[:, :, None])
            contrib = rho0 * np.einsum("q,mq,qa,mqb->mab", g.wq, un, jump, sel)
            pen = (params.alpha_c / g.h_e) * rho0
            if mu_cells is not None:
                pen = pen + (params.alpha_s / g.h_e) * 0.5 * (
                    mu_cells[g.own] + mu_cells[g.nb]
                )
            pjj = np.einsum("q,qa,qb->ab", g.wq, jump, jump)
            contrib = contrib + np.asarray(pen)[..., None, None] * pjj[None]
            if D_cells is not None or mu_cells is not None:
                go = np.einsum("qbd,d->qb", g.dN_o, g.normal)
                gn = np.einsum("qbd,d->qb", g.dN_n, g.normal)
                go_pad = np.pad(go, ((0, 0), (0, 5)))
                gn_pad = np.pad(gn, ((0, 0), (5, 0)))
                G = np.zeros((g.idx.size, 3, 10))
                if D_cells is not None:
                    dno = np.einsum("d,mde,qbe->mqb", g.normal, D_cells[g.own], g.dN_o)
                    dnn = np.einsum("d,mde,qbe->mqb", g.normal, D_cells[g.nb], g.dN_n)
                    G += mass_coef * 0.5 * (
                        np.pad(dno, ((0, 0), (0, 0), (0, 5)))
                        + np.pad(dnn, ((0, 0), (0, 0), (5, 0)))
                    )
                if mu_cells is not None:
                    G += 0.5 * (
                        mu_cells[g.own][:, None, None] * go_pad[None]
                        + mu_cells[g.nb][:, None, None] * gn_pad[None]
                    )
                contrib -= np.einsum("q,qa,mqb->mab", g.wq, jump, G)
            dofs = g.dofs
            rows.append(np.broadcast_to(dofs[:, :, None], contrib.shape).ravel())
            cols.append(np.broadcast_to(dofs[:, None, :], contrib.shape).ravel())
            vals.append(contrib.ravel())
        else:
            out = mean_un[g.idx] >= 0.0
            if np.any(out):
                sl = np.nonzero(out)[0]
                contrib = rho0 * np.einsum(
                    "q,mq,qa,qb->mab", g.wq, un[sl], g.N_o, g.N_o
                )
                dofs = g.dofs[sl]
                rows.append(np.broadcast_to(dofs[:, :, None], contrib.shape).ravel())
                cols.append(np.broadcast_to(dofs[:, None, :], contrib.shape).ravel())
                vals.append(contrib.ravel())
            if np.any(~out):
                sl = np.nonzero(~out)[0]
                cin = face_field_values(g, bc.side_value(g.boundary))[sl]
                rhs = -rho0 * np.einsum("q,mq,mq,qa->ma", g.wq, un[sl], cin, g.N_o)
                np.add.at(b, g.dofs[sl].ravel(), rhs.ravel())

    A = scatter_csr(np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals), (n, n))
    return A, b


def solve_transport(dm, A, b, x0_full=None, tol: float = 1e-10,
                    restart: int = 100, max_iter: int = 2000) -> tuple[np.ndarray, GmresResult]:
    """Reduce by the hanging constraints, solve, and prolong back."""
    return solve_reduced(dm, A, b, x0_full=x0_full, tol=tol, restart=restart,
                         max_iter=max_iter)
