"""Symmetric logarithmic derivatives, Helstrom and Fisher information, bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matkit
from .errors import InvalidProjectorError, SingularModelError, SingularOutcomeError
from .matkit import dagger
from .quantum import refine_to_rank1, tensor_power_state

SUPPORT_FLOOR = 1e-12
LEAK_TOL = 1e-9
PROB_FLOOR = 1e-14
BOUND_TOL = 1e-9


def sld(rho, drho, floor=SUPPORT_FLOOR):
    """Solve ``drho = (L rho + rho L) / 2`` for Hermitian ``L``.

    Works in the eigenbasis of ``rho``: ``L_kl = 2 drho_kl / (p_k + p_l)``.
    Entries on the joint null space are set to zero; a derivative component
    there larger than 1e-9 means the model leaves the support.
    """
    p, v = matkit.eig_hermitian(rho)
    d = dagger(v) @ drho @ v
    denom = p[:, None] + p[None, :]
    live = denom > floor
    leak = np.abs(d[~live])
    if leak.size and leak.max() > LEAK_TOL:
        raise SingularModelError(
            f"derivative has weight {leak.max():.3g} outside the support of rho"
        )
    lam = np.zeros_like(d)
    lam[live] = 2.0 * d[live] / denom[live]
    out = v @ lam @ dagger(v)
    return 0.5 * (out + dagger(out))


def sld_set(model, theta):
    rho, drho = model.state(theta)
    return [sld(rho, dr) for dr in drho]


def helstrom_from_slds(rho, lambdas):
    """``H_ij = tr rho (L_i L_j + L_j L_i) / 2`` as a real symmetric matrix."""
    lam = np.array(lambdas)
    # Re tr(rho L_i L_j) equals the symmetrized trace for Hermitian operands
    h = np.real(np.einsum("ab,ibc,jca->ij", rho, lam, lam))
    return 0.5 * (h + h.T)


def helstrom_matrix(model, theta):
    rho, drho = model.state(theta)
    return helstrom_from_slds(rho, [sld(rho, dr) for dr in drho])


def fisher_from_state(povm, rho, drho):
    """Classical Fisher matrix of ``povm`` for a state and its derivatives."""
    m = povm.stack()
    p = np.real(np.einsum("kij,ji->k", m, rho))
    a = np.real(np.einsum("kij,nji->kn", m, np.array(drho)))
    dead = p <= PROB_FLOOR
    if np.any(dead):
        worst = np.abs(a[dead]).max() if a[dead].size else 0.0
        if worst > LEAK_TOL:
            raise SingularOutcomeError(
                f"an outcome with probability <= {PROB_FLOOR:g} has slope {worst:.3g}"
            )
    a, p = a[~dead], p[~dead]
    out = (a / p[:, None]).T @ a
    return 0.5 * (out + out.T)


def fisher_information(povm, model, theta, n=1):
    """``I_ij = sum_xi tr(rho_,i M) tr(rho_,j M) / tr(rho M)`` on ``n`` copies.

    The ``n``-copy state and derivatives are built explicitly, so entangled
    POVMs are handled the same way as product ones.
    """
    rho_n, drho_n = tensor_power_state(model, theta, n)
    if povm.dim != rho_n.shape[0]:
        raise ValueError(f"POVM acts on dimension {povm.dim}, state has {rho_n.shape[0]}")
    return fisher_from_state(povm, rho_n, drho_n)


def gill_massar_trace(h, fisher):
    """``tr(H^{-1} I)``; raises on singular ``H``."""
    return float(np.trace(matkit.inv_psd(h) @ fisher))


def helstrom_bound_check(fisher, h, n=1):
    """Check ``I <= n H``; returns ``(holds, min_eig(nH - I))``."""
    gap = n * np.asarray(h) - np.asarray(fisher)
    m = matkit.min_eig(0.5 * (gap + gap.T))
    return m >= -BOUND_TOL, m


@dataclass(frozen=True)
class PartialTraceResult:
    lhs: float
    bound: float
    effective_dim: int

    @property
    def holds(self):
        return self.lhs <= self.bound + BOUND_TOL


def partial_trace_bound(model, theta, subset, projector, povm, n=1, tol=1e-10):
    """Partial-trace bound over a parameter subset acting inside ``projector``.

    ``lhs = tr(H_S^{-1} I_S)`` where ``H_S`` and ``I_S`` are the subset blocks;
    ``bound = n (tr(Pi) - 1)``.
    """
    subset = list(subset)
    pi = np.asarray(projector, dtype=complex)
    rho, drho = model.state(theta)
    if np.max(np.abs(pi - dagger(pi))) > tol or np.max(np.abs(pi @ pi - pi)) > tol:
        raise InvalidProjectorError("argument is not an orthogonal projector")
    if np.max(np.abs(pi @ rho - rho @ pi)) > tol:
        raise InvalidProjectorError("projector does not commute with rho")
    for i in subset:
        if np.max(np.abs(pi @ drho[i] @ pi - drho[i])) > tol:
            raise InvalidProjectorError(f"derivative {i} acts outside the projector range")
    h = helstrom_matrix(model, theta)
    fi = fisher_information(povm, model, theta, n)
    idx = np.ix_(subset, subset)
    lhs = gill_massar_trace(h[idx], fi[idx])
    d_eff = int(round(np.real(np.trace(pi))))
    return PartialTraceResult(lhs, float(n * (d_eff - 1)), d_eff)


def refinement_monotonicity_check(povm, model, theta, n=1):
    """Fisher information before and after rank-1 refinement, and whether it grew."""
    before = fisher_information(povm, model, theta, n)
    after = fisher_information(refine_to_rank1(povm), model, theta, n)
    diff = after - before
    holds = matkit.min_eig(0.5 * (diff + diff.T)) >= -BOUND_TOL
    return before, after, holds
