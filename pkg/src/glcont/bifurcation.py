"""Detection and precise location of bifurcation points.

Detection tracks the few smallest-magnitude Ritz values of the Jacobian
along a branch, pairing them across steps by eigenvector overlap.  Location
runs Newton on the extended system

    F(psi, mu) = 0,   J(psi, mu) phi = 0,   <i psi, phi> = 0,

whose unknowns are the singular point (psi_b, mu_b) and a unit kernel vector
phi.  Each Newton step is solved by block elimination: the two large rows
share the same (singular) core J, so their solvability conditions with
respect to the kernel produce a tiny dense system for (dmu, c) and the large
solves are deflated MINRES runs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg, model
from .errors import AmbiguousKernel, CollapsedToGauge, Diverged, InconsistentSystem, NoConvergence

# Symmetry-degenerate kernel pairs split at the ~1e-6 level because the
# located state carries noise along the near-null directions, so the kernel
# band must sit above that splitting.
KERNEL_TOL = 1e-5  # |theta| below this counts as kernel
AMBIGUOUS_TOL = 1e-4  # |theta| in (KERNEL_TOL, AMBIGUOUS_TOL) is undecidable


@dataclass
class NearBifConfig:
    k: int = 5
    eps1: float = 1e-4
    eps2: float = 1e-1

    def __post_init__(self):
        if not (0 < self.eps1 < self.eps2 < 1):
            raise ValueError("require 0 < eps1 < eps2 < 1")


@dataclass
class BifurcationPoint:
    state: model.State
    kernel: list
    kernel_dim: int
    kind: str  # "turning" | "branch_point"
    group_invariance: object = None
    jmu_kernel_overlap: float = 0.0
    origin_branch: int | None = None
    ident: int | None = None


def near_bifurcation_check(prev_pairs, curr_pairs, config, ip):
    """Definition-style near-bifurcation test on two consecutive Ritz
    snapshots.  Returns (flagged, index-into-curr or None).

    Pairs are matched greedily by eigenvector overlap |<v_prev, v_curr>|;
    thresholds are relative to the largest tracked |Ritz| so the test is
    scale-invariant.
    """
    if not curr_pairs:
        return False, None
    scale = max(
        max((abs(p.value) for p in curr_pairs), default=0.0),
        max((abs(p.value) for p in prev_pairs), default=0.0),
        1e-300,
    )
    # clause 1: a Ritz value already (numerically) zero
    for idx, p in enumerate(curr_pairs):
        if abs(p.value) < config.eps1 * scale:
            return True, idx
    # greedy overlap matching
    if prev_pairs:
        overlaps = np.zeros((len(prev_pairs), len(curr_pairs)))
        for i, pp in enumerate(prev_pairs):
            for j, cp in enumerate(curr_pairs):
                overlaps[i, j] = abs(ip.cdot(pp.vector, cp.vector))
        matched = []
        used_i, used_j = set(), set()
        order = np.dstack(np.unravel_index(np.argsort(-overlaps, axis=None), overlaps.shape))[0]
        for i, j in order:
            if i in used_i or j in used_j:
                continue
            used_i.add(i)
            used_j.add(j)
            matched.append((i, j))
        # leftovers (snapshot size mismatch) pair by value order
        rest_i = sorted(set(range(len(prev_pairs))) - used_i, key=lambda i: prev_pairs[i].value)
        rest_j = sorted(set(range(len(curr_pairs))) - used_j, key=lambda j: curr_pairs[j].value)
        matched += list(zip(rest_i, rest_j))
        for i, j in matched:
            a, b = prev_pairs[i].value, curr_pairs[j].value
            if a * b < 0 and abs(b) < config.eps2 * scale:
                return True, j
    return False, None


def _gauge_vector(psi, ip):
    g = 1j * psi
    n = ip.norm(g)
    return g / n if n > 1e-12 else None


def refine_kernel_vector(mesh, ip, state, phi, others=(), tol=1e-11, maxit=3000, precond=None):
    """Newton-refine an approximate null vector of J: solve the deflated
    correction equation J t = -J phi with {i psi, phi, others} projected out,
    then renormalize."""

    def j_op(x):
        return model.jacobian_psi_apply(mesh, state, x)

    guard = [v for v in ([_gauge_vector(state.psi, ip)] if _gauge_vector(state.psi, ip) is not None else [])]
    phi = phi / ip.norm(phi)
    for _ in range(4):
        defl = guard + [phi] + list(others)
        try:
            t, _ = linalg.minres(
                j_op, -j_op(phi), ip, precond=precond, deflation_space=defl, tol=tol, maxit=maxit
            )
        except (NoConvergence, InconsistentSystem):
            break
        phi = phi + t
        for v in guard + list(others):
            phi = phi - ip.dot(v, phi) * v
        phi = phi / ip.norm(phi)
        if ip.norm(j_op(phi)) <= 1e-10:
            break
    return phi


def locate_bifurcation(mesh, ip, guess, guess_null, tol=1e-9, maxit=40,
                       minres_tol=1e-12, minres_maxit=5000, preconditioner="jacobi"):
    """Newton iteration on the extended system; returns the converged
    (state, phi) pair.  Classification happens separately."""
    psi = guess.psi.astype(complex).copy()
    mu = float(guess.mu)
    phi = np.asarray(guess_null, dtype=complex).copy()
    phi = phi / ip.norm(phi)

    best = None
    for it in range(maxit):
        st = model.State(psi, mu)
        gauge = _gauge_vector(psi, ip)
        if gauge is not None:
            phi = phi - ip.dot(gauge, phi) * gauge
            phi = phi / ip.norm(phi)

        def j_op(x, st=st):
            return model.jacobian_psi_apply(mesh, st, x)

        f = model.residual(mesh, st)
        jphi = j_op(phi)
        res = max(ip.norm(f), ip.norm(jphi))
        if best is None or res < best[0]:
            best = (res, st, phi.copy())
        if res <= tol:
            break
        if best is not None and res > 1e4 * max(best[0], 1.0):
            raise Diverged("extended-system residual blew up (%.2e)" % res)

        jmu = model.jacobian_mu(mesh, st)
        precond = linalg.build_preconditioner(mesh, st, preconditioner, ip)
        defl = ([gauge] if gauge is not None else []) + [phi]

        def solve(rhs):
            x, _ = linalg.minres(
                j_op, rhs, ip, precond=precond, deflation_space=defl,
                tol=minres_tol, maxit=minres_maxit,
            )
            return x

        dpsi_a = solve(-f)
        dpsi_b = solve(-jmu)

        h = lambda a, b: model.hessian_psipsi_apply(st, a, b)
        kp_phi = model.hessian_psimu_apply(mesh, st, phi)
        r0 = -jphi - h(dpsi_a, phi)
        r1 = -(h(dpsi_b, phi) + kp_phi)
        r2 = -h(phi, phi)

        # solvability of both large rows w.r.t. the kernel vector phi
        m_small = np.array(
            [[ip.dot(phi, jmu), 0.0], [-ip.dot(phi, r1), -ip.dot(phi, r2)]]
        )
        rhs_small = np.array([-ip.dot(phi, f), ip.dot(phi, r0)])
        sol, *_ = np.linalg.lstsq(m_small, rhs_small, rcond=1e-10)
        dmu, c = float(sol[0]), float(sol[1])

        rhs_phi = r0 + dmu * r1 + c * r2
        try:
            dphi = solve(rhs_phi)
        except InconsistentSystem:
            dphi = np.zeros_like(phi)

        # damped update: halve the step while the extended residual grows
        step_psi = dpsi_a + dmu * dpsi_b + c * phi
        lam = 1.0
        for _ in range(8):
            psi_t = psi + lam * step_psi
            mu_t = mu + lam * dmu
            phi_t = phi + lam * dphi
            nrm = ip.norm(phi_t)
            if nrm < 1e-12:
                lam *= 0.5
                continue
            phi_t = phi_t / nrm
            st_t = model.State(psi_t, mu_t)
            res_t = max(
                ip.norm(model.residual(mesh, st_t)),
                ip.norm(model.jacobian_psi_apply(mesh, st_t, phi_t)),
            )
            if res_t < res or lam <= 1.0 / 128:
                break
            lam *= 0.5
        psi, mu, phi = psi_t, mu_t, phi_t
    else:
        if best[0] > 100 * tol:
            raise Diverged(
                "extended system did not converge (best residual %.2e)" % best[0]
            )
        _, st, phi = best
        psi, mu = st.psi, st.mu

    st = model.State(psi, mu)
    gauge = _gauge_vector(psi, ip)
    if gauge is not None and abs(ip.cdot(gauge, phi)) > 0.99:
        raise CollapsedToGauge("kernel vector collapsed onto the gauge mode")
    return st, phi


def kernel_and_dim(mesh, ip, state, hint=None, rng=None):
    """Orthonormal kernel basis (gauge excluded) at a located point.

    Ritz values with |theta| <= 1e-6 count as kernel; any value in the
    ambiguous band (1e-6, 1e-4) raises AmbiguousKernel so the caller can
    re-locate with a tighter tolerance.
    """
    gauge = _gauge_vector(state.psi, ip)
    guard = [gauge] if gauge is not None else []

    def j_op(x):
        return model.jacobian_psi_apply(mesh, state, x)

    pairs = linalg.lanczos_ritz(
        j_op, ip, k=6, exclude=guard, rng=rng, v0=hint,
        max_subspace=min(2 * mesh.n, 260),
    )
    null_pairs = [p for p in pairs if abs(p.value) <= KERNEL_TOL]
    amb = [p for p in pairs if KERNEL_TOL < abs(p.value) <= AMBIGUOUS_TOL]
    if amb:
        raise AmbiguousKernel(
            "Ritz values in the undecidable band: %s" % [p.value for p in amb]
        )
    precond = linalg.build_preconditioner(mesh, state, "jacobi", ip)
    kernel = []
    def j_op(x):
        return model.jacobian_psi_apply(mesh, state, x)

    for p in null_pairs:
        v = refine_kernel_vector(mesh, ip, state, p.vector, others=kernel, precond=precond)
        # Lanczos can return ghost duplicates inside a zero cluster; the
        # deflated refinement either converges onto a genuinely new null
        # direction or wanders off the kernel — keep only the former
        if ip.norm(j_op(v)) > KERNEL_TOL:
            continue
        for b in kernel:
            v = v - ip.dot(b, v) * b
        nrm = ip.norm(v)
        if nrm > 1e-3:
            kernel.append(v / nrm)
    if len(kernel) > 2:
        raise AmbiguousKernel("kernel dimension %d > 2 is out of scope" % len(kernel))
    return kernel


def classify(mesh, ip, state, kernel):
    """Turning point iff the kernel is 1-dimensional and J_mu has a
    component along it (J_mu not in the range of the self-adjoint J)."""
    jmu = model.jacobian_mu(mesh, state)
    jn = ip.norm(jmu)
    overlap = max((abs(ip.dot(phi, jmu)) for phi in kernel), default=0.0)
    if len(kernel) == 1 and overlap > 1e-6 * max(jn, 1e-300):
        kind = "turning"
    else:
        kind = "branch_point"
    return kind, overlap / max(jn, 1e-300)


def stability_of(ritz_pairs, tol=1e-6):
    """Stability from a (gauge-excluded) Ritz snapshot of J.  The gradient
    flow runs along -GL'(psi), so instability corresponds to a negative
    eigenvalue of J."""
    if not ritz_pairs:
        return "stable"
    return "unstable" if min(p.value for p in ritz_pairs) < -tol else "stable"
