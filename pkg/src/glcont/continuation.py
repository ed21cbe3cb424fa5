"""Pseudo-arclength predictor-corrector tracing of one solution branch.

The corrector solves the bordered Newton system

    J dpsi + J_mu dmu = -F
    <t_psi, dpsi> + t_mu dmu = -P

with the gauge direction i psi deflated from the core solve.  Tangents along
a branch are secant approximations, gauge-orthogonalized so the continuous
phase symmetry cannot flip the tracing direction.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg, model
from .errors import (
    MaxIterations,
    NewtonDiverged,
    NoConvergence,
    SingularBorder,
    StepSizeUnderflow,
    ZeroTangent,
)
from .symmetry import best_phase_alignment

log = logging.getLogger("glcont.continuation")


@dataclass
class ContinuationConfig:
    ds_initial: float = 0.05
    ds_min: float = 1e-6
    ds_max: float = 0.15
    newton_tol: float = 1e-10
    newton_maxit: int = 20
    max_steps: int = 600
    mu_range: tuple = (-0.1, 3.0)
    grow: float = 1.3
    shrink: float = 0.5
    minres_tol: float = 1e-12
    minres_maxit: int = 4000
    preconditioner: str = "jacobi"
    ritz_k: int = 5

    def __post_init__(self):
        if not (0 < self.ds_min <= self.ds_initial <= self.ds_max):
            raise ValueError("require 0 < ds_min <= ds_initial <= ds_max")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")


@dataclass
class Tangent:
    dpsi: np.ndarray
    dmu: float
    provenance: str = "secant"
    symmetry_label: str | None = None

    def flipped(self):
        return Tangent(-self.dpsi, -self.dmu, self.provenance, self.symmetry_label)


@dataclass
class BranchPointRecord:
    state: model.State
    tangent: Tangent
    energy: float
    stability: str
    ritz_snapshot: list
    newton_iters: int = 0
    ds: float = 0.0


def extended_norm(ip, dpsi, dmu):
    return float(np.sqrt(ip.dot(dpsi, dpsi) + dmu * dmu))


def gauge_project(ip, psi, dpsi):
    """Remove the i*psi component (the gauge direction) from dpsi."""
    g = 1j * psi
    gn = ip.norm(g)
    if gn < 1e-12:
        return dpsi
    g = g / gn
    return dpsi - ip.dot(g, dpsi) * g


def normalize_tangent(ip, psi, dpsi, dmu, orient_like=None):
    dpsi = gauge_project(ip, psi, dpsi)
    nrm = extended_norm(ip, dpsi, dmu)
    if nrm < 1e-14:
        raise ZeroTangent("tangent has (near-)zero extended norm")
    t = Tangent(dpsi / nrm, dmu / nrm)
    if orient_like is not None:
        if ip.dot(orient_like.dpsi, t.dpsi) + orient_like.dmu * t.dmu < 0:
            t = t.flipped()
    return t


def compute_tangent(prev, current, ip):
    """Secant tangent between the previous record and the current state,
    gauge-orthogonalized, normalized and oriented along the march."""
    dpsi = current.psi - prev.state.psi
    dmu = current.mu - prev.state.mu
    return normalize_tangent(ip, current.psi, dpsi, dmu, orient_like=prev.tangent)


def exact_tangent(mesh, ip, state, config=None, orient_like=None):
    """Tangent from the linearization at a regular point: solve
    J dpsi = -J_mu with dmu = 1 (used only where no secant exists)."""
    config = config or ContinuationConfig()
    jmu = model.jacobian_mu(mesh, state)
    guard = [1j * state.psi] if ip.norm(state.psi) > 1e-10 else []
    precond = linalg.build_preconditioner(mesh, state, config.preconditioner, ip)

    def j_op(x):
        return model.jacobian_psi_apply(mesh, state, x)

    dpsi, _ = linalg.minres(
        j_op, -jmu, ip, precond=precond, deflation_space=guard,
        tol=config.minres_tol, maxit=config.minres_maxit,
    )
    return normalize_tangent(ip, state.psi, dpsi, 1.0, orient_like=orient_like)


def correct(mesh, ip, predicted, tangent, config):
    """Newton-correct a predicted point onto the branch.

    Returns (state, newton_iters, minres_iters).  The pseudo-arclength
    constraint plane passes through `predicted` with normal `tangent`.
    """
    psi = predicted.psi.copy()
    mu = predicted.mu
    total_minres = 0
    prev_res = None
    for it in range(1, config.newton_maxit + 1):
        st = model.State(psi, mu)
        f = model.residual(mesh, st)
        p_constraint = ip.dot(tangent.dpsi, psi - predicted.psi) + tangent.dmu * (
            mu - predicted.mu
        )
        fn = ip.norm(f)
        if fn <= config.newton_tol and abs(p_constraint) <= config.newton_tol:
            return st, it - 1, total_minres
        if prev_res is not None and fn > 1e3 * max(prev_res, 1.0):
            raise NewtonDiverged("residual blew up at iteration %d (%.2e)" % (it, fn))
        prev_res = fn

        jmu = model.jacobian_mu(mesh, st)
        guard = [1j * psi] if ip.norm(psi) > 1e-10 else []
        precond = linalg.build_preconditioner(mesh, st, config.preconditioner, ip)

        def j_op(x, st=st):
            return model.jacobian_psi_apply(mesh, st, x)

        try:
            dpsi, (dmu,), stats = linalg.bordered_solve(
                j_op,
                border_cols=[jmu],
                border_rows=[tangent.dpsi],
                corner=[[tangent.dmu]],
                rhs_top=-f,
                rhs_bottom=[-p_constraint],
                null_guard=guard,
                ip=ip,
                precond=precond,
                tol=config.minres_tol,
                maxit=config.minres_maxit,
            )
        except NoConvergence as exc:
            raise NewtonDiverged("linear solve failed: %s" % exc) from exc
        total_minres += stats.iterations
        psi = psi + dpsi
        mu = mu + dmu
    raise MaxIterations("Newton did not converge in %d iterations" % config.newton_maxit)


def ritz_snapshot(mesh, ip, state, k=5, rng=None, max_subspace=None):
    guard = [1j * state.psi] if ip.norm(state.psi) > 1e-10 else []

    def j_op(x):
        return model.jacobian_psi_apply(mesh, state, x)

    return linalg.lanczos_ritz(
        j_op, ip, k=k, exclude=guard, rng=rng, max_subspace=max_subspace
    )


def stability_from_ritz(pairs, tol=1e-6):
    """The GL flow relaxes along -GL'(psi): a solution is unstable exactly
    when the (gauge-reduced) Jacobian has a negative eigenvalue."""
    if not pairs:
        return "stable"
    return "unstable" if min(p.value for p in pairs) < -tol else "stable"


def make_record(mesh, ip, state, tangent, config, newton_iters=0, ds=0.0, rng=None):
    pairs = ritz_snapshot(mesh, ip, state, k=config.ritz_k, rng=rng)
    return BranchPointRecord(
        state=state,
        tangent=tangent,
        energy=model.energy(mesh, state),
        stability=stability_from_ritz(pairs),
        ritz_snapshot=pairs,
        newton_iters=newton_iters,
        ds=ds,
    )


def _closure_candidate(ip, records, state, tangent, ds):
    """Index of an earlier record the trace has looped back onto, if any."""
    for i, rec in enumerate(records[:-8]):
        if abs(rec.state.mu - state.mu) > 0.75 * ds:
            continue
        if ip.norm(rec.state.psi) < 1e-10 and ip.norm(state.psi) < 1e-10:
            dist = 0.0
        elif ip.norm(rec.state.psi) < 1e-10 or ip.norm(state.psi) < 1e-10:
            continue
        else:
            _, dist = best_phase_alignment(state.psi, rec.state.psi, ip)
        if dist <= 0.75 * ds:
            ang = ip.dot(rec.tangent.dpsi, tangent.dpsi) + rec.tangent.dmu * tangent.dmu
            if ang > 0:
                return i
    return None


def trace_branch(mesh, ip, start, tangent, config, near_bif_callback=None, rng=None):
    """Trace a branch from a converged start along `tangent`.

    Returns (records, reason); reason is one of mu_range, max_steps,
    closed_loop, joined_zero, step_underflow.
    """
    rng = rng or np.random.default_rng(11)
    records = [make_record(mesh, ip, start, tangent, config, rng=rng)]
    zero_start = ip.norm(start.psi) < 1e-8
    ds = config.ds_initial
    streak = 0

    for step in range(1, config.max_steps + 1):
        cur = records[-1]
        accepted = None
        while accepted is None:
            pred = model.State(
                cur.state.psi + ds * cur.tangent.dpsi, cur.state.mu + ds * cur.tangent.dmu
            )
            try:
                st, its, minres_its = correct(mesh, ip, pred, cur.tangent, config)
                accepted = (st, its, minres_its)
            except (NewtonDiverged, MaxIterations, NoConvergence, SingularBorder):
                ds *= config.shrink
                streak = 0
                if ds < config.ds_min:
                    if len(records) > 1:
                        return records, "step_underflow"
                    raise StepSizeUnderflow(
                        "corrector keeps failing at the branch start (ds=%.2e)" % ds
                    )
        st, its, minres_its = accepted
        try:
            tang = compute_tangent(cur, st, ip)
        except ZeroTangent:
            ds *= config.shrink
            if ds < config.ds_min:
                return records, "step_underflow"
            continue
        rec = make_record(mesh, ip, st, tang, config, newton_iters=its, ds=ds, rng=rng)
        records.append(rec)
        minabs = min((abs(p.value) for p in rec.ritz_snapshot), default=float("nan"))
        log.info(
            "step=%d mu=%.6f energy=%.6f newton=%d minres=%d ds=%.3g min|ritz|=%.3g",
            step, st.mu, rec.energy, its, minres_its, ds, minabs,
        )
        if near_bif_callback is not None:
            near_bif_callback(records[-2], rec)

        if not (config.mu_range[0] <= st.mu <= config.mu_range[1]):
            return records, "mu_range"
        if not zero_start and ip.norm(st.psi) <= 1e-6:
            return records, "joined_zero"
        ci = _closure_candidate(ip, records, st, tang, max(ds, config.ds_initial))
        if ci is not None:
            return records, "closed_loop"

        streak = streak + 1 if its <= 4 else 0
        if streak >= 3:
            ds = min(ds * config.grow, config.ds_max)
            streak = 0
        # near a singular point distinct curves pass within a step of each
        # other; keep steps short there so the corrector cannot hop curves
        scale = max((abs(p.value) for p in rec.ritz_snapshot), default=1.0)
        if np.isfinite(minabs) and minabs < 0.02 * scale:
            ds = min(ds, max(config.ds_min, 0.5 * config.ds_initial))
            streak = 0
    return records, "max_steps"
