"""Automatic exploration of the connected solution landscape.

A work queue of branch seeds drives the loop: trace the branch through its
whole extent, flag near-singular steps along the way, locate and classify
each flagged bifurcation, build the emerging-branch tangents there, and
enqueue every new direction.  Branches reachable from already-known ones
through a symmetry action or a phase rotation are recognized by a probe
correction and dropped, so the final diagram holds one representative per
equivalence class of solution curves.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bifurcation, continuation, model, tangents
from .errors import GLContError
from .symmetry import (
    GroupSpec,
    apply_action,
    best_phase_alignment,
    detect_invariance,
    group_average,
)

log = logging.getLogger("glcont.explorer")


@dataclass
class ExplorerConfig:
    continuation: continuation.ContinuationConfig = field(
        default_factory=continuation.ContinuationConfig
    )
    tangent: tangents.TangentConfig = field(default_factory=tangents.TangentConfig)
    near_bif: bifurcation.NearBifConfig = field(default_factory=bifurcation.NearBifConfig)
    group: GroupSpec | None = None
    max_branches: int = 200
    wall_clock: float | None = None  # seconds; None = unlimited
    switch_step: float = 0.05  # arclength step off a branch point
    flag_separation: float = 0.04  # min mu gap between flags on one trace
    bp_merge_mu_tol: float = 5e-3
    bp_merge_state_tol: float = 1e-3
    probe_match_factor: float = 100.0  # x newton_tol for branch equivalence
    seed: int = 11

    def snapshot(self):
        d = {
            "continuation": asdict(self.continuation),
            "tangent": asdict(self.tangent),
            "near_bif": asdict(self.near_bif),
            "group": None if self.group is None else {"kind": self.group.kind, "m": self.group.m},
            "max_branches": self.max_branches,
            "wall_clock": self.wall_clock,
            "switch_step": self.switch_step,
            "flag_separation": self.flag_separation,
            "bp_merge_mu_tol": self.bp_merge_mu_tol,
            "bp_merge_state_tol": self.bp_merge_state_tol,
            "probe_match_factor": self.probe_match_factor,
            "seed": self.seed,
        }
        return d


@dataclass
class BranchSeed:
    state: model.State
    tangent: continuation.Tangent
    origin_bp: int | None = None  # bifurcation point this seed emerges from
    bidirectional: bool = True
    label: str = "seed"


@dataclass
class Branch:
    ident: int
    records: list
    reasons: tuple  # (backward, forward) termination reasons
    bifurcation_ids: list = field(default_factory=list)
    symmetry: str | None = None
    origin_bp: int | None = None
    flags: list = field(default_factory=list)  # continuity warnings etc.

    @property
    def is_zero(self):
        mid = self.records[len(self.records) // 2]
        return bool(np.max(np.abs(mid.state.psi)) < 1e-8)

    def mu_span(self):
        mus = [r.state.mu for r in self.records]
        return min(mus), max(mus)


@dataclass
class Diagram:
    branches: list = field(default_factory=list)
    bifurcation_points: list = field(default_factory=list)
    adjacency: dict = field(default_factory=dict)  # bp ident -> [branch idents]
    config_snapshot: dict = field(default_factory=dict)
    complete: bool = True
    notes: list = field(default_factory=list)


def _config_hash(snapshot):
    blob = json.dumps(snapshot, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _group_elements(group):
    from .symmetry import identity_element

    if group is None:
        return [identity_element()]
    return group.elements()


def _state_distance(mesh, ip, group, psi_a, psi_b):
    """Smallest aligned distance between two fields modulo global phase and
    the declared group actions."""
    na, nb = ip.norm(psi_a), ip.norm(psi_b)
    if na < 1e-10 or nb < 1e-10:
        return abs(na - nb)
    best = None
    for g in _group_elements(group):
        gp = apply_action(g, psi_a, mesh)
        _, res = best_phase_alignment(gp, psi_b, ip)
        best = res if best is None else min(best, res)
    return best


def branch_equivalence(mesh, ip, probe, diagram, config):
    """Match a probe state against the existing branches; returns the matched
    branch ident or None.

    The nearest record (in mu) of each candidate branch is Newton-corrected
    to the probe's exact mu, and the corrected states are compared modulo
    global phase and group actions.
    """
    ccfg = config.continuation
    tol = config.probe_match_factor * ccfg.newton_tol
    pn = ip.norm(probe.psi)
    for br in diagram.branches:
        if pn < 1e-8:
            if br.is_zero:
                lo, hi = br.mu_span()
                if lo - 2 * ccfg.ds_max <= probe.mu <= hi + 2 * ccfg.ds_max:
                    return br.ident
            continue
        # a folded branch has several sheets at the probe's mu: compare one
        # record per sheet (the local minima of |mu - mu_probe|)
        dist_mu = [abs(r.state.mu - probe.mu) for r in br.records]
        m = len(dist_mu)
        cand = [
            i for i in range(m)
            if dist_mu[i] <= 2.0 * ccfg.ds_max
            and (i == 0 or dist_mu[i] <= dist_mu[i - 1])
            and (i == m - 1 or dist_mu[i] <= dist_mu[i + 1])
        ]
        pe = model.energy(mesh, probe)
        matched = False
        for i in cand[:8]:
            rec = br.records[i]
            if abs(rec.energy - pe) > 0.05 * (1.0 + abs(pe)) + 0.5 * dist_mu[i]:
                continue
            # correct the record to the probe's mu (fixed-mu Newton)
            fixmu = continuation.Tangent(np.zeros(mesh.n, dtype=complex), 1.0)
            pred = model.State(rec.state.psi.copy(), probe.mu)
            try:
                st, _, _ = continuation.correct(mesh, ip, pred, fixmu, ccfg)
            except GLContError:
                continue
            dist = _state_distance(mesh, ip, config.group, st.psi, probe.psi)
            if dist <= max(tol, 1e-7) * max(1.0, pn):
                matched = True
                break
        if matched:
            return br.ident
    return None


def _match_bifurcation(mesh, ip, diagram, config, state):
    for bp in diagram.bifurcation_points:
        if abs(bp.state.mu - state.mu) > config.bp_merge_mu_tol:
            continue
        dist = _state_distance(mesh, ip, config.group, bp.state.psi, state.psi)
        if dist <= config.bp_merge_state_tol * max(1.0, ip.norm(state.psi)):
            return bp
    return None


def _trace_with_flags(mesh, ip, start, tangent, config, rng):
    """One directed trace; returns (records, reason, flags) where each flag
    is (record, ritz_index)."""
    flags = []

    def cb(prev, cur):
        hit, idx = bifurcation.near_bifurcation_check(
            prev.ritz_snapshot, cur.ritz_snapshot, config.near_bif, ip
        )
        if hit:
            if flags and abs(cur.state.mu - flags[-1][0].state.mu) < config.flag_separation:
                return
            flags.append((cur, idx))

    records, reason = continuation.trace_branch(
        mesh, ip, start, tangent, config.continuation, near_bif_callback=cb, rng=rng
    )
    return records, reason, flags


def _step_onto(mesh, ip, bp_state, tangent, config):
    """Correct one arclength step away from a branch point along a tangent;
    returns the converged state or None."""
    s = config.switch_step
    for _ in range(4):
        pred = model.State(bp_state.psi + s * tangent.dpsi, bp_state.mu + s * tangent.dmu)
        try:
            st, _, _ = continuation.correct(
                mesh, ip, pred, continuation.Tangent(tangent.dpsi, tangent.dmu),
                config.continuation,
            )
            return st
        except GLContError:
            s *= 0.5
    return None


def _check_continuity(branch, config):
    ds_max = config.continuation.ds_max
    for i in range(1, len(branch.records)):
        a, b = branch.records[i - 1], branch.records[i]
        jump = float(np.hypot(b.state.mu - a.state.mu, b.energy - a.energy))
        if jump > 10.0 * ds_max:
            branch.flags.append("jump@%d" % i)


def _build_branch(mesh, ip, ident, seed, config, rng):
    """Trace a seed in both directions and merge into one ordered branch."""
    fw_records, fw_reason, fw_flags = _trace_with_flags(
        mesh, ip, seed.state, seed.tangent, config, rng
    )
    bw_records, bw_reason, bw_flags = [], "skipped", []
    if seed.bidirectional:
        try:
            bw_records, bw_reason, bw_flags = _trace_with_flags(
                mesh, ip, seed.state, seed.tangent.flipped(), config, rng
            )
        except GLContError as exc:
            log.warning("backward trace of branch %d failed: %s", ident, exc)
            bw_reason = "failed"

    merged = []
    for rec in reversed(bw_records[1:]):
        rec.tangent = rec.tangent.flipped()
        merged.append(rec)
    merged.extend(fw_records)
    branch = Branch(
        ident=ident,
        records=merged,
        reasons=(bw_reason, fw_reason),
        origin_bp=seed.origin_bp,
    )
    _check_continuity(branch, config)
    return branch, fw_flags + bw_flags


def _handle_flag(mesh, ip, diagram, config, branch, flag_record, ritz_idx, next_bp_id):
    """Locate/classify the bifurcation behind one flag; returns the
    (possibly pre-existing) BifurcationPoint plus a list of new seeds."""
    guess_null = flag_record.ritz_snapshot[ritz_idx].vector
    st_b, phi = bifurcation.locate_bifurcation(mesh, ip, flag_record.state, guess_null)
    lo, hi = config.continuation.mu_range
    margin = config.continuation.ds_max
    if not (lo - margin <= st_b.mu <= hi + margin):
        raise GLContError(
            "located point mu=%.4f left the exploration window" % st_b.mu
        )
    if config.group is not None and ip.norm(st_b.psi) > 1e-10:
        psi_avg, _ = group_average(st_b.psi, mesh, config.group, ip)
        st_b = model.State(psi_avg, st_b.mu)

    existing = _match_bifurcation(mesh, ip, diagram, config, st_b)
    if existing is not None:
        return existing, []

    kernel = bifurcation.kernel_and_dim(mesh, ip, st_b, hint=phi)
    if not kernel:
        raise GLContError("located state has an empty (non-gauge) kernel")
    kind, overlap = bifurcation.classify(mesh, ip, st_b, kernel)
    sub = None
    if config.group is not None:
        sub = detect_invariance(st_b.psi, mesh, config.group, ip)
    bp = bifurcation.BifurcationPoint(
        state=st_b,
        kernel=kernel,
        kernel_dim=len(kernel),
        kind=kind,
        group_invariance=sub,
        jmu_kernel_overlap=overlap,
        origin_branch=branch.ident,
        ident=next_bp_id,
    )
    diagram.bifurcation_points.append(bp)
    diagram.adjacency[bp.ident] = []

    seeds = []
    if kind == "branch_point":
        try:
            _, dirs = tangents.emerging_tangents(mesh, ip, bp, group=config.group,
                                                 config=config.tangent)
        except GLContError as exc:
            log.warning("tangent construction failed at mu=%.5f: %s", st_b.mu, exc)
            diagram.notes.append("unresolved tangents at bp %d (mu=%.5f): %s"
                                 % (bp.ident, st_b.mu, exc))
            dirs = []
        for t in dirs:
            if t.provenance == "through":
                continue
            st0 = _step_onto(mesh, ip, st_b, t, config)
            if st0 is None:
                log.warning("branch switch failed at bp %d along %s", bp.ident, t.provenance)
                diagram.notes.append("switch failed at bp %d" % bp.ident)
                continue
            seeds.append(
                BranchSeed(
                    state=st0,
                    tangent=continuation.Tangent(t.dpsi, t.dmu, provenance=t.provenance,
                                                 symmetry_label=t.symmetry_label),
                    origin_bp=bp.ident,
                    label=t.provenance,
                )
            )
    return bp, seeds


def explore(mesh, ip, seed_state, config=None, seed_tangent=None):
    """Breadth-first exploration of every solution curve connected to the
    seed; returns the assembled Diagram."""
    config = config or ExplorerConfig()
    rng = np.random.default_rng(config.seed)
    t_start = time.monotonic()
    diagram = Diagram(config_snapshot=config.snapshot())

    if seed_tangent is None:
        seed_tangent = continuation.Tangent(np.zeros(mesh.n, dtype=complex), 1.0)
    queue = deque([BranchSeed(seed_state, seed_tangent, label="root")])
    next_branch = 0
    next_bp = 0
    zero_enqueued = ip.norm(seed_state.psi) < 1e-8

    while queue:
        if len(diagram.branches) >= config.max_branches:
            diagram.complete = False
            diagram.notes.append("max_branches budget reached with %d seeds pending"
                                 % len(queue))
            break
        if config.wall_clock is not None and time.monotonic() - t_start > config.wall_clock:
            diagram.complete = False
            diagram.notes.append("wall-clock budget reached with %d seeds pending"
                                 % len(queue))
            break

        seed = queue.popleft()
        matched = branch_equivalence(mesh, ip, seed.state, diagram, config)
        if matched is not None:
            log.info("seed (%s) matches branch %d; dropped", seed.label, matched)
            if seed.origin_bp is not None:
                diagram.adjacency.setdefault(seed.origin_bp, []).append(matched)
            continue

        try:
            branch, flags = _build_branch(mesh, ip, next_branch, seed, config, rng)
        except GLContError as exc:
            log.warning("trace of seed (%s) failed: %s", seed.label, exc)
            diagram.notes.append("trace failed: %s" % exc)
            continue
        next_branch += 1
        diagram.branches.append(branch)
        if config.group is not None and not branch.is_zero:
            mid = branch.records[len(branch.records) // 2]
            branch.symmetry = detect_invariance(mid.state.psi, mesh, config.group, ip).word()
        if seed.origin_bp is not None:
            # the new curve passes through its parent point (both rays)
            branch.bifurcation_ids.append(seed.origin_bp)
            diagram.adjacency.setdefault(seed.origin_bp, []).extend([branch.ident] * 2)
        log.info(
            "branch %d (%s): %d records, mu span [%.3f, %.3f], reasons %s",
            branch.ident, seed.label, len(branch.records), *branch.mu_span(),
            branch.reasons,
        )

        if not zero_enqueued and "joined_zero" in branch.reasons:
            end = branch.records[-1] if branch.reasons[1] == "joined_zero" else branch.records[0]
            queue.append(
                BranchSeed(
                    state=model.State(np.zeros(mesh.n, dtype=complex), end.state.mu),
                    tangent=continuation.Tangent(np.zeros(mesh.n, dtype=complex), 1.0),
                    label="zero",
                )
            )
            zero_enqueued = True

        for rec, idx in flags:
            try:
                bp, new_seeds = _handle_flag(
                    mesh, ip, diagram, config, branch, rec, idx, next_bp
                )
            except GLContError as exc:
                log.warning("bifurcation handling failed near mu=%.4f: %s",
                            rec.state.mu, exc)
                diagram.notes.append("flag near mu=%.4f unhandled: %s" % (rec.state.mu, exc))
                continue
            if bp.ident == next_bp:
                next_bp += 1
                log.info("bifurcation %d: mu=%.5f kind=%s dim=%d inv=%s",
                         bp.ident, bp.state.mu, bp.kind, bp.kernel_dim,
                         bp.group_invariance.word() if bp.group_invariance else "-")
            if bp.ident not in branch.bifurcation_ids:
                branch.bifurcation_ids.append(bp.ident)
                # through-branch incidence counts both directions
                diagram.adjacency.setdefault(bp.ident, []).extend([branch.ident] * 2)
            queue.extend(new_seeds)

    return diagram


# -- serialization ------------------------------------------------------------


def _min_abs_ritz(rec):
    return min((abs(p.value) for p in rec.ritz_snapshot), default=float("nan"))


def diagram_export(diagram, outdir, mesh=None):
    """Write the diagram as plain data: per-branch CSV, bifurcation table,
    adjacency JSON, one representative state file per branch, and the config
    snapshot.  Every file carries the config hash."""
    os.makedirs(outdir, exist_ok=True)
    os.makedirs(os.path.join(outdir, "branches"), exist_ok=True)
    os.makedirs(os.path.join(outdir, "states"), exist_ok=True)
    chash = _config_hash(diagram.config_snapshot)

    for br in diagram.branches:
        path = os.path.join(outdir, "branches", "branch_%03d.csv" % br.ident)
        with open(path, "w") as f:
            f.write("# config_hash=%s\n" % chash)
            f.write("step,mu,energy,stability,newton_its,min_abs_ritz\n")
            for i, rec in enumerate(br.records):
                f.write("%d,%r,%r,%s,%d,%r\n" % (
                    i, rec.state.mu, rec.energy, rec.stability,
                    rec.newton_iters, _min_abs_ritz(rec),
                ))

    with open(os.path.join(outdir, "bifurcations.csv"), "w") as f:
        f.write("# config_hash=%s\n" % chash)
        f.write("id,mu,kind,kernel_dim,branch_ids\n")
        for bp in diagram.bifurcation_points:
            incident = diagram.adjacency.get(bp.ident, [])
            f.write("%d,%r,%s,%d,%s\n" % (
                bp.ident, bp.state.mu, bp.kind, bp.kernel_dim,
                ";".join(str(b) for b in incident),
            ))

    meta = {
        "config_hash": chash,
        "complete": diagram.complete,
        "notes": diagram.notes,
        "adjacency": {str(k): v for k, v in diagram.adjacency.items()},
        "branches": {
            str(br.ident): {
                "reasons": list(br.reasons),
                "symmetry": br.symmetry,
                "origin_bp": br.origin_bp,
                "bifurcation_ids": br.bifurcation_ids,
                "is_zero": br.is_zero,
                "flags": br.flags,
            }
            for br in diagram.branches
        },
    }
    with open(os.path.join(outdir, "adjacency.json"), "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    with open(os.path.join(outdir, "config.json"), "w") as f:
        json.dump({"config_hash": chash, "snapshot": diagram.config_snapshot},
                  f, indent=1, sort_keys=True, default=str)

    if mesh is not None:
        for br in diagram.branches:
            rec = br.records[len(br.records) // 2]
            model.save_state(
                rec.state, mesh,
                os.path.join(outdir, "states", "branch_%03d_rep.json" % br.ident),
            )


def diagram_load(outdir):
    """Read back the exported floating-point data (CSV round-trip check and
    downstream analysis); returns a plain dict, not a Diagram."""
    out = {"branches": {}, "bifurcations": []}
    bdir = os.path.join(outdir, "branches")
    for name in sorted(os.listdir(bdir)):
        ident = int(name.split("_")[1].split(".")[0])
        rows = []
        with open(os.path.join(bdir, name)) as f:
            for line in f:
                if line.startswith("#") or line.startswith("step,"):
                    continue
                step, mu, en, stab, its, mar = line.strip().split(",")
                rows.append({
                    "step": int(step), "mu": float(mu), "energy": float(en),
                    "stability": stab, "newton_its": int(its),
                    "min_abs_ritz": float(mar),
                })
        out["branches"][ident] = rows
    with open(os.path.join(outdir, "bifurcations.csv")) as f:
        for line in f:
            if line.startswith("#") or line.startswith("id,"):
                continue
            ident, mu, kind, dim, bids = line.strip().split(",")
            out["bifurcations"].append({
                "id": int(ident), "mu": float(mu), "kind": kind,
                "kernel_dim": int(dim),
                "branch_ids": [int(b) for b in bids.split(";") if b != ""],
            })
    with open(os.path.join(outdir, "adjacency.json")) as f:
        out["meta"] = json.load(f)
    return out
