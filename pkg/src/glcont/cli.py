"""Command-line interface: mesh generation, single-branch tracing, and full
landscape exploration, driven by one JSON configuration file.

Exit codes: 0 success, 2 configuration error, 3 budget exhausted (partial
results kept), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import bifurcation, continuation, explorer, linalg, mesh as meshmod, model, tangents
from .errors import GLContError
from .symmetry import GroupSpec

log = logging.getLogger("glcont.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_NUMERICAL = 4

_DEFAULT_SYMMETRY = {"triangle": ("D", 3), "square": ("D", 4), "star4": ("C", 4)}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    domain: meshmod.DomainSpec
    group: GroupSpec | None
    continuation: continuation.ContinuationConfig
    tangent: tangents.TangentConfig
    near_bif: bifurcation.NearBifConfig
    output_dir: str = "out"
    unweighted_ip: bool = False
    seed: int = 11
    max_branches: int = 200
    wall_clock: float | None = None

    def explorer_config(self):
        return explorer.ExplorerConfig(
            continuation=self.continuation,
            tangent=self.tangent,
            near_bif=self.near_bif,
            group=self.group,
            max_branches=self.max_branches,
            wall_clock=self.wall_clock,
            seed=self.seed,
        )


def _sub_config(cls, data, name):
    data = data or {}
    valid = {f.name for f in fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError("unknown %s option(s): %s" % (name, ", ".join(sorted(unknown))))
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid %s config: %s" % (name, exc)) from exc


def _domain_spec(data):
    if not isinstance(data, dict) or "shape" not in data:
        raise ConfigError("config must contain domain.shape")
    shape = data["shape"]
    h = data.get("h")
    if h is None or h <= 0:
        raise ConfigError("domain.h must be a positive edge length")
    try:
        if shape == "triangle":
            return meshmod.DomainSpec.triangle(float(data["side"]), h)
        if shape == "square":
            return meshmod.DomainSpec.square(float(data["side"]), h)
        if shape == "star4":
            ro = float(data.get("outer_radius", np.sqrt(10.0)))
            ri = float(data.get("inner_radius", np.sqrt(2.0)))
            return meshmod.DomainSpec.star4(ro, ri, h)
        if shape == "polygon":
            return meshmod.DomainSpec.polygon(
                [tuple(map(float, v)) for v in data["vertices"]], h
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("invalid domain for shape %r: %s" % (shape, exc)) from exc
    raise ConfigError("unknown domain shape %r" % shape)


def load_config(path):
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config %s is not valid JSON (line %d)" % (path, exc.lineno)) from exc

    spec = _domain_spec(data.get("domain"))
    sym = data.get("symmetry")
    if sym is None:
        default = _DEFAULT_SYMMETRY.get(data["domain"]["shape"])
        group = GroupSpec(*default) if default else None
    elif sym is False:
        group = None
    else:
        try:
            group = GroupSpec(sym["kind"], int(sym["m"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("invalid symmetry descriptor: %s" % exc) from exc

    return RunConfig(
        domain=spec,
        group=group,
        continuation=_sub_config(
            continuation.ContinuationConfig, data.get("continuation"), "continuation"
        ),
        tangent=_sub_config(tangents.TangentConfig, data.get("tangent"), "tangent"),
        near_bif=_sub_config(bifurcation.NearBifConfig, data.get("near_bif"), "near_bif"),
        output_dir=data.get("output_dir", "out"),
        unweighted_ip=bool(data.get("unweighted_ip", False)),
        seed=int(data.get("seed", 11)),
        max_branches=int(data.get("max_branches", 200)),
        wall_clock=data.get("wall_clock"),
    )


def _setup(cfg):
    mesh = meshmod.build_mesh(cfg.domain)
    ip = linalg.InnerProduct.for_mesh(mesh, unweighted=cfg.unweighted_ip)
    return mesh, ip


def cmd_mesh(cfg, args):
    mesh, _ = _setup(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "mesh.json")
    mesh.save(path)
    print("nodes: %d" % mesh.n)
    print("triangles: %d" % len(mesh.triangles))
    print("obtuse fraction: %.4f" % mesh.obtuse_triangle_fraction)
    print("area: %.6f" % mesh.domain_area)
    print("mesh written to %s" % path)
    return EXIT_OK


def _seed_state(cfg, mesh, path):
    if path:
        return model.load_state(path, mesh)
    return model.State(np.ones(mesh.n, dtype=complex), 0.0)


def cmd_trace(cfg, args):
    mesh, ip = _setup(cfg)
    start = _seed_state(cfg, mesh, args.start)
    tangent = continuation.Tangent(np.zeros(mesh.n, dtype=complex), 1.0)
    if args.tangent:
        tstate = model.load_state(args.tangent, mesh)
        tangent = continuation.normalize_tangent(ip, start.psi, tstate.psi, tstate.mu)
    os.makedirs(cfg.output_dir, exist_ok=True)

    flags = []

    def cb(prev, cur):
        hit, idx = bifurcation.near_bifurcation_check(
            prev.ritz_snapshot, cur.ritz_snapshot, cfg.near_bif, ip
        )
        if hit and (not flags or abs(cur.state.mu - flags[-1]) > 0.04):
            flags.append(cur.state.mu)
            log.info("near-bifurcation flag at mu=%.5f", cur.state.mu)

    rng = np.random.default_rng(cfg.seed)
    try:
        records, reason = continuation.trace_branch(
            mesh, ip, start, tangent, cfg.continuation, near_bif_callback=cb, rng=rng
        )
    except GLContError as exc:
        print("trace failed: %s" % exc, file=sys.stderr)
        model.save_state(start, mesh, os.path.join(cfg.output_dir, "last_good.json"))
        return EXIT_NUMERICAL

    path = os.path.join(cfg.output_dir, "branch.csv")
    with open(path, "w") as f:
        f.write("step,mu,energy,stability,newton_its,min_abs_ritz\n")
        for i, rec in enumerate(records):
            mar = min((abs(p.value) for p in rec.ritz_snapshot), default=float("nan"))
            f.write("%d,%r,%r,%s,%d,%r\n" % (
                i, rec.state.mu, rec.energy, rec.stability, rec.newton_iters, mar))
    model.save_state(records[-1].state, mesh, os.path.join(cfg.output_dir, "end_state.json"))
    print("traced %d points, terminated by %s; flags at %s" % (
        len(records), reason, ["%.4f" % m for m in flags]))
    print("branch written to %s" % path)
    return EXIT_OK


def cmd_explore(cfg, args):
    mesh, ip = _setup(cfg)
    start = _seed_state(cfg, mesh, args.start)
    ecfg = cfg.explorer_config()
    try:
        diagram = explorer.explore(mesh, ip, start, ecfg)
    except GLContError as exc:
        print("exploration failed: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL
    explorer.diagram_export(diagram, cfg.output_dir, mesh)
    print("branches: %d" % len(diagram.branches))
    print("bifurcation points: %d" % len(diagram.bifurcation_points))
    print("complete: %s" % diagram.complete)
    print("diagram written to %s" % cfg.output_dir)
    return EXIT_OK if diagram.complete else EXIT_BUDGET


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="glcont",
        description="Continuation and bifurcation analysis of the extreme "
        "type-II Ginzburg-Landau equation on 2-D domains.",
    )
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", help="build and save the mesh")
    p_trace = sub.add_parser("trace", help="trace a single branch")
    p_trace.add_argument("--start", help="start state file (default: psi=1, mu=0)")
    p_trace.add_argument("--tangent", help="initial tangent state file")
    p_explore = sub.add_parser("explore", help="explore the whole landscape")
    p_explore.add_argument("--start", help="seed state file (default: psi=1, mu=0)")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    handlers = {"mesh": cmd_mesh, "trace": cmd_trace, "explore": cmd_explore}
    try:
        return handlers[args.command](cfg, args)
    except GLContError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
