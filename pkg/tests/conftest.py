"""Shared fixtures: meshes of a few sizes and one fully located branch
point on the triangular domain (expensive, built once per session)."""

import numpy as np
import pytest

from glcont import bifurcation, continuation, linalg, mesh as meshmod, model, tangents


def random_state(mesh, rng, mu=0.8, scale=1.0):
    psi = scale * (rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n))
    return model.State(psi, mu)


def natural_tangent(mesh):
    """Initial tangent pointing straight up in mu."""
    return continuation.Tangent(np.zeros(mesh.n, dtype=complex), 1.0)


@pytest.fixture(scope="session")
def tri_mesh():
    return meshmod.build_mesh(meshmod.DomainSpec.triangle(6.0, 0.5))


@pytest.fixture(scope="session")
def tri_ip(tri_mesh):
    return linalg.InnerProduct.for_mesh(tri_mesh)


@pytest.fixture(scope="session")
def mesh200():
    """Triangle mesh with about 200 nodes, for derivative sweeps."""
    return meshmod.build_mesh(meshmod.DomainSpec.triangle(6.0, 0.35))


@pytest.fixture(scope="session")
def ip200(mesh200):
    return linalg.InnerProduct.for_mesh(mesh200)


@pytest.fixture(scope="session")
def sq_mesh():
    return meshmod.build_mesh(meshmod.DomainSpec.square(5.5, 0.6))


@pytest.fixture(scope="session")
def star_mesh():
    return meshmod.build_mesh(
        meshmod.DomainSpec.star4(np.sqrt(10.0), np.sqrt(2.0), 0.55)
    )


@pytest.fixture(scope="session")
def small_mesh():
    """Square mesh with about 50 nodes, for brute-force expansions."""
    return meshmod.build_mesh(meshmod.DomainSpec.square(3.0, 0.55))


@pytest.fixture(scope="session")
def tri_bp(mesh200, ip200):
    """First singular point on the branch continued from psi=1, mu=0 on the
    triangle, fully located, with kernel basis and resolved reduction.

    Returns a dict with keys: bp_state, kernel, kind, kd, step, branch
    (records of the approach trace).
    """
    mesh, ip = mesh200, ip200
    config = continuation.ContinuationConfig(mu_range=(-0.1, 1.30))
    flags = []

    def cb(prev, cur):
        nb = bifurcation.NearBifConfig()
        hit, idx = bifurcation.near_bifurcation_check(
            prev.ritz_snapshot, cur.ritz_snapshot, nb, ip
        )
        if hit and not flags:
            flags.append((cur, idx))

    start = model.State(np.ones(mesh.n, dtype=complex), 0.0)
    records, reason = continuation.trace_branch(
        mesh, ip, start, natural_tangent(mesh), config, near_bif_callback=cb
    )
    assert flags, "no near-bifurcation flag found on the approach trace"
    rec, idx = flags[0]
    guess_null = rec.ritz_snapshot[idx].vector
    bp_state, kernel0 = bifurcation.locate_bifurcation(mesh, ip, rec.state, guess_null)
    kernel = bifurcation.kernel_and_dim(mesh, ip, bp_state, hint=kernel0)
    kind, overlap = bifurcation.classify(mesh, ip, bp_state, kernel)
    bp = bifurcation.BifurcationPoint(
        state=bp_state, kernel=kernel, kernel_dim=len(kernel), kind=kind
    )
    kd = tangents.kernel_basis(mesh, ip, bp)
    step = tangents.ls_n2_initial(kd) if len(kernel) == 2 else None
    return {
        "mesh": mesh,
        "ip": ip,
        "bp_state": bp_state,
        "bp": bp,
        "kernel": kernel,
        "kind": kind,
        "overlap": overlap,
        "kd": kd,
        "step": step,
        "records": records,
    }
