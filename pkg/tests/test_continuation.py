"""Predictor-corrector tracing: corrector convergence, tangent hygiene,
zero-branch behaviour, determinism."""

import numpy as np
import pytest

from glcont import continuation, linalg, model
from glcont.errors import ZeroTangent

from conftest import natural_tangent, random_state


class TestTangents:
    def test_normalization_and_gauge_orthogonality(self, tri_mesh, tri_ip):
        rng = np.random.default_rng(41)
        psi = random_state(tri_mesh, rng).psi
        dpsi = random_state(tri_mesh, rng).psi
        t = continuation.normalize_tangent(tri_ip, psi, dpsi, 0.4)
        assert continuation.extended_norm(tri_ip, t.dpsi, t.dmu) == pytest.approx(1.0, abs=1e-12)
        g = 1j * psi / tri_ip.norm(1j * psi)
        assert abs(tri_ip.dot(g, t.dpsi)) < 1e-10

    def test_orientation_follows_reference(self, tri_mesh, tri_ip):
        rng = np.random.default_rng(42)
        psi = random_state(tri_mesh, rng).psi
        dpsi = random_state(tri_mesh, rng).psi
        ref = continuation.normalize_tangent(tri_ip, psi, dpsi, 0.5)
        t = continuation.normalize_tangent(tri_ip, psi, -dpsi, -0.5, orient_like=ref)
        assert tri_ip.dot(ref.dpsi, t.dpsi) + ref.dmu * t.dmu > 0.9

    def test_zero_tangent_rejected(self, tri_mesh, tri_ip):
        psi = np.ones(tri_mesh.n, dtype=complex)
        with pytest.raises(ZeroTangent):
            continuation.normalize_tangent(tri_ip, psi, np.zeros(tri_mesh.n, complex), 0.0)


class TestCorrector:
    def test_recovers_perturbed_solution(self, tri_mesh, tri_ip):
        # psi = 1 solves the equation exactly at mu = 0
        rng = np.random.default_rng(43)
        exact = np.ones(tri_mesh.n, dtype=complex)
        noise = 1e-3 * random_state(tri_mesh, rng).psi
        pred = model.State(exact + noise, 0.0)
        cfg = continuation.ContinuationConfig()
        st, its, _ = continuation.correct(tri_mesh, tri_ip, pred, natural_tangent(tri_mesh), cfg)
        assert tri_ip.norm(model.residual(tri_mesh, st)) <= cfg.newton_tol
        assert its <= 5
        # the pseudo-arclength plane pins mu at the predicted value
        assert abs(st.mu) < 1e-9

    def test_converged_point_accepted_immediately(self, tri_mesh, tri_ip):
        st0 = model.State(np.ones(tri_mesh.n, dtype=complex), 0.0)
        cfg = continuation.ContinuationConfig()
        st, its, _ = continuation.correct(tri_mesh, tri_ip, st0, natural_tangent(tri_mesh), cfg)
        assert its == 0


class TestZeroBranch:
    def test_straight_line_in_mu(self, tri_mesh, tri_ip):
        start = model.State(np.zeros(tri_mesh.n, dtype=complex), 0.3)
        cfg = continuation.ContinuationConfig(mu_range=(0.0, 1.2), max_steps=100)
        records, reason = continuation.trace_branch(
            tri_mesh, tri_ip, start, natural_tangent(tri_mesh), cfg
        )
        assert reason == "mu_range"
        mus = [r.state.mu for r in records]
        assert all(b > a for a, b in zip(mus, mus[1:]))
        for r in records:
            assert tri_ip.norm(r.state.psi) < 1e-10
            assert r.energy == 0.0

    def test_zero_branch_unstable_at_low_mu(self, tri_mesh, tri_ip):
        start = model.State(np.zeros(tri_mesh.n, dtype=complex), 0.2)
        rec = continuation.make_record(
            tri_mesh, tri_ip, start, natural_tangent(tri_mesh),
            continuation.ContinuationConfig(),
        )
        assert rec.stability == "unstable"


class TestTraceBranch:
    def test_short_trace_from_uniform_state(self, tri_mesh, tri_ip):
        start = model.State(np.ones(tri_mesh.n, dtype=complex), 0.0)
        cfg = continuation.ContinuationConfig(mu_range=(-0.1, 0.8))
        records, reason = continuation.trace_branch(
            tri_mesh, tri_ip, start, natural_tangent(tri_mesh), cfg
        )
        assert reason == "mu_range"
        assert len(records) >= 5
        # condensate weakens with the field: energy increases monotonically
        energies = [r.energy for r in records]
        assert energies[-1] > energies[0]
        assert all(r.stability == "stable" for r in records)
        for r in records[1:]:
            assert r.newton_iters <= 8

    def test_determinism(self, tri_mesh, tri_ip):
        start = model.State(np.ones(tri_mesh.n, dtype=complex), 0.0)
        cfg = continuation.ContinuationConfig(mu_range=(-0.1, 0.5))
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(7)
            records, _ = continuation.trace_branch(
                tri_mesh, tri_ip, start, natural_tangent(tri_mesh), cfg, rng=rng
            )
            runs.append([r.state.mu for r in records])
        assert runs[0] == runs[1]


class TestStability:
    def test_sign_convention(self):
        mk = lambda v: linalg.RitzPair(value=v, vector=np.zeros(2, complex), residual_norm=0.0)
        assert continuation.stability_from_ritz([mk(0.5), mk(1.0)]) == "stable"
        assert continuation.stability_from_ritz([mk(-0.5), mk(1.0)]) == "unstable"
        assert continuation.stability_from_ritz([mk(-1e-9)]) == "stable"
