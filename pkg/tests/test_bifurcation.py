"""Bifurcation detection and location.

Detection is exercised on synthetic Ritz snapshots; location is verified on
a real singular point with a dense eigenvalue solve as independent oracle.
"""

import numpy as np
import pytest

from glcont import bifurcation, linalg, model


def pair(value, vector):
    return linalg.RitzPair(value=value, vector=np.asarray(vector, complex), residual_norm=0.0)


def basis_vec(n, i):
    v = np.zeros(n, dtype=complex)
    v[i] = 1.0
    return v


class TestNearBifurcationCheck:
    ip = linalg.InnerProduct(np.ones(4))
    cfg = bifurcation.NearBifConfig()

    def test_numerically_zero_value_flags(self):
        prev = [pair(0.5, basis_vec(4, 0))]
        curr = [pair(0.5, basis_vec(4, 0)), pair(1e-6, basis_vec(4, 1))]
        hit, idx = bifurcation.near_bifurcation_check(prev, curr, self.cfg, self.ip)
        assert hit and idx == 1

    def test_sign_change_flags(self):
        prev = [pair(-0.03, basis_vec(4, 0)), pair(0.8, basis_vec(4, 1))]
        curr = [pair(0.03, basis_vec(4, 0)), pair(0.8, basis_vec(4, 1))]
        hit, idx = bifurcation.near_bifurcation_check(prev, curr, self.cfg, self.ip)
        assert hit and idx == 0

    def test_sign_change_found_through_reordering(self):
        # the crossing pair moves position between snapshots; the overlap
        # matching must still pair it with itself
        prev = [pair(0.5, basis_vec(4, 0)), pair(-0.04, basis_vec(4, 1))]
        curr = [pair(0.04, basis_vec(4, 1)), pair(0.5, basis_vec(4, 0))]
        hit, idx = bifurcation.near_bifurcation_check(prev, curr, self.cfg, self.ip)
        assert hit and idx == 0

    def test_quiet_snapshot_passes(self):
        prev = [pair(0.4, basis_vec(4, 0)), pair(0.9, basis_vec(4, 1))]
        curr = [pair(0.45, basis_vec(4, 0)), pair(0.85, basis_vec(4, 1))]
        hit, _ = bifurcation.near_bifurcation_check(prev, curr, self.cfg, self.ip)
        assert not hit

    def test_large_magnitude_sign_change_not_flagged(self):
        # a fast crossing far from zero relative to eps2 is not "near"
        prev = [pair(-0.9, basis_vec(4, 0)), pair(1.0, basis_vec(4, 1))]
        curr = [pair(0.9, basis_vec(4, 0)), pair(1.0, basis_vec(4, 1))]
        hit, _ = bifurcation.near_bifurcation_check(prev, curr, self.cfg, self.ip)
        assert not hit

    def test_scale_invariance(self):
        prev = [pair(-3e4, basis_vec(4, 0)), pair(8e5, basis_vec(4, 1))]
        curr = [pair(3e4, basis_vec(4, 0)), pair(8e5, basis_vec(4, 1))]
        hit, idx = bifurcation.near_bifurcation_check(prev, curr, self.cfg, self.ip)
        assert hit and idx == 0


class TestLocation:
    def test_located_point_is_singular(self, tri_bp):
        mesh, ip, st = tri_bp["mesh"], tri_bp["ip"], tri_bp["bp_state"]
        assert ip.norm(model.residual(mesh, st)) <= 1e-8
        assert 1.15 < st.mu < 1.27
        # dense oracle: the real-embedded Jacobian must have zero eigenvalues
        # beyond the gauge mode (kernel dimension 2 here); J is self-adjoint
        # in the volume-weighted product, so symmetrize by similarity first
        j = model.jacobian_dense_real(mesh, st)
        sw = np.sqrt(np.concatenate([mesh.control_volumes, mesh.control_volumes]))
        s = (sw[:, None] * j) / sw[None, :]
        assert np.abs(s - s.T).max() < 1e-10 * np.abs(s).max()
        eigs = np.sort(np.abs(np.linalg.eigvalsh(0.5 * (s + s.T))))
        assert eigs[2] < 1e-6  # gauge + a 2-dimensional kernel
        assert eigs[3] > 1e-4  # and nothing else

    def test_kernel_dimension_and_quality(self, tri_bp):
        mesh, ip, st = tri_bp["mesh"], tri_bp["ip"], tri_bp["bp_state"]
        kernel = tri_bp["kernel"]
        assert len(kernel) == 2
        g = 1j * st.psi / ip.norm(1j * st.psi)
        for i, phi in enumerate(kernel):
            assert ip.norm(model.jacobian_psi_apply(mesh, st, phi)) < 1e-5
            assert abs(ip.dot(g, phi)) < 1e-8
            for other in kernel[:i]:
                assert abs(ip.dot(other, phi)) < 1e-8
            assert ip.norm(phi) == pytest.approx(1.0, abs=1e-10)

    def test_classification(self, tri_bp):
        assert tri_bp["kind"] == "branch_point"
        assert tri_bp["overlap"] < 1e-6

    def test_refine_kernel_vector_improves(self, tri_bp):
        mesh, ip, st = tri_bp["mesh"], tri_bp["ip"], tri_bp["bp_state"]
        rng = np.random.default_rng(51)
        rough = tri_bp["kernel"][0] + 0.05 * (
            rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)
        )
        refined = bifurcation.refine_kernel_vector(mesh, ip, st, rough)
        assert ip.norm(model.jacobian_psi_apply(mesh, st, refined)) < 1e-8
