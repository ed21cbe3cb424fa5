"""Discrete symmetry layer: exact group relations, equivariance of the
residual, invariance detection, phase alignment."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glcont import model
from glcont.symmetry import (
    GroupSpec,
    apply_action,
    best_phase_alignment,
    detect_invariance,
    group_average,
    identity_element,
    isotropy_classes,
    phase_element,
    reflection,
    rotation,
)

from conftest import random_state


class TestGroupRelations:
    @pytest.mark.parametrize("m", [3, 4])
    def test_rotation_order(self, m, tri_mesh, sq_mesh):
        mesh = tri_mesh if m == 3 else sq_mesh
        rng = np.random.default_rng(31)
        psi = random_state(mesh, rng).psi
        out = psi
        for _ in range(m):
            out = apply_action(rotation(m), out, mesh)
        assert np.array_equal(out, psi)

    def test_reflection_involution(self, sq_mesh):
        rng = np.random.default_rng(32)
        psi = random_state(sq_mesh, rng).psi
        out = apply_action(reflection(4), apply_action(reflection(4), psi, sq_mesh), sq_mesh)
        assert np.array_equal(out, psi)

    def test_dihedral_relation(self, sq_mesh):
        # sigma tau sigma = tau^{-1} on the node permutations, bit-exact
        rng = np.random.default_rng(33)
        psi = random_state(sq_mesh, rng).psi
        s, t = reflection(4), rotation(4)
        lhs = apply_action(s, apply_action(t, apply_action(s, psi, sq_mesh), sq_mesh), sq_mesh)
        rhs = apply_action(rotation(4, 3), psi, sq_mesh)
        assert np.array_equal(lhs, rhs)

    def test_permutation_composition_exact(self, tri_mesh):
        t = rotation(3)
        p = tri_mesh.symmetry_node_map(t)
        p3 = p[p[p]]
        assert np.array_equal(p3, np.arange(tri_mesh.n))


class TestEquivariance:
    def check(self, mesh, group, mus=(0.5, 1.3), seed=34):
        rng = np.random.default_rng(seed)
        for mu in mus:
            psi = random_state(mesh, rng, scale=0.7).psi
            f = model.residual(mesh, model.State(psi, mu))
            fn = np.linalg.norm(f)
            for g in group.generators():
                gf = model.residual(mesh, model.State(apply_action(g, psi, mesh), mu))
                diff = np.linalg.norm(gf - apply_action(g, f, mesh))
                assert diff <= 1e-10 * max(fn, 1.0), (g.word, mu, diff / fn)

    def test_triangle(self, tri_mesh):
        self.check(tri_mesh, GroupSpec("D", 3))

    def test_square(self, sq_mesh):
        self.check(sq_mesh, GroupSpec("D", 4))

    def test_star(self, star_mesh):
        self.check(star_mesh, GroupSpec("C", 4))

    def test_phase_equivariance(self, tri_mesh):
        rng = np.random.default_rng(35)
        psi = random_state(tri_mesh, rng).psi
        f = model.residual(tri_mesh, model.State(psi, 0.8))
        for eta in (0.3, 2.0, -1.1):
            g = model.residual(tri_mesh, model.State(np.exp(1j * eta) * psi, 0.8))
            assert np.linalg.norm(g - np.exp(1j * eta) * f) <= 1e-12 * np.linalg.norm(f)


def symmetrized(mesh, group, psi):
    """Plain sum over the rotation orbit: exactly invariant up to round-off."""
    acc = np.zeros_like(psi)
    for j in range(group.m):
        acc = acc + apply_action(rotation(group.m, j), psi, mesh)
    return acc


class TestInvariance:
    def test_group_average_purifies_contamination(self, sq_mesh):
        from glcont import linalg

        ip = linalg.InnerProduct.for_mesh(sq_mesh)
        rng = np.random.default_rng(36)
        group = GroupSpec("C", 4)
        sym = symmetrized(sq_mesh, group, random_state(sq_mesh, rng).psi)
        sym = sym / ip.norm(sym)
        dirty = sym + 3e-6 * random_state(sq_mesh, rng).psi
        avg, used = group_average(dirty, sq_mesh, group, ip)
        assert used == group.order
        desc = detect_invariance(avg, sq_mesh, group, ip)
        assert desc.rot_order == 4
        # the averaged field is strictly closer to the symmetric original
        assert ip.norm(avg - sym) < ip.norm(dirty - sym)

    @given(st.floats(-3.0, 3.0))
    @settings(max_examples=20, deadline=None)
    def test_detect_invariance_phase_stable(self, sq_mesh, eta):
        from glcont import linalg

        ip = linalg.InnerProduct.for_mesh(sq_mesh)
        rng = np.random.default_rng(37)
        group = GroupSpec("D", 4)
        base = symmetrized(sq_mesh, GroupSpec("C", 2), random_state(sq_mesh, rng).psi)
        d1 = detect_invariance(base, sq_mesh, group, ip)
        d2 = detect_invariance(np.exp(1j * eta) * base, sq_mesh, group, ip)
        assert d1.word() == d2.word()
        assert d1.order == d2.order

    def test_best_phase_alignment(self, tri_mesh, tri_ip):
        rng = np.random.default_rng(38)
        psi = random_state(tri_mesh, rng).psi
        eta, dist = best_phase_alignment(np.exp(0.7j) * psi, psi, tri_ip)
        assert dist <= 1e-10 * tri_ip.norm(psi)

    def test_identity_and_phase_elements(self, tri_mesh):
        rng = np.random.default_rng(39)
        psi = random_state(tri_mesh, rng).psi
        assert np.array_equal(apply_action(identity_element(), psi, tri_mesh), psi)
        out = apply_action(phase_element(0.4), psi, tri_mesh)
        assert np.allclose(out, np.exp(0.4j) * psi, rtol=0, atol=1e-15)


class TestIsotropyClasses:
    def test_even_odd_rule(self):
        assert len(isotropy_classes(4)) == 2
        assert len(isotropy_classes(5)) == 1
        assert len(isotropy_classes(6)) == 2
