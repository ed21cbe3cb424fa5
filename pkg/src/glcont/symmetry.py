"""Discrete symmetry groups acting on order-parameter fields.

The groups of interest are the dihedral and cyclic groups D_m / C_m of the
sample shape, extended by the global phase rotations theta_eta.  A group
element acts on a field psi through

    (g psi)(p) = exp(i eta) * conj^c( psi(M p) )

where M is an orthogonal 2x2 matrix (rotation or reflection about the domain
centroid), c in {0, 1} marks whether the element involves the antiunitary
reflection sigma: psi(x, y) -> conj(psi(-x, y)), and eta is a phase.  On a
symmetry-preserving mesh the spatial part M reduces to a node permutation,
which the mesh module provides.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateAlignment


def _rotmat(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


_REFLECT = np.array([[-1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class GroupElement:
    """One element of the phase-extended spatial symmetry group."""

    matrix: tuple  # 2x2 orthogonal, stored as nested tuples (hashable)
    conj: bool = False
    phase: float = 0.0
    word: str = "e"

    @property
    def mat(self):
        return np.asarray(self.matrix)

    def __matmul__(self, other):
        # (self * other) psi = self(other(psi)); see module docstring for the
        # composition rules of (M, c, eta).
        m = np.asarray(other.matrix) @ np.asarray(self.matrix)
        phase = self.phase + ((-1) ** self.conj) * other.phase
        word = _join_words(self.word, other.word)
        return GroupElement(
            matrix=_as_tuple(m),
            conj=self.conj ^ other.conj,
            phase=_wrap_angle(phase),
            word=word,
        )

    def inverse(self):
        m = np.asarray(self.matrix).T
        phase = -((-1) ** self.conj) * self.phase
        return GroupElement(
            matrix=_as_tuple(m),
            conj=self.conj,
            phase=_wrap_angle(phase),
            word=self.word + "^-1" if self.word != "e" else "e",
        )

    def is_identity(self, tol=1e-12):
        return (
            not self.conj
            and abs(_wrap_angle(self.phase)) <= tol
            and np.allclose(self.mat, np.eye(2), atol=tol)
        )


def _as_tuple(m):
    return tuple(tuple(float(x) for x in row) for row in m)


def _wrap_angle(a):
    return float((a + np.pi) % (2 * np.pi) - np.pi)


def _join_words(w1, w2):
    if w1 == "e":
        return w2
    if w2 == "e":
        return w1
    return w1 + "*" + w2


def identity_element():
    return GroupElement(matrix=_as_tuple(np.eye(2)), word="e")


def rotation(m, j=1):
    """tau^j: rotation by j * 2*pi/m about the centroid."""
    j = j % m
    if j == 0:
        return identity_element()
    return GroupElement(matrix=_as_tuple(_rotmat(2 * np.pi * j / m)), word="t^%d" % j)


def reflection(m, j=0):
    """tau^j sigma: the reflection sigma (x -> -x) preceded by j rotations."""
    g = GroupElement(matrix=_as_tuple(_REFLECT), conj=True, word="s")
    if j % m:
        g = rotation(m, j) @ g
        g = GroupElement(g.matrix, g.conj, g.phase, "t^%d*s" % (j % m))
    return g


def phase_element(eta):
    return GroupElement(matrix=_as_tuple(np.eye(2)), phase=_wrap_angle(eta), word="th")


@dataclass(frozen=True)
class GroupSpec:
    """Descriptor of a declared symmetry group: ('D', m) or ('C', m)."""

    kind: str  # "D" or "C"
    m: int

    def __post_init__(self):
        if self.kind not in ("D", "C"):
            raise ValueError("group kind must be 'D' or 'C'")
        if self.m < 1:
            raise ValueError("group order parameter m must be >= 1")

    def generators(self):
        gens = []
        if self.m > 1:
            gens.append(rotation(self.m))
        if self.kind == "D":
            gens.append(reflection(self.m))
        return gens

    def elements(self):
        """All spatial elements (phases excluded): m rotations, and for D_m
        also the m reflections."""
        els = [rotation(self.m, j) for j in range(self.m)]
        if self.kind == "D":
            els += [reflection(self.m, j) for j in range(self.m)]
        return els

    @property
    def order(self):
        return self.m * (2 if self.kind == "D" else 1)


def apply_action(g, psi, mesh):
    """Apply a group element to a nodal field on a symmetric mesh."""
    out = psi[mesh.symmetry_node_map(g)]
    if g.conj:
        out = np.conj(out)
    if g.phase:
        out = np.exp(1j * g.phase) * out
    return out


def best_phase_alignment(psi_a, psi_b, ip):
    """Phase eta minimizing ||exp(i eta) psi_a - psi_b|| in the given inner
    product; returns (eta, residual)."""
    na, nb = ip.norm(psi_a), ip.norm(psi_b)
    if na * nb < 1e-14:
        raise DegenerateAlignment("cannot align (near-)zero vectors")
    c = ip.cdot(psi_a, psi_b)
    eta = float(np.angle(c)) if abs(c) > 1e-14 * na * nb else 0.0
    res = ip.norm(np.exp(1j * eta) * psi_a - psi_b)
    return eta, res


@dataclass
class SubgroupDescriptor:
    """Detected isotropy subgroup: rotations of order `rot_order`, plus an
    optional reflection tau^axis sigma."""

    rot_order: int = 1
    reflection_axis: int | None = None
    ambiguous: list = field(default_factory=list)

    @property
    def order(self):
        return self.rot_order * (2 if self.reflection_axis is not None else 1)

    def word(self):
        parts = []
        if self.rot_order > 1:
            parts.append("C%d" % self.rot_order)
        if self.reflection_axis is not None:
            parts.append("s@%d" % self.reflection_axis)
        return "+".join(parts) if parts else "1"


def detect_invariance(psi, mesh, group, ip, tol=1e-6):
    """Find the subgroup of `group` leaving psi invariant up to a phase.

    An element g counts as a symmetry when min_eta ||theta_eta g psi - psi||
    is below tol * ||psi||.  Residuals in the ambiguous band
    [tol, 1e-4] * ||psi|| are reported on the descriptor.
    """
    norm = ip.norm(psi)
    if norm < 1e-14:
        # the zero field is invariant under everything
        return SubgroupDescriptor(
            rot_order=group.m,
            reflection_axis=0 if group.kind == "D" else None,
        )
    invariant_rot = []
    invariant_ref = []
    ambiguous = []
    for j in range(1, group.m):
        g = rotation(group.m, j)
        _, res = best_phase_alignment(apply_action(g, psi, mesh), psi, ip)
        if res <= tol * norm:
            invariant_rot.append(j)
        elif res <= 1e-4 * norm:
            ambiguous.append((g.word, res / norm))
    if group.kind == "D":
        for j in range(group.m):
            g = reflection(group.m, j)
            _, res = best_phase_alignment(apply_action(g, psi, mesh), psi, ip)
            if res <= tol * norm:
                invariant_ref.append(j)
            elif res <= 1e-4 * norm:
                ambiguous.append((g.word, res / norm))
    if invariant_rot:
        jmin = min(invariant_rot)
        rot_order = group.m // jmin if group.m % jmin == 0 else 1
        # guard against non-subgroup artifacts: verify closure
        if not all((j % jmin) == 0 for j in invariant_rot):
            rot_order = len(invariant_rot) + 1
    else:
        rot_order = 1
    axis = min(invariant_ref) if invariant_ref else None
    return SubgroupDescriptor(rot_order=rot_order, reflection_axis=axis, ambiguous=ambiguous)


def group_average(psi, mesh, group, ip, tol=1e-4):
    """Project psi onto its nearest group-symmetric representative.

    Newton-converged states near a symmetric solution carry contamination
    along near-null directions that the residual cannot see (it is quadratic
    there), which pushes exact symmetries into the ambiguous band.  Averaging
    over the phase-aligned actions of all elements that are symmetries to
    within `tol` removes the non-symmetric component.  Returns the averaged
    field and the number of elements used (1 means nothing was averaged).
    """
    norm = ip.norm(psi)
    if norm < 1e-14:
        return psi.copy(), 1
    acc = psi.astype(complex).copy()
    used = 1
    for g in group.elements():
        if g.is_identity():
            continue
        gpsi = apply_action(g, psi, mesh)
        eta, res = best_phase_alignment(gpsi, psi, ip)
        if res <= tol * norm:
            acc = acc + np.exp(1j * eta) * gpsi
            used += 1
    return acc / used, used


def isotropy_classes(m):
    """Generators of the isotropy-subgroup conjugacy classes used for the
    equivariant branching construction at a D_m point: <sigma> and, for even
    m, also <tau_{2 pi / m} sigma>."""
    classes = [reflection(m, 0)]
    if m % 2 == 0:
        classes.append(reflection(m, 1))
    return classes
