"""The discretized Ginzburg-Landau operator and its derivatives.

All operators act on nodal complex vectors and are matrix-free from the
caller's perspective; a sparse kinetic matrix is cached per field strength mu
internally (it is cheap to assemble and reused heavily inside Krylov loops).

Derivatives with respect to psi are exact closed forms:

    J(psi) phi   = K phi - phi + 2|psi|^2 phi + psi^2 conj(phi)
    H(psi) p1 p2 = 2 (conj(psi) p1 p2 + psi conj(p1) p2 + psi p1 conj(p2))
    D3 p1 p2 p3  = 2 (conj(p1) p2 p3 + p1 conj(p2) p3 + p1 p2 conj(p3))

and every psi-derivative of order >= 4 vanishes.  Derivatives with respect to
mu are approximated by centered finite-difference stencils (orders 1..3).
Note J is only real-linear because of the conjugation term; all linear
algebra downstream treats complex vectors as real spaces of dimension 2n.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .errors import UnsupportedOrder

_KIN_CACHE_MAX = 64


@dataclass
class State:
    """Order parameter + applied field strength."""

    psi: np.ndarray
    mu: float

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        self.mu = float(self.mu)

    def copy(self):
        return State(self.psi.copy(), self.mu)


def vector_potential(mu, p, centroid=(0.0, 0.0)):
    """Symmetric-gauge vector potential of the homogeneous field mu, centered
    at the domain centroid; curl A = mu identically."""
    p = np.asarray(p, dtype=float)
    c = np.asarray(centroid, dtype=float)
    rel = p - c
    return 0.5 * mu * np.stack([-rel[..., 1], rel[..., 0]], axis=-1)


def link_variables(mesh, mu):
    """Unit-modulus link factors U_jk = exp(-i mu * int <e_jk, A_1>) for all
    edges (j, k) with j < k; the midpoint rule used for the line integral is
    exact for the affine potential."""
    return np.exp(-1j * mu * mesh.edge_mu_phase)


def link_variable(mesh, edge, mu):
    j, k = edge
    e = np.where((mesh.edges[:, 0] == min(j, k)) & (mesh.edges[:, 1] == max(j, k)))[0]
    if len(e) == 0:
        raise KeyError("no such edge: %r" % (edge,))
    u = link_variables(mesh, mu)[e[0]]
    return u if j < k else np.conj(u)


def kinetic_matrix(mesh, mu, scaled=True):
    """Sparse K(mu); `scaled` divides rows by the dual cell areas (the
    default convention, self-adjoint in the volume-weighted inner product)."""
    key = (float(mu), bool(scaled))
    cached = mesh._kin_cache.get(key)
    if cached is not None:
        return cached
    j, k = mesh.edges[:, 0], mesh.edges[:, 1]
    a = mesh.edge_alpha
    u = link_variables(mesh, mu)
    rows = np.concatenate([j, j, k, k])
    cols = np.concatenate([j, k, k, j])
    vals = np.concatenate([a, -a * u, a, -a * np.conj(u)]).astype(complex)
    if scaled:
        v = mesh.control_volumes
        vals = vals / v[rows]
    mat = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(mesh.n, mesh.n))
    if len(mesh._kin_cache) >= _KIN_CACHE_MAX:
        mesh._kin_cache.clear()
    mesh._kin_cache[key] = mat
    return mat


def kinetic_apply(mesh, mu, psi):
    return kinetic_matrix(mesh, mu) @ psi


def residual(mesh, state):
    """F_i = (K psi)_i - psi_i (1 - |psi_i|^2)."""
    psi = state.psi
    return kinetic_apply(mesh, state.mu, psi) - psi * (1.0 - np.abs(psi) ** 2)


def jacobian_psi_apply(mesh, state, phi):
    psi = state.psi
    return (
        kinetic_apply(mesh, state.mu, phi)
        - phi
        + 2.0 * np.abs(psi) ** 2 * phi
        + psi**2 * np.conj(phi)
    )


def hessian_psipsi_apply(state, phi1, phi2):
    psi = state.psi
    return 2.0 * (np.conj(psi) * phi1 * phi2 + psi * np.conj(phi1) * phi2 + psi * phi1 * np.conj(phi2))


def third_derivative_apply(phi1, phi2, phi3):
    return 2.0 * (
        np.conj(phi1) * phi2 * phi3 + phi1 * np.conj(phi2) * phi3 + phi1 * phi2 * np.conj(phi3)
    )


# -- finite-difference mu-derivatives --------------------------------------

_MU_STEPS = {1: 1e-6, 2: 1e-4, 3: 2e-3}


def _mu_stencil(f, mu, k):
    """Centered finite-difference d^k/dmu^k of a vector-valued f(mu).

    Step sizes grow with the order to balance truncation against round-off.
    """
    if k not in _MU_STEPS:
        raise UnsupportedOrder("mu-derivatives supported up to order 3, got %d" % k)
    h = _MU_STEPS[k] * max(1.0, abs(mu))
    if k == 1:
        return (f(mu + h) - f(mu - h)) / (2.0 * h)
    if k == 2:
        return (f(mu + h) - 2.0 * f(mu) + f(mu - h)) / h**2
    return (f(mu + 2 * h) - 2.0 * f(mu + h) + 2.0 * f(mu - h) - f(mu - 2 * h)) / (2.0 * h**3)


def residual_mu_derivative(mesh, state, k=1):
    psi = state.psi
    return _mu_stencil(
        lambda m: kinetic_apply(mesh, m, psi) - psi * (1.0 - np.abs(psi) ** 2), state.mu, k
    )


def jacobian_mu(mesh, state):
    """J_mu = dF/dmu by the second-order centered difference."""
    return residual_mu_derivative(mesh, state, 1)


def jacobian_mu_derivative_apply(mesh, state, phi, k=1):
    """d^k/dmu^k of the Jacobian action J(psi, mu) phi (= K^(k) phi, since
    the nonlinear terms are mu-independent, but evaluated through the full
    Jacobian for faithfulness)."""
    st = state

    def f(m):
        return jacobian_psi_apply(mesh, State(st.psi, m), phi)

    return _mu_stencil(f, state.mu, k)


def hessian_psimu_apply(mesh, state, phi):
    return jacobian_mu_derivative_apply(mesh, state, phi, 1)


def hessian_mumu(mesh, state):
    return residual_mu_derivative(mesh, state, 2)


# -- extended-space derivative forms ---------------------------------------
#
# The Lyapunov-Schmidt machinery differentiates GL with respect to the
# extended unknown (psi, mu).  Arguments are pairs (phi, kappa).


def hessian_apply(mesh, state, v1, v2):
    """Full second derivative D^2 GL [(phi1, k1), (phi2, k2)]."""
    phi1, k1 = v1
    phi2, k2 = v2
    out = hessian_psipsi_apply(state, phi1, phi2)
    if k2:
        out = out + k2 * hessian_psimu_apply(mesh, state, phi1)
    if k1:
        out = out + k1 * hessian_psimu_apply(mesh, state, phi2)
    if k1 and k2:
        out = out + (k1 * k2) * hessian_mumu(mesh, state)
    return out


def gl_derivative_apply(mesh, state, vs):
    """j-th full derivative D^j GL applied to extended vectors vs, j >= 3.

    The surviving terms are: the exact third psi-derivative (j = 3 only,
    since it is psi- and mu-independent), single-phi terms carrying
    d^{j-1}K/dmu^{j-1}, and the pure-mu term d^j F/dmu^j.  Mixed psi^2-terms
    vanish because H_psipsi is mu-independent.  mu-derivative orders above 3
    are not representable by the stencils and are omitted for j = 4 (their
    prefactor is the product of four kappa's; the tangent algorithms cap the
    derivative bound accordingly); j >= 5 raises UnsupportedOrder.
    """
    j = len(vs)
    if j < 3:
        raise ValueError("use hessian_apply for j < 3")
    if j > 4:
        raise UnsupportedOrder("GL derivatives of order > 4 are not supported")
    phis = [v[0] for v in vs]
    kappas = [v[1] for v in vs]
    out = np.zeros(mesh.n, dtype=complex)
    if j == 3:
        out = out + third_derivative_apply(*phis)
    kprod_all = float(np.prod(kappas))
    for s in range(j):
        others = float(np.prod([kappas[t] for t in range(j) if t != s]))
        if others:
            out = out + others * jacobian_mu_derivative_apply(mesh, state, phis[s], j - 1)
    if j == 3 and kprod_all:
        out = out + kprod_all * residual_mu_derivative(mesh, state, 3)
    return out


def energy(mesh, state):
    """Normalized condensation energy -|Omega|^-1 sum V_i |psi_i|^4."""
    return float(-(mesh.control_volumes * np.abs(state.psi) ** 4).sum() / mesh.domain_area)


# -- sparse real-form assemblies (preconditioner + tests only) -------------


def _real_embedding(c_linear, anti_linear=None):
    """Real 2n x 2n block matrix of phi -> C phi + A conj(phi)."""
    re_c, im_c = np.real(c_linear.toarray()), np.imag(c_linear.toarray())
    top = [re_c, -im_c]
    bot = [im_c, re_c]
    if anti_linear is not None:
        re_a, im_a = np.real(anti_linear), np.imag(anti_linear)
        top[0] = top[0] + np.diag(re_a)
        top[1] = top[1] + np.diag(im_a)
        bot[0] = bot[0] + np.diag(im_a)
        bot[1] = bot[1] - np.diag(re_a)
    return np.block([top, bot])


def screening_operator_matrix(mesh, state):
    """Sparse complex matrix of R = K + 2|psi|^2 (the preconditioner
    target)."""
    n = mesh.n
    diag = scipy.sparse.diags(2.0 * np.abs(state.psi) ** 2)
    return (kinetic_matrix(mesh, state.mu) + diag).tocsr()


def jacobian_dense_real(mesh, state):
    """Dense real 2n x 2n form of J(psi, mu); for oracle tests at small n."""
    n = mesh.n
    c = (
        kinetic_matrix(mesh, state.mu)
        + scipy.sparse.diags(-1.0 + 2.0 * np.abs(state.psi) ** 2)
    ).tocsr()
    return _real_embedding(c, anti_linear=state.psi**2)


# -- serialization ----------------------------------------------------------

STATE_FORMAT_VERSION = 1


def save_state(state, mesh, path):
    doc = {
        "format_version": STATE_FORMAT_VERSION,
        "mesh_hash": mesh.content_hash(),
        "mu": state.mu,
        "psi": np.column_stack([state.psi.real, state.psi.imag]).tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_state(path, mesh=None):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != STATE_FORMAT_VERSION:
        raise ValueError("unsupported state format version")
    if mesh is not None and doc["mesh_hash"] != mesh.content_hash():
        raise ValueError("state file belongs to a different mesh")
    arr = np.array(doc["psi"])
    return State(arr[:, 0] + 1j * arr[:, 1], doc["mu"])
