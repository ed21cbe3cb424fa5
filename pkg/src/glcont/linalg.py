"""Krylov machinery generalized to a weighted real inner product.

Complex nodal vectors are treated throughout as elements of a real vector
space of dimension 2n with the inner product

    <x, y> = Re sum_i w_i conj(x_i) y_i,

w_i the dual cell areas (or all ones).  This is forced by the Ginzburg-Landau
Jacobian, which is self-adjoint in this product but only real-linear.

Provided: MINRES with preconditioning and deflation, Lanczos with full
reorthogonalization for extremal/interior Ritz extraction, Jacobi and
AMG-V-cycle preconditioners, and block elimination for bordered systems.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from . import model
from .errors import Breakdown, InconsistentSystem, NoConvergence, SingularBorder, SingularDiagonal


class InnerProduct:
    """Weighted real inner product on complex vectors."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("inner-product weights must be positive")

    @staticmethod
    def for_mesh(mesh, unweighted=False):
        if unweighted:
            return InnerProduct(np.ones(mesh.n))
        return InnerProduct(mesh.control_volumes)

    def cdot(self, a, b):
        """Complex sesquilinear sum (no Re); the real inner product is its
        real part, the imaginary part measures the phase mismatch."""
        return complex(np.sum(self.weights * np.conj(a) * b))

    def dot(self, a, b):
        return float(np.real(np.sum(self.weights * np.conj(a) * b)))

    def norm(self, a):
        return float(np.sqrt(max(0.0, self.dot(a, a))))


def orthonormalize(vectors, ip, tol=1e-12):
    """Modified Gram-Schmidt in the real inner product; drops dependent
    vectors."""
    basis = []
    for v in vectors:
        u = np.array(v, dtype=complex)
        for _ in range(2):
            for b in basis:
                u = u - ip.dot(b, u) * b
        nrm = ip.norm(u)
        if nrm > tol * max(1.0, ip.norm(v)):
            basis.append(u / nrm)
    return basis


def make_projector(vectors, ip):
    """ip-orthogonal projector onto the complement of span(vectors)."""
    basis = orthonormalize(vectors, ip)
    if not basis:
        return (lambda x: x), []

    def proj(x):
        out = x
        for b in basis:
            out = out - ip.dot(b, out) * b
        return out

    return proj, basis


@dataclass
class SolveStats:
    iterations: int = 0
    residual_norm: float = 0.0
    converged: bool = False
    deflation_dim: int = 0


def minres(op, rhs, ip, precond=None, deflation_space=(), tol=1e-10, maxit=1000, debug_selfadjoint=False):
    """MINRES for op self-adjoint w.r.t. ip, with optional preconditioning
    and deflation.

    Returns (x, stats).  The iterates stay in the ip-orthogonal complement of
    the deflation space; for singular consistent systems this yields the
    minimum-norm-in-complement solution.
    """
    proj, basis = make_projector(deflation_space, ip)
    a_op = (lambda x: proj(op(proj(x)))) if basis else op
    if precond is None:
        m_op = proj if basis else (lambda x: x)
    else:
        m_op = (lambda x: proj(precond(proj(x)))) if basis else precond

    if debug_selfadjoint:
        rng = np.random.default_rng(1234)
        u = rng.standard_normal(len(rhs)) + 1j * rng.standard_normal(len(rhs))
        v = rng.standard_normal(len(rhs)) + 1j * rng.standard_normal(len(rhs))
        asym = abs(ip.dot(u, a_op(v)) - ip.dot(a_op(u), v))
        scl = ip.norm(u) * ip.norm(v)
        assert asym <= 1e-8 * max(1.0, scl), "operator not self-adjoint: %.2e" % asym

    b = proj(rhs) if basis else rhs
    x = np.zeros_like(b, dtype=complex)
    stats = SolveStats(deflation_dim=len(basis))

    r1 = b.copy()
    y = m_op(r1)
    beta1 = ip.dot(r1, y)
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    if beta1 == 0.0:
        stats.converged = True
        return x, stats

    oldb = 0.0
    beta = beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros_like(b, dtype=complex)
    w2 = np.zeros_like(b, dtype=complex)
    r2 = r1

    for itn in range(1, maxit + 1):
        v = y / beta
        y = a_op(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = ip.dot(v, y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = m_op(r2)
        oldb = beta
        beta2 = ip.dot(r2, y)
        if beta2 < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = np.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.sqrt(gbar**2 + beta**2)
        gamma = max(gamma, np.finfo(float).eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        stats.iterations = itn
        stats.residual_norm = phibar
        if phibar <= tol * beta1:
            stats.converged = True
            return x, stats

    # not converged: distinguish an inconsistent singular system (residual
    # stuck in the near-null space: op applied to it is comparatively tiny)
    res = b - proj(op(proj(x))) if basis else b - op(x)
    rn = ip.norm(res)
    stats.residual_norm = rn
    if rn > tol * max(ip.norm(b), 1e-300):
        a_res = a_op(res)
        if ip.norm(a_res) < 1e-6 * rn and rn > 1e-8 * ip.norm(b):
            raise InconsistentSystem(
                "rhs has a component outside the operator range (residual %.2e)" % rn
            )
        raise NoConvergence("MINRES: maxit=%d reached" % maxit, x=x, resnorm=rn)
    stats.converged = True
    return x, stats


@dataclass
class RitzPair:
    value: float
    vector: np.ndarray
    residual_norm: float


def lanczos_ritz(op, ip, k=5, exclude=(), max_subspace=None, rng=None, v0=None):
    """k smallest-in-magnitude Ritz pairs of op restricted to the
    ip-orthogonal complement of `exclude`, by Lanczos with full
    reorthogonalization.

    Residual norms are computed explicitly from the operator, not estimated.
    """
    n = len(ip.weights)
    if max_subspace is None:
        max_subspace = min(2 * n, max(40, 6 * k + 80))
    rng = rng or np.random.default_rng(7)
    proj, basis = make_projector(exclude, ip)
    a_op = (lambda x: proj(op(proj(x)))) if basis else op

    for attempt in range(4):
        if v0 is not None and attempt == 0:
            start = proj(np.asarray(v0, dtype=complex))
        else:
            start = proj(rng.standard_normal(n) + 1j * rng.standard_normal(n))
        nrm = ip.norm(start)
        if nrm > 1e-12:
            break
    else:
        raise Breakdown("could not build a start vector outside the excluded space")

    v = start / nrm
    vs = [v]
    alphas, betas = [], []
    v_prev = np.zeros(n, dtype=complex)
    beta_prev = 0.0
    for j in range(max_subspace):
        u = a_op(vs[-1])
        alpha = ip.dot(u, vs[-1])
        u = u - alpha * vs[-1] - beta_prev * v_prev
        # full reorthogonalization (twice is enough); also strip round-off
        # leakage into the excluded space, which would otherwise surface as
        # spurious zero Ritz values of the projected operator
        for _ in range(2):
            if basis:
                u = proj(u)
            for b in vs:
                u = u - ip.dot(b, u) * b
        beta = ip.norm(u)
        alphas.append(alpha)
        if beta < 1e-13 * max(1.0, abs(alpha)) or j == max_subspace - 1:
            break
        betas.append(beta)
        v_prev = vs[-1]
        beta_prev = beta
        vs.append(u / beta)

    if len(alphas) == 1 and not betas:
        theta = np.array(alphas)
        smat = np.ones((1, 1))
    else:
        theta, smat = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas))
    order = np.argsort(np.abs(theta))[: min(k, len(theta))]
    vmat = np.array(vs).T  # (n, m)
    pairs = []
    for idx in order:
        vec = vmat @ smat[:, idx]
        vec = proj(vec)
        nrm = ip.norm(vec)
        if nrm < 1e-12:
            continue
        vec = vec / nrm
        res = ip.norm(a_op(vec) - theta[idx] * vec)
        pairs.append(RitzPair(float(theta[idx]), vec, float(res)))
    return pairs


def build_preconditioner(mesh, state, kind="jacobi", ip=None):
    """Approximate inverse of R = K + 2|psi|^2, self-adjoint positive in the
    working inner product.

    kind = "jacobi": inverse diagonal (entries with magnitude < 1e-14 fall
    back to identity).  kind = "amg": one V-cycle of smoothed aggregation on
    the symmetrized real 2n form of R.
    """
    if kind == "none":
        return None
    if kind == "jacobi":
        diag = np.real(model.kinetic_matrix(mesh, state.mu).diagonal()) + 2.0 * np.abs(state.psi) ** 2
        bad = np.abs(diag) < 1e-14
        if np.all(bad):
            raise SingularDiagonal("screening operator has an all-zero diagonal")
        diag = np.where(bad, 1.0, diag)
        inv = 1.0 / diag
        return lambda x: inv * x
    if kind == "amg":
        import pyamg

        r_mat = model.screening_operator_matrix(mesh, state)
        n = mesh.n
        re = r_mat.real.tocsr()
        im = r_mat.imag.tocsr()
        r_real = scipy.sparse.bmat([[re, -im], [im, re]], format="csr")
        w = ip.weights if ip is not None else mesh.control_volumes
        sq = np.sqrt(np.concatenate([w, w]))
        d = scipy.sparse.diags(sq)
        dinv = scipy.sparse.diags(1.0 / sq)
        s_mat = (d @ r_real @ dinv).tocsr()
        s_mat = ((s_mat + s_mat.T) * 0.5).tocsr()  # scrub round-off asymmetry
        ml = pyamg.smoothed_aggregation_solver(s_mat, symmetry="symmetric", max_coarse=50)
        m_e = ml.aspreconditioner(cycle="V")

        def action(x):
            xr = np.concatenate([x.real, x.imag]) * sq
            yr = m_e @ xr
            yr = yr / sq
            return yr[:n] + 1j * yr[n:]

        return action
    raise ValueError("unknown preconditioner kind %r" % kind)


def bordered_solve(
    core,
    border_cols,
    border_rows,
    corner,
    rhs_top,
    rhs_bottom,
    null_guard=(),
    ip=None,
    precond=None,
    tol=1e-10,
    maxit=1000,
):
    """Solve the bordered system

        core x + sum_i y_i B_i           = rhs_top
        <c_q, x> + sum_i corner[q,i] y_i = rhs_bottom[q]

    by block elimination: inner MINRES solves with `core` deflated by
    null_guard, then a small dense least-squares solve for (y, gamma) where
    gamma are the components of x along the deflated directions.  Null-space
    consistency rows <nu, rhs_top - sum y_i B_i> = 0 close the system when
    core is singular.

    Returns (x, y, stats).
    """
    p = len(border_cols)
    q = len(border_rows)
    rhs_bottom = np.atleast_1d(np.asarray(rhs_bottom, dtype=float))
    corner = np.zeros((q, p)) if corner is None else np.atleast_2d(np.asarray(corner, dtype=float))

    _, nbasis = make_projector(null_guard, ip)
    r = len(nbasis)

    total = SolveStats(deflation_dim=r)

    def solve(b):
        xx, st = minres(
            core, b, ip, precond=precond, deflation_space=nbasis, tol=tol, maxit=maxit
        )
        total.iterations += st.iterations
        return xx

    w = solve(rhs_top)
    xs = [solve(b) for b in border_cols]

    # small system rows: border functionals, then null-consistency
    m_small = np.zeros((q + r, p + r))
    rhs_small = np.zeros(q + r)
    for qi, c in enumerate(border_rows):
        for i, xi in enumerate(xs):
            m_small[qi, i] = -ip.dot(c, xi) + corner[qi, i]
        for jr, nu in enumerate(nbasis):
            m_small[qi, p + jr] = ip.dot(c, nu)
        rhs_small[qi] = rhs_bottom[qi] - ip.dot(c, w)
    for jr, nu in enumerate(nbasis):
        for i, bi in enumerate(border_cols):
            m_small[q + jr, i] = ip.dot(nu, bi)
        rhs_small[q + jr] = ip.dot(nu, rhs_top)

    # Rows/columns may vanish legitimately (e.g. the null-consistency row
    # when the border column is orthogonal to the guard); filter them out
    # before judging conditioning, and let least squares handle the rest.
    row_norms = np.linalg.norm(m_small, axis=1)
    rscale = row_norms.max(initial=0.0)
    live_rows = row_norms > 1e-8 * max(rscale, 1e-300)
    sub = m_small[live_rows]
    col_norms = np.linalg.norm(sub, axis=0) if sub.size else np.zeros(p + r)
    live_cols = col_norms > 1e-8 * max(col_norms.max(initial=0.0), 1e-300)
    core_sub = sub[:, live_cols]
    if core_sub.size:
        svals = np.linalg.svd(core_sub, compute_uv=False)
        if svals[0] > 0 and svals[-1] <= 1e-12 * svals[0] and core_sub.shape[0] >= core_sub.shape[1]:
            raise SingularBorder("reduced bordered matrix condition exceeds 1e12")
    sol, *_ = np.linalg.lstsq(m_small, rhs_small, rcond=None)
    y = sol[:p]
    gamma = sol[p:]

    x = w.copy()
    for i, xi in enumerate(xs):
        x = x - y[i] * xi
    for jr, nu in enumerate(nbasis):
        x = x + gamma[jr] * nu

    # full-system residual for the stats record
    top_res = rhs_top - core(x)
    for i, bi in enumerate(border_cols):
        top_res = top_res - y[i] * bi
    bot_res = rhs_bottom - np.array(
        [ip.dot(c, x) + float(corner[qi] @ y) for qi, c in enumerate(border_rows)]
    )
    total.residual_norm = float(np.hypot(ip.norm(top_res), np.linalg.norm(bot_res)))
    total.converged = True
    return x, y, total
