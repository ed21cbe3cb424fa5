"""Tangent directions of the solution curves emerging at a branch point.

Near a singular point (psi_b, mu_b) the solution set is described by a
low-dimensional polynomial system obtained by projecting the equation onto
the Jacobian kernel (Lyapunov-Schmidt reduction).  For a one-dimensional
kernel this is the quadratic algebraic branching equation; for the
two-dimensional kernels forced by spatial symmetry an iterative scheme
builds reduced bivariate systems of increasing degree until one with only
isolated roots appears.  Each root, together with the accumulated
correction tables, assembles into a tangent direction

    dpsi = alpha_1 phi_1 + alpha_2 phi_2 + beta_1 v0,    dmu = beta_1.

For dihedral-symmetric points an equivariant-branching shortcut computes
the symmetry-breaking directions with a single linear solve.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import linalg, model
from .bifurcation import refine_kernel_vector
from .errors import (
    AssumptionViolated,
    DegenerateLeastSquares,
    DegenerateQuadratic,
    MaxDepth,
    MissingTable,
    NoRealRoots,
    NotDihedral,
    ZeroTangent,
)
from .symmetry import GroupSpec, apply_action, best_phase_alignment, isotropy_classes

log = logging.getLogger("glcont.tangents")

# "not in the range of J" assumptions: the kernel projection must carry at
# least this fraction of the vector's norm
NOT_IN_RANGE_TOL = 1e-6
# "in the range of J" assumption on t3: kernel projection at most this fraction
IN_RANGE_TOL = 1e-5


@dataclass
class TangentConfig:
    max_depth: int = 12
    newton_starts: int = 200
    cluster_tol: float = 1e-6
    root_tol: float = 1e-10
    minres_tol: float = 1e-12
    minres_maxit: int = 6000
    preconditioner: str = "jacobi"
    derivative_bound: int = 4
    prefer_ebl: bool = True

    def __post_init__(self):
        if self.max_depth < 2:
            raise ValueError("max_depth must be >= 2")
        if self.derivative_bound < 3:
            raise ValueError("derivative_bound must be >= 3")


@dataclass
class TangentDirection:
    dpsi: np.ndarray
    dmu: float
    provenance: str  # "ls_n1" | "ls_n2" | "ebl" | "through"
    symmetry_label: str | None = None
    alpha: tuple | None = None
    beta1: float = 0.0
    depth: int | None = None
    eta: float = 0.0

    def flipped(self):
        return TangentDirection(
            -self.dpsi, -self.dmu, self.provenance, self.symmetry_label,
            self.alpha, -self.beta1, self.depth, self.eta,
        )


@dataclass
class ReducedSystem:
    """The degree-k bivariate system projected onto the kernel:

        sum_i a1[i] x^i y^(k-i) + beta (b1 x + b3 y) = 0
        sum_i a2[i] x^i y^(k-i) + beta  b2 y         = 0

    with (x, y) = (alpha_1, alpha_2) and beta the last free Taylor
    coefficient of mu.
    """

    k: int
    a1: np.ndarray
    a2: np.ndarray
    b1: float
    b2: float
    b3: float

    def __post_init__(self):
        self.a1 = np.asarray(self.a1, dtype=float)
        self.a2 = np.asarray(self.a2, dtype=float)
        if len(self.a1) != self.k + 1 or len(self.a2) != self.k + 1:
            raise ValueError("coefficient arrays must have length k+1")

    def monomials(self, x, y):
        return np.array([x**i * y ** (self.k - i) for i in range(self.k + 1)])

    def residual(self, x, y, beta):
        mono = self.monomials(x, y)
        return np.array(
            [
                float(self.a1 @ mono) + beta * (self.b1 * x + self.b3 * y),
                float(self.a2 @ mono) + beta * self.b2 * y,
            ]
        )

    def jacobian(self, x, y, beta):
        k = self.k
        d1x = sum(i * x ** (i - 1) * y ** (k - i) * self.a1[i] for i in range(1, k + 1))
        d1y = sum((k - i) * x**i * y ** (k - 1 - i) * self.a1[i] for i in range(k))
        d2x = sum(i * x ** (i - 1) * y ** (k - i) * self.a2[i] for i in range(1, k + 1))
        d2y = sum((k - i) * x**i * y ** (k - 1 - i) * self.a2[i] for i in range(k))
        return np.array(
            [
                [d1x + beta * self.b1, d1y + beta * self.b3],
                [d2x, d2y + beta * self.b2],
            ]
        )


@dataclass
class KernelData:
    """Kernel bases and correction tables accumulated by the reduction.

    Tables are keyed by the expansion order m: kappa[m] is a real array of
    length m+1 (the beta_m polynomial coefficients), q[m] and v[m] are lists
    of m+1 nodal vectors.  z[k] holds the k+1 right-hand-side vectors for
    the next step's linear solves.
    """

    mesh: object
    ip: object
    state: model.State
    phi: list
    phi_star: list
    v0: np.ndarray
    t1: np.ndarray = None
    t2: np.ndarray = None
    t3: np.ndarray = None
    b1: float = 0.0
    b2: float = 0.0
    b3: float = 0.0
    kappa: dict = field(default_factory=dict)
    q: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    z: dict = field(default_factory=dict)
    y: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.phi)

    def ext(self, m, i):
        """Extended vector (q_i^(m), kappa_i^(m)) with the out-of-range
        convention q = 0, kappa = 0."""
        if m not in self.q:
            raise MissingTable("tables for order %d have not been computed" % m)
        if i < 0 or i > m:
            return np.zeros(self.mesh.n, dtype=complex), 0.0
        return self.q[m][i], float(self.kappa[m][i])


@dataclass
class LSStep:
    """Outcome of one Lyapunov-Schmidt stage: either a resolved system with
    assembled tangents, or a context signal to iterate deeper."""

    resolved: bool
    depth: int
    system: ReducedSystem
    tangents: list = field(default_factory=list)
    roots: list = field(default_factory=list)


# -- kernel data assembly ----------------------------------------------------


def _gauge(psi, ip):
    g = 1j * psi
    nrm = ip.norm(g)
    return [g / nrm] if nrm > 1e-12 else []


def _range_project(kd, x):
    """Project off the kernel and gauge directions (the range of the
    self-adjoint singular J is their orthogonal complement)."""
    out = x
    for b in _gauge(kd.state.psi, kd.ip) + kd.phi:
        out = out - kd.ip.dot(b, out) * b
    return out


def _deflated_solve(kd, rhs, config):
    """Solve J x = rhs in the range of J, deflating gauge and kernel."""
    mesh, ip, st = kd.mesh, kd.ip, kd.state

    def j_op(x):
        return model.jacobian_psi_apply(mesh, st, x)

    precond = linalg.build_preconditioner(mesh, st, config.preconditioner, ip)
    defl = _gauge(st.psi, ip) + kd.phi
    x, _ = linalg.minres(
        j_op, _range_project(kd, rhs), ip, precond=precond,
        deflation_space=defl, tol=config.minres_tol, maxit=config.minres_maxit,
    )
    return _range_project(kd, x)


def kernel_basis(mesh, ip, bp, config=None):
    """Build the KernelData at a located branch point: refined orthonormal
    kernel, the through-direction solve J v0 = -J_mu, the t-vectors and the
    projected coefficients b1, b2, b3.

    For a two-dimensional kernel the adjoint basis is re-mixed so that t1
    projects onto phi*_1 alone (the normalization the reduction assumes);
    violated solvability assumptions raise AssumptionViolated.
    """
    config = config or TangentConfig()
    st = bp.state
    precond = linalg.build_preconditioner(mesh, st, config.preconditioner, ip)

    phi = []
    for raw in bp.kernel:
        v = refine_kernel_vector(mesh, ip, st, raw, others=phi, precond=precond)
        for b in _gauge(st.psi, ip) + phi:
            v = v - ip.dot(b, v) * b
        phi.append(v / ip.norm(v))

    kd = KernelData(mesh=mesh, ip=ip, state=st, phi=phi, phi_star=list(phi), v0=None)

    jmu = model.jacobian_mu(mesh, st)
    kd.v0 = _deflated_solve(kd, -jmu, config)

    h = lambda a, b: model.hessian_psipsi_apply(st, a, b)
    hmu = lambda a: model.hessian_psimu_apply(mesh, st, a)
    kd.t1 = h(phi[0], kd.v0) + hmu(phi[0])
    kd.t3 = 0.5 * h(kd.v0, kd.v0) + hmu(kd.v0) + 0.5 * model.hessian_mumu(mesh, st)

    if len(phi) == 1:
        kd.b1 = ip.dot(phi[0], kd.t1)
        kd.b2 = kd.b1
        return kd

    kd.t2 = h(phi[1], kd.v0) + hmu(phi[1])
    c1, c2 = ip.dot(phi[0], kd.t1), ip.dot(phi[1], kd.t1)
    proj1 = float(np.hypot(c1, c2))
    nt1 = max(ip.norm(kd.t1), 1e-300)
    if proj1 <= NOT_IN_RANGE_TOL * nt1:
        raise AssumptionViolated(
            "t1 lies in the range of J (kernel projection too small)",
            residual=proj1 / nt1,
        )
    # rotate the adjoint basis so <phi*_2, t1> = 0
    kd.phi_star = [
        (c1 * phi[0] + c2 * phi[1]) / proj1,
        (-c2 * phi[0] + c1 * phi[1]) / proj1,
    ]
    kd.b1 = ip.dot(kd.phi_star[0], kd.t1)
    kd.b2 = ip.dot(kd.phi_star[1], kd.t2)
    kd.b3 = ip.dot(kd.phi_star[0], kd.t2)

    nt2 = max(ip.norm(kd.t2), 1e-300)
    proj2 = float(np.hypot(ip.dot(phi[0], kd.t2), ip.dot(phi[1], kd.t2)))
    if proj2 <= NOT_IN_RANGE_TOL * nt2:
        raise AssumptionViolated(
            "t2 lies in the range of J (kernel projection too small)",
            residual=proj2 / nt2,
        )
    if abs(kd.b2) <= NOT_IN_RANGE_TOL * nt2:
        raise AssumptionViolated(
            "determinant condition failed: <phi*_2, t2> vanishes",
            residual=abs(kd.b2) / nt2,
        )
    nt3 = max(ip.norm(kd.t3), 1e-300)
    proj3 = max(abs(ip.dot(b, kd.t3)) for b in kd.phi_star)
    if proj3 > IN_RANGE_TOL * nt3:
        raise AssumptionViolated(
            "t3 is not in the range of J (kernel projection too large)",
            residual=proj3 / nt3,
        )
    return kd


# -- n = 1: the algebraic branching equation ---------------------------------


def ls_n1_tangents(kd, config=None):
    """Tangents at a one-dimensional-kernel branch point from the quadratic
    a alpha^2 + b alpha beta + c beta^2 = 0, solved in ray form."""
    config = config or TangentConfig()
    mesh, ip, st = kd.mesh, kd.ip, kd.state
    phi = kd.phi[0]
    h = lambda u, v: model.hessian_psipsi_apply(st, u, v)
    hmu = lambda u: model.hessian_psimu_apply(mesh, st, u)
    a = ip.dot(phi, 0.5 * h(phi, phi))
    b = ip.dot(phi, h(phi, kd.v0) + hmu(phi))
    c = ip.dot(phi, 0.5 * h(kd.v0, kd.v0) + hmu(kd.v0) + 0.5 * model.hessian_mumu(mesh, st))

    scale = max(abs(a), abs(b), abs(c))
    if scale < 1e-13:
        raise DegenerateQuadratic("all branching coefficients vanish")

    rays = []  # (alpha, beta) rays
    if abs(a) <= 1e-9 * scale:
        rays.append((1.0, 0.0))
        if abs(b) > 1e-9 * scale or abs(c) > 1e-9 * scale:
            rays.append((-c, b))
    else:
        disc = b * b - 4.0 * a * c
        if disc < -1e-9 * scale**2:
            log.info("branching discriminant negative (%.3e); no real roots", disc)
            raise NoRealRoots("negative discriminant %.3e" % disc)
        disc = max(disc, 0.0)
        for sgn in (1.0, -1.0):
            rays.append(((-b + sgn * np.sqrt(disc)) / (2.0 * a), 1.0))

    tangents = []
    for alpha, beta in rays:
        nrm = float(np.hypot(alpha, beta))
        if nrm < 1e-14:
            continue
        alpha, beta = alpha / nrm, beta / nrm
        dpsi = alpha * phi + beta * kd.v0
        t = _normalized_direction(kd, dpsi, beta, "ls_n1", alpha=(alpha,), beta1=beta, depth=2)
        if t is not None:
            tangents.append(t)
    return tangents


# -- n = 2: the iterative reduction ------------------------------------------


def isolation_check(rs, rtol=1e-7, a_floor=0.0):
    """True when the reduced system has only isolated solutions.

    The system has a solution continuum exactly when the coefficient
    relations b2*a1[0] = b3*a2[0], a2[k] = 0 and, for i = 1..k,
    b2*a1[i] = b1*a2[i-1] + b3*a2[i] all hold; isolation means any relation
    fails beyond the relative tolerance.  `a_floor` is the absolute level
    below which a-coefficients count as zero (symmetry can annihilate entire
    monomial families, leaving pure round-off).
    """
    amax = max(np.max(np.abs(rs.a1)), np.max(np.abs(rs.a2)), 1e-300)
    bmax = max(abs(rs.b1), abs(rs.b2), abs(rs.b3), 1e-300)
    tol = bmax * max(rtol * amax, a_floor)
    if abs(rs.b2 * rs.a1[0] - rs.b3 * rs.a2[0]) > tol:
        return True
    if abs(rs.a2[rs.k]) * bmax > tol:
        return True
    for i in range(1, rs.k + 1):
        res = rs.b2 * rs.a1[i] - rs.b1 * rs.a2[i - 1] - rs.b3 * rs.a2[i]
        if abs(res) > tol:
            return True
    return False


def reduced_newton_solve(rs, beta_fixed=None, starts=200, rng=None,
                         cluster_tol=1e-6, root_tol=1e-10):
    """Roots of a resolved reduced system, as (alpha1, alpha2, beta) triples.

    With beta_fixed given, a multi-start Newton search runs in the
    (alpha1, alpha2) plane at that beta (the nontrivial roots of the initial
    system).  With beta_fixed None, beta is eliminated through the second
    equation, leaving a homogeneous polynomial whose real rays are found by
    a companion-matrix root solve; each ray's beta is recovered afterwards.
    """
    if beta_fixed is None:
        roots = _ray_roots(rs)
    else:
        roots = _fixed_beta_roots(rs, beta_fixed, starts, rng, cluster_tol, root_tol)
    if len(roots) > rs.k**2:
        raise AssertionError(
            "root count %d exceeds the Bezout bound %d" % (len(roots), rs.k**2)
        )
    return roots


def _fixed_beta_roots(rs, beta, starts, rng, cluster_tol, root_tol):
    rng = rng or np.random.default_rng(5)
    amax = max(np.max(np.abs(rs.a1)), np.max(np.abs(rs.a2)), 1e-300)
    bmax = max(abs(rs.b1), abs(rs.b2), abs(rs.b3))
    scale = max(amax, bmax, 1.0)
    # nontrivial roots live at the scale where the degree-k terms balance
    # the linear beta terms
    rho = (abs(beta) * bmax / amax) ** (1.0 / (rs.k - 1)) if bmax > 0 else 1.0
    rho = min(max(rho, 1e-3), 1e6)
    guesses = [
        (rho * np.cos(th), rho * np.sin(th))
        for th in np.linspace(0, 2 * np.pi, 64, endpoint=False)
    ]
    guesses += [tuple(rho * rng.uniform(-2.0, 2.0, size=2)) for _ in range(max(0, starts - 64))]

    found = []
    for x0, y0 in guesses:
        x, y = x0, y0
        ok = False
        for _ in range(60):
            f = rs.residual(x, y, beta)
            if np.linalg.norm(f) <= root_tol * scale:
                ok = True
                break
            jac = rs.jacobian(x, y, beta)
            try:
                dx, dy = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError:
                break
            if not np.isfinite(dx) or not np.isfinite(dy):
                break
            x, y = x + dx, y + dy
            if abs(x) > 1e6 or abs(y) > 1e6:
                break
        if not ok or np.hypot(x, y) < 1e-6 * rho:
            continue
        for fx, fy in found:
            if np.hypot(x - fx, y - fy) < cluster_tol * max(rho, np.hypot(fx, fy)):
                break
        else:
            found.append((x, y))
    return [(x, y, beta) for x, y in found]


def _ray_roots(rs):
    """Real rays of the beta-eliminated homogeneous polynomial

        b2*y*S1(x,y) - (b1*x + b3*y)*S2(x,y) = 0   (degree k+1),

    each verified against the full system with beta recovered."""
    k = rs.k
    c = np.zeros(k + 2)  # coefficient of x^i y^(k+1-i)
    for i in range(k + 1):
        c[i] += rs.b2 * rs.a1[i]
        c[i + 1] -= rs.b1 * rs.a2[i]
        c[i] -= rs.b3 * rs.a2[i]
    cmax = np.max(np.abs(c))
    if cmax < 1e-300:
        return []

    candidates = []
    # roots in t = x / y (highest power first for the companion solve)
    coeffs = c[::-1]
    nz = np.nonzero(np.abs(coeffs) > 1e-13 * cmax)[0]
    if len(nz):
        coeffs = coeffs[nz[0]:]
        if len(coeffs) > 1:
            for t in np.roots(coeffs):
                if abs(t.imag) <= 1e-8 * (1.0 + abs(t.real)):
                    nrm = np.hypot(t.real, 1.0)
                    candidates.append((t.real / nrm, 1.0 / nrm))
    if abs(c[k + 1]) <= 1e-10 * cmax:
        candidates.append((1.0, 0.0))

    roots = []
    scale = max(np.max(np.abs(rs.a1)), np.max(np.abs(rs.a2)), 1e-300)
    for x, y in candidates:
        x, y = _polish_ray(rs, c, x, y)
        if x < 0 or (abs(x) < 1e-14 and y < 0):  # canonical ray sign
            x, y = -x, -y
        mono = rs.monomials(x, y)
        s1 = float(rs.a1 @ mono)
        s2 = float(rs.a2 @ mono)
        if abs(y * rs.b2) > 1e-10:
            beta = -s2 / (y * rs.b2)
        elif abs(x * rs.b1 + y * rs.b3) > 1e-10:
            beta = -s1 / (x * rs.b1 + y * rs.b3)
        else:
            beta = 0.0
        if np.linalg.norm(rs.residual(x, y, beta)) > 1e-7 * scale * max(1.0, abs(beta)):
            continue
        for rx, ry, _ in roots:
            if np.hypot(x - rx, y - ry) < 1e-8:
                break
        else:
            roots.append((x, y, beta))
    return roots


def _polish_ray(rs, c, x, y):
    """Newton polish of a homogeneous-polynomial ray on the unit circle."""
    th = math.atan2(y, x)
    k1 = rs.k + 1
    for _ in range(30):
        ct, st = math.cos(th), math.sin(th)
        p = sum(c[i] * ct**i * st ** (k1 - i) for i in range(k1 + 1))
        dp = sum(
            c[i] * (-(i) * ct ** (i - 1) * st ** (k1 - i + 1)
                    + (k1 - i) * ct ** (i + 1) * st ** (k1 - i - 1))
            for i in range(k1 + 1)
        )
        if abs(dp) < 1e-14 or abs(p) < 1e-15 * max(1.0, np.max(np.abs(c))):
            break
        th -= p / dp
    return math.cos(th), math.sin(th)


def ls_n2_initial(kd, config=None):
    """Initial stage of the two-dimensional reduction: builds the degree-2
    system from the Hessian, and either solves it (isolated case) or stores
    the kappa/z/q tables for iteration."""
    config = config or TangentConfig()
    st = kd.state
    phi1, phi2 = kd.phi
    h = lambda u, v: model.hessian_psipsi_apply(st, u, v)
    y2 = [0.5 * h(phi2, phi2), h(phi1, phi2), 0.5 * h(phi1, phi1)]
    kd.y[2] = y2
    a1 = [kd.ip.dot(kd.phi_star[0], yi) for yi in y2]
    a2 = [kd.ip.dot(kd.phi_star[1], yi) for yi in y2]
    rs = ReducedSystem(2, a1, a2, kd.b1, kd.b2, kd.b3)
    a_floor = 1e-8 * max(kd.ip.norm(yi) for yi in y2)

    if isolation_check(rs, a_floor=a_floor):
        # the initial system is quasi-homogeneous in (alpha, beta): scaling
        # all three by lambda scales both equations by lambda^2, so its
        # solutions are rays and the beta-elimination solve applies
        roots = reduced_newton_solve(rs, beta_fixed=None)
        tangents = [through_tangent(kd)]
        for x, y, beta in roots:
            t = assemble_tangent(kd, x, y, 2, beta1=beta)
            if t is not None:
                tangents.append(t)
        return LSStep(True, 2, rs, tangents=tangents, roots=roots)

    kap = np.array([-rs.a2[0] / kd.b2, -rs.a2[1] / kd.b2])
    kd.kappa[1] = kap
    kd.q[1] = [phi2 + kap[0] * kd.v0, phi1 + kap[1] * kd.v0]
    kd.z[2] = [
        y2[0] + kap[0] * kd.t2 + kap[0] ** 2 * kd.t3,
        y2[1] + kap[0] * kd.t1 + kap[1] * kd.t2 + 2.0 * kap[0] * kap[1] * kd.t3,
        y2[2] + kap[1] * kd.t1 + kap[1] ** 2 * kd.t3,
    ]
    return LSStep(False, 2, rs)


def ls_n2_iterate(kd, k, config=None):
    """One deeper stage (k >= 3): solve the k linear systems for v^(k-1),
    assemble the degree-k reduced system, and resolve or extend the tables."""
    config = config or TangentConfig()
    if k > config.max_depth:
        raise MaxDepth("reduction did not resolve by depth %d" % config.max_depth)
    if k - 1 not in kd.z:
        raise MissingTable("no right-hand sides of order %d; run prior stages" % (k - 1))

    kd.v[k - 1] = [_deflated_solve(kd, -z, config) for z in kd.z[k - 1]]
    yk = [compute_y_terms(kd, k, i, config.derivative_bound) for i in range(k + 1)]
    kd.y[k] = yk
    a1 = [kd.ip.dot(kd.phi_star[0], yi) for yi in yk]
    a2 = [kd.ip.dot(kd.phi_star[1], yi) for yi in yk]
    rs = ReducedSystem(k, a1, a2, kd.b1, kd.b2, kd.b3)
    a_floor = 1e-8 * max(kd.ip.norm(yi) for yi in yk)

    if isolation_check(rs, a_floor=a_floor):
        roots = reduced_newton_solve(rs, beta_fixed=None)
        tangents = []
        kap1 = kd.kappa[1]
        for x, y, beta in roots:
            beta1 = x * kap1[1] + y * kap1[0]
            t = assemble_tangent(kd, x, y, k, beta1=beta1, beta_last=beta)
            if t is not None:
                tangents.append(t)
        return LSStep(True, k, rs, tangents=tangents, roots=roots)

    kap = np.array([-rs.a2[i] / kd.b2 for i in range(k)])
    kd.kappa[k - 1] = kap
    kd.q[k - 1] = [kd.v[k - 1][i] + kap[i] * kd.v0 for i in range(k)]
    u1 = kd.t1 + 2.0 * kd.kappa[1][1] * kd.t3
    u2 = kd.t2 + 2.0 * kd.kappa[1][0] * kd.t3
    kd.z[k] = [
        yk[i]
        + (kap[i - 1] if 1 <= i <= k else 0.0) * u1
        + (kap[i] if i <= k - 1 else 0.0) * u2
        for i in range(k + 1)
    ]
    return LSStep(False, k, rs)


def ls_tangents(kd, config=None):
    """Run the two-dimensional reduction to resolution; returns the final
    LSStep (resolved, with tangents)."""
    config = config or TangentConfig()
    step = ls_n2_initial(kd, config)
    k = 2
    while not step.resolved:
        k += 1
        step = ls_n2_iterate(kd, k, config)
    log.info("reduction resolved at degree k=%d with %d roots", k, len(step.roots))
    return step


# -- tangent assembly ---------------------------------------------------------


def _normalized_direction(kd, dpsi, dmu, provenance, **extra):
    ip = kd.ip
    for b in _gauge(kd.state.psi, ip):
        dpsi = dpsi - ip.dot(b, dpsi) * b
    nrm = float(np.sqrt(ip.dot(dpsi, dpsi) + dmu * dmu))
    if nrm < 1e-14:
        return None
    return TangentDirection(dpsi / nrm, dmu / nrm, provenance, **extra)


def through_tangent(kd):
    """The direction of the branch already passing through the point:
    dpsi = v0, dmu = 1 (the isolated (0, 0, beta) solution)."""
    t = _normalized_direction(kd, kd.v0.copy(), 1.0, "through",
                              alpha=(0.0, 0.0), beta1=1.0, depth=2)
    if t is None:
        raise ZeroTangent("through-branch direction has zero norm")
    return t


def assemble_tangent(kd, alpha1, alpha2, k_resolved, beta1, beta_last=None):
    """Tangent from a reduced-system root:

        dpsi = alpha_1 phi_1 + alpha_2 phi_2 + beta_1 v0,    dmu = beta_1,

    beta_1 being the root's beta at the initial stage and the degree-1
    kappa polynomial evaluated at (alpha_1, alpha_2) afterwards."""
    if kd.n == 1:
        dpsi = alpha1 * kd.phi[0] + beta1 * kd.v0
        alpha = (alpha1,)
    else:
        dpsi = alpha1 * kd.phi[0] + alpha2 * kd.phi[1] + beta1 * kd.v0
        alpha = (alpha1, alpha2)
    return _normalized_direction(
        kd, dpsi, beta1, "ls_n1" if kd.n == 1 else "ls_n2",
        alpha=alpha, beta1=beta1, depth=k_resolved,
    )


def symmetry_filter(tangents, kd, group, tol=1e-6):
    """One representative per orbit of the group action on emerging-branch
    tangents.

    Two tangents are equivalent when some group element (combined with the
    phase that re-aligns the transformed base state and an overall ray sign)
    maps one onto the other.
    """
    mesh, ip, psi = kd.mesh, kd.ip, kd.state.psi
    elements = group.elements() if hasattr(group, "elements") else list(group)

    usable = []
    for g in elements:
        gpsi = apply_action(g, psi, mesh)
        try:
            eta, res = best_phase_alignment(gpsi, psi, ip)
        except Exception:
            continue
        if res <= 1e-5 * max(ip.norm(psi), 1e-300):
            usable.append((g, eta))

    reps = []
    for t in tangents:
        if any(_tangents_equivalent(t, r, usable, mesh, ip, tol) for r in reps):
            continue
        reps.append(t)
    return reps


def _tangents_equivalent(t, r, usable, mesh, ip, tol):
    for g, eta in usable:
        mapped = np.exp(1j * eta) * apply_action(g, t.dpsi, mesh)
        for sign in (1.0, -1.0):
            if abs(sign * t.dmu - r.dmu) > tol:
                continue
            if ip.norm(sign * mapped - r.dpsi) <= tol:
                return True
    return False


# -- equivariant branching shortcut -------------------------------------------


def ebl_tangent(kd, bp, gamma, config=None):
    """Symmetry-breaking tangent at a dihedral point via the equivariant
    branching lemma: the emerging branch with isotropy <gamma> has a tangent
    fixed by gamma, determined by a least-squares fit in the kernel plane.

    Requires the degree-1 kappa polynomial (one linear solve, available
    after the initial reduction stage)."""
    config = config or TangentConfig()
    if 1 not in kd.kappa:
        raise MissingTable("kappa tables missing; run the initial reduction stage")
    mesh, ip, psi = kd.mesh, kd.ip, bp.state.psi

    gpsi = apply_action(gamma, psi, mesh)
    _, res = best_phase_alignment(gpsi, psi, ip)
    nrm = max(ip.norm(psi), 1e-300)
    if res > 1e-4 * nrm:
        raise NotDihedral(
            "state is not invariant under %s (relative residual %.2e)"
            % (gamma.word, res / nrm)
        )

    cross = ip.cdot(psi, gpsi)
    if abs(cross) < 1e-12 * nrm**2:
        raise DegenerateLeastSquares("phase-alignment functional is degenerate")
    eta = 0.5 * float(np.angle(cross))

    kap = kd.kappa[1]
    rot = np.exp(1j * eta)
    chi = [rot * (kd.phi[0] + kap[1] * kd.v0), rot * (kd.phi[1] + kap[0] * kd.v0)]
    d = []
    for c in chi:
        gc = apply_action(gamma, c, mesh) - c
        d.append(np.real(gc) + np.imag(gc))
    w = ip.weights
    s11 = float(np.sum(w * d[0] * d[0]))
    s12 = float(np.sum(w * d[0] * d[1]))
    s22 = float(np.sum(w * d[1] * d[1]))

    best = None
    for alpha in ((-s12, s11), (s22, -s12)):
        na = np.hypot(*alpha)
        if na < 1e-14 * max(s11, s22, 1e-300):
            continue
        a1, a2 = alpha[0] / na, alpha[1] / na
        fixed = a1 * chi[0] + a2 * chi[1]
        fn = ip.norm(fixed)
        if fn < 1e-12:
            continue
        resid = ip.norm(apply_action(gamma, fixed, mesh) - fixed) / fn
        if best is None or resid < best[2]:
            best = (a1, a2, resid)
    if best is None:
        raise DegenerateLeastSquares("both least-squares candidates are degenerate")
    a1, a2, resid = best
    log.info("equivariant tangent for %s: alpha=(%.4f, %.4f) gamma-residual=%.2e",
             gamma.word, a1, a2, resid)

    beta1 = a1 * kap[1] + a2 * kap[0]
    dpsi = a1 * (kd.phi[0] + kap[1] * kd.v0) + a2 * (kd.phi[1] + kap[0] * kd.v0)
    t = _normalized_direction(
        kd, dpsi, beta1, "ebl",
        symmetry_label=gamma.word, alpha=(a1, a2), beta1=beta1, depth=2, eta=eta,
    )
    if t is None:
        raise DegenerateLeastSquares("equivariant tangent collapsed to zero")
    return t


def ebl_tangents(kd, bp, m, config=None):
    """Equivariant tangents for every isotropy class of a D_m point."""
    return [ebl_tangent(kd, bp, gamma, config) for gamma in isotropy_classes(m)]


# -- index-set enumeration and y-term assembly (the high-order bookkeeping) --


def enumerate_k_index_sets(k, j):
    """All non-decreasing j-tuples of parts in {1..k-j+1} summing to k
    (one canonical representative per permutation class)."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            last = remaining
            if (not prefix or prefix[-1] <= last) and 1 <= last <= k - j + 1:
                out.append(tuple(prefix) + (last,))
            return
        lo = prefix[-1] if prefix else 1
        hi = min(remaining - (slots - 1), k - j + 1)
        for p in range(lo, hi + 1):
            rec(prefix + [p], remaining - p, slots - 1)

    if 1 <= j <= k:
        rec([], k, j)
    return out


def enumerate_i_index_sets(i, j, K):
    """All j-tuples I with sum(I) = i and 0 <= I_p <= K_p, canonical under
    permutations of positions holding equal K parts."""
    out = []

    def rec(prefix, remaining):
        m = len(prefix)
        if m == j - 1:
            p = remaining
            if 0 <= p <= K[j - 1] and (j < 2 or K[j - 2] != K[j - 1] or prefix[-1] <= p):
                out.append(tuple(prefix) + (p,))
            return
        p0 = prefix[-1] if (m != 0 and K[m] == K[m - 1]) else 0
        for p in range(p0, min(K[m], remaining) + 1):
            rec(prefix + [p], remaining - p)

    if j >= 1:
        rec([], i)
    return out


def _permutation_count(K, I):
    """Number of distinct permutations of the pair multiset ((K_p, I_p))_p."""
    counts = Counter(zip(K, I))
    c = math.factorial(len(K))
    for mult in counts.values():
        c //= math.factorial(mult)
    return c


def compute_y_terms(kd, k, i, derivative_bound=4):
    """The order-k monomial coefficient vector y_i^(k): Hessian pairings of
    the low-order corrections with the fresh v^(k-1) solves, symmetrized
    Hessian pairings of intermediate orders, and the higher-derivative sums
    over canonical index sets with permutation multiplicities.

    Derivatives of order above 4 carry only mu-differentiations beyond the
    supported stencil depth and are omitted (the bound caps there).
    """
    if k - 1 not in kd.v:
        raise MissingTable("v-table of order %d missing" % (k - 1))
    mesh, st = kd.mesh, kd.state
    y = np.zeros(mesh.n, dtype=complex)

    v = kd.v[k - 1]
    for i1 in (0, 1):
        i2 = i - i1
        if 0 <= i2 <= k - 1:
            y = y + model.hessian_apply(mesh, st, kd.ext(1, i1), (v[i2], 0.0))

    for k1 in range(2, k - 1):
        k2 = k - k1
        if k1 > k2:
            continue
        for i1 in range(0, min(k1, i) + 1):
            i2 = i - i1
            if i2 < 0 or i2 > k2 or (k1 == k2 and i1 > i2):
                continue
            c = 0.5 if (k1 == k2 and i1 == i2) else 1.0
            y = y + c * model.hessian_apply(mesh, st, kd.ext(k1, i1), kd.ext(k2, i2))

    for j in range(3, min(k, derivative_bound) + 1):
        fact = math.factorial(j)
        for K in enumerate_k_index_sets(k, j):
            for I in enumerate_i_index_sets(i, j, K):
                c = _permutation_count(K, I)
                vs = [kd.ext(K[p], I[p]) for p in range(j)]
                y = y + (c / fact) * model.gl_derivative_apply(mesh, st, vs)
    return y


# -- Taylor expansion assembly (verification aid) -----------------------------


def assemble_expansion(kd, root, k_resolved, config=None):
    """Callables (psi(s), mu(s)) of the order-k Taylor expansion along one
    resolved root, including the final correction solve J w_k = -r_k so the
    residual of the full equation is O(s^(k+1))."""
    config = config or TangentConfig()
    x, y, beta_last = root
    k = k_resolved

    betas = {m: float(sum(x**i * y ** (m - i) * kd.kappa[m][i] for i in range(m + 1)))
             for m in kd.kappa if m <= k - 2}
    betas[k - 1] = float(beta_last)
    betas[k] = 0.0

    ws = {1: betas[1] * kd.v0}
    for m in range(2, k):
        if m not in kd.v:
            raise MissingTable("v-table of order %d missing" % m)
        wm = betas[m] * kd.v0
        for i in range(m + 1):
            wm = wm + x**i * y ** (m - i) * kd.v[m][i]
        ws[m] = wm

    # residual coefficient r_k at the root, then the closing solve
    if k not in kd.y:
        raise MissingTable("y-table of order %d missing" % k)
    rk = np.zeros(kd.mesh.n, dtype=complex)
    for i in range(k + 1):
        rk = rk + x**i * y ** (k - i) * kd.y[k][i]
    if k == 2:
        rk = rk + beta_last * (x * kd.t1 + y * kd.t2) + beta_last**2 * kd.t3
    else:
        u1 = kd.t1 + 2.0 * kd.kappa[1][1] * kd.t3
        u2 = kd.t2 + 2.0 * kd.kappa[1][0] * kd.t3
        rk = rk + beta_last * (x * u1 + y * u2)
    ws[k] = _deflated_solve(kd, -rk, config)

    phi_part = x * kd.phi[0] + y * kd.phi[1] if kd.n == 2 else x * kd.phi[0]
    psi_b, mu_b = kd.state.psi, kd.state.mu

    def psi_of(s):
        out = psi_b + s * phi_part
        for m, wm in ws.items():
            out = out + s**m * wm
        return out

    def mu_of(s):
        return mu_b + sum(s**m * bm for m, bm in betas.items())

    return psi_of, mu_of


# -- orchestration ------------------------------------------------------------


def emerging_tangents(mesh, ip, bp, group=None, config=None):
    """All representative tangents of the branches emerging at a branch
    point: the one-dimensional quadratic for simple kernels, the equivariant
    shortcut at dihedral points of order >= 4, and the full reduction with
    orbit filtering otherwise.  The through-branch direction is included."""
    config = config or TangentConfig()
    kd = kernel_basis(mesh, ip, bp, config)

    if kd.n == 1:
        return kd, ls_n1_tangents(kd, config)

    sub = bp.group_invariance
    if (
        config.prefer_ebl
        and group is not None
        and group.kind == "D"
        and sub is not None
        and sub.reflection_axis is not None
        and sub.rot_order >= 4
    ):
        step = ls_n2_initial(kd, config)
        if not step.resolved:
            try:
                return kd, [through_tangent(kd)] + ebl_tangents(kd, bp, sub.rot_order, config)
            except (NotDihedral, DegenerateLeastSquares) as exc:
                log.info("equivariant shortcut failed (%s); falling back", exc)
            step = ls_tangents(kd, config)
        tangents = step.tangents
    else:
        step = ls_tangents(kd, config)
        tangents = step.tangents

    if not any(t.provenance == "through" for t in tangents):
        tangents = [through_tangent(kd)] + list(tangents)
    if sub is not None and sub.order > 1:
        fgroup = GroupSpec("D" if sub.reflection_axis is not None else "C",
                           max(sub.rot_order, 1))
        through = [t for t in tangents if t.provenance == "through"]
        rest = symmetry_filter(
            [t for t in tangents if t.provenance != "through"], kd, fgroup
        )
        tangents = through + rest
    return kd, tangents
