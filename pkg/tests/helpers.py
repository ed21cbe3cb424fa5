"""Independent oracle implementations shared between the module tests and
the acceptance suite.

Everything here deliberately avoids the package's own enumeration and
reduction code paths: roots are found by vectorized multi-start Newton on a
grid, index sets by exhaustive itertools enumeration, and the order-k
residual coefficients by summing over all *ordered* index tuples.
"""

import itertools
import math

import numpy as np

from glcont import model


def grid_root_clusters(rs, beta=1.0, grid=15, box=2.5, maxit=80, tol=1e-9):
    """Cluster representatives of the roots of a reduced system at fixed
    beta, from damped Newton started on a grid.  A solution continuum shows
    up as many clusters strung along the curve; isolated roots as at most
    k^2 clusters (Bezout)."""
    xs = np.linspace(-box, box, grid)
    X, Y = np.meshgrid(xs, xs)
    x = X.ravel().copy()
    y = Y.ravel().copy()
    k, a1, a2 = rs.k, rs.a1, rs.a2
    for _ in range(maxit):
        mono = np.array([x**i * y ** (k - i) for i in range(k + 1)])
        f1 = a1 @ mono + beta * (rs.b1 * x + rs.b3 * y)
        f2 = a2 @ mono + beta * rs.b2 * y
        d1x = sum(i * x ** (i - 1) * y ** (k - i) * a1[i] for i in range(1, k + 1)) + beta * rs.b1
        d1y = sum((k - i) * x**i * y ** (k - 1 - i) * a1[i] for i in range(k)) + beta * rs.b3
        d2x = sum(i * x ** (i - 1) * y ** (k - i) * a2[i] for i in range(1, k + 1))
        d2y = sum((k - i) * x**i * y ** (k - 1 - i) * a2[i] for i in range(k)) + beta * rs.b2
        det = d1x * d2y - d1y * d2x
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        dx = (-f1 * d2y + f2 * d1y) / det
        dy = (-f2 * d1x + f1 * d2x) / det
        dx = np.where(np.isfinite(dx), dx, 0.0)
        dy = np.where(np.isfinite(dy), dy, 0.0)
        step = np.maximum(np.hypot(dx, dy), 1e-300)
        lim = np.minimum(1.0, 1.0 / step)  # trust region of radius 1
        x = np.clip(x + lim * dx, -1e6, 1e6)
        y = np.clip(y + lim * dy, -1e6, 1e6)
    mono = np.array([x**i * y ** (k - i) for i in range(k + 1)])
    f1 = a1 @ mono + beta * (rs.b1 * x + rs.b3 * y)
    f2 = a2 @ mono + beta * rs.b2 * y
    scale = max(np.abs(a1).max(), np.abs(a2).max(),
                abs(rs.b1), abs(rs.b2), abs(rs.b3), 1.0)
    ok = (np.hypot(f1, f2) < tol * scale) & (np.hypot(x, y) < 50)
    clusters = []
    for p in np.column_stack([x[ok], y[ok]]):
        for c in clusters:
            if np.hypot(*(p - c)) < 1e-3 * (1 + np.hypot(*c)):
                break
        else:
            clusters.append(p)
    return clusters


def make_generic_system(rng, k):
    """Random reduced system; isolated with probability one."""
    from glcont.tangents import ReducedSystem

    b2 = float(rng.standard_normal())
    b2 = b2 + np.copysign(0.5, b2)
    return ReducedSystem(
        k=k,
        a1=rng.standard_normal(k + 1),
        a2=rng.standard_normal(k + 1),
        b1=float(rng.standard_normal()),
        b2=b2,
        b3=float(rng.standard_normal()),
    )


def make_continuum_system(rng, k):
    """Reduced system built to satisfy the coefficient relations exactly,
    with b2 chosen so the solution curve passes through (1, 1)."""
    from glcont.tangents import ReducedSystem

    c = rng.standard_normal(k + 1)
    c[k] = 0.0
    b1 = float(rng.standard_normal())
    b3 = float(rng.standard_normal())
    b2 = -float(np.sum(c[:k]))
    if abs(b2) < 0.2:
        c[0] += np.copysign(1.0, c[0] if c[0] else 1.0)
        b2 = -float(np.sum(c[:k]))
    a1 = np.array(
        [(b1 * (c[i - 1] if i >= 1 else 0.0) + b3 * c[i]) / b2 for i in range(k + 1)]
    )
    return ReducedSystem(k=k, a1=a1, a2=c, b1=b1, b2=b2, b3=b3)


def brute_k_index_sets(k, j):
    """All multisets of j parts in {1..k-j+1} summing to k, via exhaustive
    ordered enumeration and canonicalization by sorting."""
    out = set()
    for K in itertools.product(range(1, k - j + 2), repeat=j):
        if sum(K) == k:
            out.add(tuple(sorted(K)))
    return out


def brute_i_index_sets(i, j, K):
    """All I with sum i, 0 <= I_p <= K_p, canonical under permutations of
    positions holding equal parts of K (sort I within each equal-K run)."""
    out = set()
    for I in itertools.product(*[range(0, kp + 1) for kp in K]):
        if sum(I) != i:
            continue
        canon = []
        pos = 0
        while pos < j:
            end = pos
            while end < j and K[end] == K[pos]:
                end += 1
            canon.extend(sorted(I[pos:end]))
            pos = end
        out.add(tuple(canon))
    return out


def ordered_pair_count(k, j):
    """Number of ordered (K, I) tuples for all i together (multiplicity
    cross-check)."""
    total = 0
    for K in itertools.product(range(1, k - j + 2), repeat=j):
        if sum(K) == k:
            total += int(np.prod([kp + 1 for kp in K]))
    return total


def naive_y_terms(kd, k, i, bound=4):
    """Order-k monomial coefficient by brute-force ordered expansion: the
    same term structure as the production routine, but every sum runs over
    ordered tuples with no canonicalization or multiplicity counting."""
    mesh, st = kd.mesh, kd.state
    y = np.zeros(mesh.n, dtype=complex)
    v = kd.v[k - 1]
    for i1 in (0, 1):
        i2 = i - i1
        if 0 <= i2 <= k - 1:
            y = y + model.hessian_apply(mesh, st, kd.ext(1, i1), (v[i2], 0.0))
    for k1 in range(2, k - 1):
        k2 = k - k1
        if k2 < 2:
            continue
        for i1 in range(0, k1 + 1):
            i2 = i - i1
            if 0 <= i2 <= k2:
                y = y + 0.5 * model.hessian_apply(mesh, st, kd.ext(k1, i1), kd.ext(k2, i2))
    for j in range(3, min(k, bound) + 1):
        for K in itertools.product(range(1, k), repeat=j):
            if sum(K) != k:
                continue
            for I in itertools.product(*[range(0, kp + 1) for kp in K]):
                if sum(I) != i:
                    continue
                vs = [kd.ext(K[p], I[p]) for p in range(j)]
                y = y + (1.0 / math.factorial(j)) * model.gl_derivative_apply(mesh, st, vs)
    return y


def random_kernel_data(mesh, ip, rng, kmax, mu=0.7):
    """KernelData with random state and random correction tables up to
    order kmax-1, for combinatorial cross-checks."""
    from glcont.tangents import KernelData

    def rvec():
        return rng.standard_normal(mesh.n) + 1j * rng.standard_normal(mesh.n)

    kd = KernelData(
        mesh=mesh, ip=ip, state=model.State(rvec(), mu),
        phi=[rvec(), rvec()], phi_star=[rvec(), rvec()], v0=rvec(),
    )
    for m in range(1, kmax):
        kd.kappa[m] = rng.standard_normal(m + 1)
        kd.q[m] = [rvec() for _ in range(m + 1)]
        kd.v[m] = [rvec() for _ in range(m + 1)]
    return kd
