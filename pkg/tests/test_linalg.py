"""Krylov layer against dense direct solves.

Complex vectors of length m are identified with real vectors of length 2m;
random symmetric real matrices then act as self-adjoint real-linear
operators, which is exactly the structure of the Jacobian.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glcont import linalg
from glcont.errors import SingularBorder


def flatten(x):
    return np.concatenate([x.real, x.imag])


def unflatten(v):
    m = len(v) // 2
    return v[:m] + 1j * v[m:]


def random_sym_op(rng, m, definite=False):
    """Random symmetric indefinite real 2m x 2m matrix as an operator on
    complex m-vectors, plus the dense matrix itself."""
    q, _ = np.linalg.qr(rng.standard_normal((2 * m, 2 * m)))
    if definite:
        d = rng.uniform(0.5, 3.0, 2 * m)
    else:
        d = np.concatenate([rng.uniform(0.5, 3.0, m), -rng.uniform(0.5, 2.0, m)])
    s = (q * d) @ q.T
    return (lambda x: unflatten(s @ flatten(x))), s


class TestMinres:
    def test_matches_dense_solve(self):
        rng = np.random.default_rng(21)
        for trial in range(100):
            m = int(rng.integers(5, 51))
            op, s = random_sym_op(rng, m)
            ip = linalg.InnerProduct(np.ones(m))
            rhs = unflatten(rng.standard_normal(2 * m))
            x, stats = linalg.minres(op, rhs, ip, tol=1e-12, maxit=4000)
            xd = unflatten(np.linalg.solve(s, flatten(rhs)))
            assert np.linalg.norm(flatten(x - xd)) <= 1e-8 * np.linalg.norm(flatten(xd))

    def test_weighted_inner_product(self):
        # self-adjointness in <x,y>_W = x^T W y requires W S symmetric;
        # S = W^{-1} A with A symmetric is the general form
        rng = np.random.default_rng(22)
        for _ in range(10):
            m = int(rng.integers(5, 40))
            w = rng.uniform(0.2, 3.0, m)
            wr = np.concatenate([w, w])
            _, a = random_sym_op(rng, m)
            s = a / wr[:, None]
            op = lambda x, s=s: unflatten(s @ flatten(x))
            ip = linalg.InnerProduct(w)
            rhs = unflatten(rng.standard_normal(2 * m))
            x, _ = linalg.minres(op, rhs, ip, tol=1e-12, maxit=4000)
            xd = unflatten(np.linalg.solve(s, flatten(rhs)))
            assert np.linalg.norm(flatten(x - xd)) <= 1e-8 * np.linalg.norm(flatten(xd))

    def test_deflation_orthogonality(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            m = 30
            op, s = random_sym_op(rng, m)
            ip = linalg.InnerProduct(np.ones(m))
            defl = [unflatten(rng.standard_normal(2 * m)) for _ in range(3)]
            rhs = unflatten(rng.standard_normal(2 * m))
            x, _ = linalg.minres(op, rhs, ip, deflation_space=defl, tol=1e-12, maxit=4000)
            basis = linalg.orthonormalize(defl, ip)
            for b in basis:
                assert abs(ip.dot(b, x)) <= 1e-10 * max(1.0, ip.norm(x))

    def test_deflated_solve_matches_projected_dense(self):
        rng = np.random.default_rng(24)
        m = 25
        op, s = random_sym_op(rng, m)
        ip = linalg.InnerProduct(np.ones(m))
        defl = [unflatten(rng.standard_normal(2 * m))]
        rhs = unflatten(rng.standard_normal(2 * m))
        x, _ = linalg.minres(op, rhs, ip, deflation_space=defl, tol=1e-12, maxit=4000)
        # dense oracle: solve P S P y = P rhs in the orthogonal complement
        d = flatten(defl[0])
        d = d / np.linalg.norm(d)
        p = np.eye(2 * m) - np.outer(d, d)
        y, *_ = np.linalg.lstsq(p @ s @ p, p @ flatten(rhs), rcond=None)
        y = p @ y
        assert np.linalg.norm(flatten(x) - y) <= 1e-7 * max(1.0, np.linalg.norm(y))


class TestLanczos:
    def test_ritz_values_within_residual_of_dense(self):
        rng = np.random.default_rng(25)
        for m in (40, 120, 250):
            op, s = random_sym_op(rng, m)
            ip = linalg.InnerProduct(np.ones(m))
            eigs = np.linalg.eigvalsh(s)
            pairs = linalg.lanczos_ritz(op, ip, k=6, rng=rng)
            for p in pairs:
                resid = ip.norm(op(p.vector) - p.value * p.vector)
                assert np.min(np.abs(eigs - p.value)) <= resid + 1e-9

    def test_excluded_directions_absent(self):
        rng = np.random.default_rng(26)
        m = 60
        op, s = random_sym_op(rng, m)
        ip = linalg.InnerProduct(np.ones(m))
        excl = [unflatten(rng.standard_normal(2 * m))]
        pairs = linalg.lanczos_ritz(op, ip, k=5, exclude=excl, rng=rng)
        e = excl[0] / ip.norm(excl[0])
        for p in pairs:
            assert abs(ip.dot(e, p.vector)) <= 1e-8


class TestBordered:
    def test_matches_dense_block_solve(self):
        rng = np.random.default_rng(27)
        for _ in range(20):
            m = int(rng.integers(5, 30))
            op, s = random_sym_op(rng, m)
            ip = linalg.InnerProduct(np.ones(m))
            col = unflatten(rng.standard_normal(2 * m))
            row = unflatten(rng.standard_normal(2 * m))
            corner = float(rng.standard_normal())
            rhs_top = unflatten(rng.standard_normal(2 * m))
            rhs_bot = float(rng.standard_normal())
            x, (lam,), _ = linalg.bordered_solve(
                op, border_cols=[col], border_rows=[row], corner=[[corner]],
                rhs_top=rhs_top, rhs_bottom=[rhs_bot], ip=ip,
                tol=1e-13, maxit=4000,
            )
            full = np.zeros((2 * m + 1, 2 * m + 1))
            full[:2 * m, :2 * m] = s
            full[:2 * m, -1] = flatten(col)
            full[-1, :2 * m] = flatten(row)
            full[-1, -1] = corner
            sol = np.linalg.solve(full, np.concatenate([flatten(rhs_top), [rhs_bot]]))
            ref = np.linalg.norm(sol)
            assert np.linalg.norm(flatten(x) - sol[:-1]) <= 1e-8 * ref
            assert abs(lam - sol[-1]) <= 1e-8 * ref

    def test_singular_border_detected(self):
        # two identical borders make the reduced system rank-deficient
        rng = np.random.default_rng(28)
        m = 12
        op, s = random_sym_op(rng, m)
        ip = linalg.InnerProduct(np.ones(m))
        col = unflatten(rng.standard_normal(2 * m))
        row = unflatten(rng.standard_normal(2 * m))
        rhs = unflatten(rng.standard_normal(2 * m))
        with pytest.raises(SingularBorder):
            linalg.bordered_solve(
                op, border_cols=[col, col], border_rows=[row, row],
                corner=[[0.3, 0.3], [0.3, 0.3]],
                rhs_top=rhs, rhs_bottom=[1.0, -1.0], ip=ip, tol=1e-12, maxit=2000,
            )


class TestInnerProduct:
    @given(
        st.lists(st.floats(-10, 10), min_size=4, max_size=4),
        st.lists(st.floats(-10, 10), min_size=4, max_size=4),
        st.floats(-5, 5),
    )
    @settings(max_examples=50, deadline=None)
    def test_bilinear_and_symmetric(self, xs, ys, c):
        ip = linalg.InnerProduct(np.array([1.0, 2.0]))
        x = np.array([xs[0] + 1j * xs[1], xs[2] + 1j * xs[3]])
        y = np.array([ys[0] + 1j * ys[1], ys[2] + 1j * ys[3]])
        assert ip.dot(x, y) == pytest.approx(ip.dot(y, x), abs=1e-9)
        assert ip.dot(c * x, y) == pytest.approx(c * ip.dot(x, y), rel=1e-9, abs=1e-9)
        assert ip.norm(x) >= 0

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            linalg.InnerProduct(np.array([1.0, 0.0]))

    def test_orthonormalize_drops_dependent(self):
        rng = np.random.default_rng(29)
        ip = linalg.InnerProduct(np.ones(5))
        v1 = unflatten(rng.standard_normal(10))
        v2 = unflatten(rng.standard_normal(10))
        basis = linalg.orthonormalize([v1, v2, 0.5 * v1 - v2], ip)
        assert len(basis) == 2
        for i, a in enumerate(basis):
            for j, b in enumerate(basis):
                assert ip.dot(a, b) == pytest.approx(1.0 if i == j else 0.0, abs=1e-10)
