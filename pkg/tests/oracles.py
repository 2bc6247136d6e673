"""Independent oracles used to freeze expected values.

These deliberately avoid the library's vectorized code paths: convolutions
are direct double loops with index wrap-around, Jacobians are assembled
column by column, and derivatives are central finite differences.
"""

import math

import numpy as np


def conv2d_brute(x, k):
    """Direct double-loop circular convolution."""
    h, w = x.shape
    d = k.shape[0]
    c = d // 2
    out = np.zeros_like(x, dtype=np.float64)
    for p in range(h):
        for q in range(w):
            acc = 0.0
            for a in range(d):
                for b in range(d):
                    acc += k[a, b] * x[(p - (a - c)) % h, (q - (b - c)) % w]
            out[p, q] = acc
    return out


def corr2d_brute(x, k):
    """Direct double-loop circular correlation."""
    h, w = x.shape
    d = k.shape[0]
    c = d // 2
    out = np.zeros_like(x, dtype=np.float64)
    for p in range(h):
        for q in range(w):
            acc = 0.0
            for a in range(d):
                for b in range(d):
                    acc += k[a, b] * x[(p + (a - c)) % h, (q + (b - c)) % w]
            out[p, q] = acc
    return out


def assemble_jacobian(op, x):
    """Dense Jacobian from JVPs on basis vectors (column by column)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    J = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        J[:, i] = np.asarray(op.jvp(x, e.reshape(x.shape))).ravel()
    return J


def sym_part(J):
    return 0.5 * (J + J.T)


def dense_lambda_min_sym(op, x):
    """lambda_min of the symmetrized Jacobian via a dense eigensolver."""
    return float(np.linalg.eigvalsh(sym_part(assemble_jacobian(op, x)))[0])


def fd_directional(f, x, u, t=1e-5):
    """Central finite-difference directional derivative of f at x along u."""
    return (np.asarray(f(x + t * u)) - np.asarray(f(x - t * u))) / (2.0 * t)


def fd_gradient(f, x, t=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.ravel()
    xf = x.ravel()
    for i in range(x.size):
        e = np.zeros_like(xf)
        e[i] = t
        flat[i] = (f((xf + e).reshape(x.shape)) - f((xf - e).reshape(x.shape))) / (2 * t)
    return g


def saturate_scalar(v, delta):
    return (math.tanh(delta * (2.0 * v - 1.0)) + 1.0) / 2.0
