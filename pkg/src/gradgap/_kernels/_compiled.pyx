# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Mirrors _python.py exactly; see that module for the array contract and
the parameter packing of the mlp. Loops are written per example so small
batches (the Monte Carlo hot path) pay no Python or BLAS dispatch cost.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


# ---------------------------------------------------------------- linear

def linear_losses(const double[::1] theta, const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j
    cdef double r
    for i in range(n):
        r = -y[i]
        for j in range(d):
            r += X[i, j] * theta[j]
        o[i] = 0.5 * r * r
    return out


def linear_grad_matrix(const double[::1] theta, const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, d))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double r
    for i in range(n):
        r = -y[i]
        for j in range(d):
            r += X[i, j] * theta[j]
        for j in range(d):
            o[i, j] = r * X[i, j]
    return out


def linear_batch_grad(const double[::1] theta, const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(d)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j
    cdef double r
    for i in range(n):
        r = -y[i]
        for j in range(d):
            r += X[i, j] * theta[j]
        for j in range(d):
            o[j] += r * X[i, j]
    for j in range(d):
        o[j] /= n
    return out


def linear_batch_hvp(const double[::1] theta, const double[:, ::1] X, const double[::1] y, const double[::1] v):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(d)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j
    cdef double xv
    for i in range(n):
        xv = 0.0
        for j in range(d):
            xv += X[i, j] * v[j]
        for j in range(d):
            o[j] += xv * X[i, j]
    for j in range(d):
        o[j] /= n
    return out


def linear_hvp_of_grads_mean(const double[::1] theta, const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(d)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j
    cdef double r, sq, c
    for i in range(n):
        r = -y[i]
        sq = 0.0
        for j in range(d):
            r += X[i, j] * theta[j]
            sq += X[i, j] * X[i, j]
        c = r * sq
        for j in range(d):
            o[j] += c * X[i, j]
    for j in range(d):
        o[j] /= n
    return out


# ---------------------------------------------------------------- mlp

def mlp_losses(const double[::1] theta, Py_ssize_t d, Py_ssize_t h,
               const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j, k
    cdef double z, f, r
    cdef Py_ssize_t ob1 = h * d, ow2 = h * d + h, ob2 = h * d + 2 * h
    for i in range(n):
        f = theta[ob2]
        for k in range(h):
            z = theta[ob1 + k]
            for j in range(d):
                z += theta[k * d + j] * X[i, j]
            f += theta[ow2 + k] * tanh(z)
        r = f - y[i]
        o[i] = 0.5 * r * r
    return out


def mlp_grad_matrix(const double[::1] theta, Py_ssize_t d, Py_ssize_t h,
                    const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t P = h * d + 2 * h + 1
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, P))
    cdef double[:, ::1] o = out
    cdef cnp.ndarray[double, ndim=1] a_buf = np.empty(h)
    cdef double[::1] a = a_buf
    cdef Py_ssize_t i, j, k
    cdef double z, f, r, u
    cdef Py_ssize_t ob1 = h * d, ow2 = h * d + h, ob2 = h * d + 2 * h
    for i in range(n):
        f = theta[ob2]
        for k in range(h):
            z = theta[ob1 + k]
            for j in range(d):
                z += theta[k * d + j] * X[i, j]
            a[k] = tanh(z)
            f += theta[ow2 + k] * a[k]
        r = f - y[i]
        for k in range(h):
            u = (1.0 - a[k] * a[k]) * theta[ow2 + k]
            for j in range(d):
                o[i, k * d + j] = r * u * X[i, j]
            o[i, ob1 + k] = r * u
            o[i, ow2 + k] = r * a[k]
        o[i, ob2] = r
    return out


def mlp_batch_grad(const double[::1] theta, Py_ssize_t d, Py_ssize_t h,
                   const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t P = h * d + 2 * h + 1
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(P)
    cdef double[::1] o = out
    cdef cnp.ndarray[double, ndim=1] a_buf = np.empty(h)
    cdef double[::1] a = a_buf
    cdef Py_ssize_t i, j, k
    cdef double z, f, r, ru
    cdef Py_ssize_t ob1 = h * d, ow2 = h * d + h, ob2 = h * d + 2 * h
    for i in range(n):
        f = theta[ob2]
        for k in range(h):
            z = theta[ob1 + k]
            for j in range(d):
                z += theta[k * d + j] * X[i, j]
            a[k] = tanh(z)
            f += theta[ow2 + k] * a[k]
        r = f - y[i]
        for k in range(h):
            ru = r * (1.0 - a[k] * a[k]) * theta[ow2 + k]
            for j in range(d):
                o[k * d + j] += ru * X[i, j]
            o[ob1 + k] += ru
            o[ow2 + k] += r * a[k]
        o[ob2] += r
    for k in range(P):
        o[k] /= n
    return out


def mlp_batch_hvp(const double[::1] theta, Py_ssize_t d, Py_ssize_t h,
                  const double[:, ::1] X, const double[::1] y, const double[::1] v):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t P = h * d + 2 * h + 1
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(P)
    cdef double[::1] o = out
    cdef cnp.ndarray[double, ndim=2] buf = np.empty((4, h))
    cdef double[:, ::1] b = buf  # rows: a, da, u, du
    cdef Py_ssize_t i, j, k
    cdef double z, dz, f, df, r, one_m_a2, coef
    cdef Py_ssize_t ob1 = h * d, ow2 = h * d + h, ob2 = h * d + 2 * h
    for i in range(n):
        f = theta[ob2]
        df = v[ob2]
        for k in range(h):
            z = theta[ob1 + k]
            dz = v[ob1 + k]
            for j in range(d):
                z += theta[k * d + j] * X[i, j]
                dz += v[k * d + j] * X[i, j]
            b[0, k] = tanh(z)
            one_m_a2 = 1.0 - b[0, k] * b[0, k]
            b[1, k] = one_m_a2 * dz
            b[2, k] = one_m_a2 * theta[ow2 + k]
            b[3, k] = v[ow2 + k] * one_m_a2 - 2.0 * theta[ow2 + k] * b[0, k] * b[1, k]
            f += theta[ow2 + k] * b[0, k]
            df += v[ow2 + k] * b[0, k] + theta[ow2 + k] * b[1, k]
        r = f - y[i]
        for k in range(h):
            coef = df * b[2, k] + r * b[3, k]
            for j in range(d):
                o[k * d + j] += coef * X[i, j]
            o[ob1 + k] += coef
            o[ow2 + k] += df * b[0, k] + r * b[1, k]
        o[ob2] += df
    for k in range(P):
        o[k] /= n
    return out


def mlp_hvp_of_grads_mean(const double[::1] theta, Py_ssize_t d, Py_ssize_t h,
                          const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t P = h * d + 2 * h + 1
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(P)
    cdef double[::1] o = out
    cdef cnp.ndarray[double, ndim=2] buf = np.empty((4, h))
    cdef double[:, ::1] b = buf  # rows: a, da, u, du
    cdef Py_ssize_t i, j, k
    cdef double z, f, df, r, sq1, one_m_a2, dz, coef, aa
    cdef Py_ssize_t ob1 = h * d, ow2 = h * d + h, ob2 = h * d + 2 * h
    for i in range(n):
        f = theta[ob2]
        sq1 = 1.0
        for j in range(d):
            sq1 += X[i, j] * X[i, j]
        aa = 0.0
        for k in range(h):
            z = theta[ob1 + k]
            for j in range(d):
                z += theta[k * d + j] * X[i, j]
            b[0, k] = tanh(z)
            f += theta[ow2 + k] * b[0, k]
            aa += b[0, k] * b[0, k]
        r = f - y[i]
        # Direction v = this example's own gradient: dz = r*u*(|x|^2+1),
        # vw2 = r*a, vb2 = r.
        df = r * aa + r
        for k in range(h):
            one_m_a2 = 1.0 - b[0, k] * b[0, k]
            b[2, k] = one_m_a2 * theta[ow2 + k]
            dz = r * b[2, k] * sq1
            b[1, k] = one_m_a2 * dz
            b[3, k] = r * b[0, k] * one_m_a2 - 2.0 * theta[ow2 + k] * b[0, k] * b[1, k]
            df += theta[ow2 + k] * b[1, k]
        for k in range(h):
            coef = df * b[2, k] + r * b[3, k]
            for j in range(d):
                o[k * d + j] += coef * X[i, j]
            o[ob1 + k] += coef
            o[ow2 + k] += df * b[0, k] + r * b[1, k]
        o[ob2] += df
    for k in range(P):
        o[k] /= n
    return out
