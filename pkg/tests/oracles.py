"""Brute-force scalar-loop references for the vectorized chain operations.

Everything here iterates over indices explicitly and never calls into the
package's torch implementations, so agreement between the two is a real
check and not a tautology.
"""

import numpy as np


def oracle_transmit(H, s_tx, noise=None):
    """Y[m, e] = sum_k H[m, k, e] * s_tx[k, e] + noise."""
    M, K, E = H.shape
    Y = np.zeros((M, E), dtype=complex)
    for m in range(M):
        for e in range(E):
            acc = 0.0 + 0.0j
            for k in range(K):
                acc += H[m, k, e] * s_tx[k, e]
            Y[m, e] = acc
    if noise is not None:
        Y = Y + noise
    return Y


def oracle_ls(Y, rho, phi, P):
    """H_hat[m, k, e] = Y[m, e] / (sqrt(P * rho[k, e]) * phi[k, e])."""
    M, E = Y.shape
    K = rho.shape[0]
    H_hat = np.zeros((M, K, E), dtype=complex)
    for m in range(M):
        for k in range(K):
            for e in range(E):
                H_hat[m, k, e] = Y[m, e] / (np.sqrt(P * rho[k, e]) * phi[k, e])
    return H_hat


def oracle_cancel_pilots(Y, H_hat, rho, phi, P):
    M, E = Y.shape
    K = rho.shape[0]
    out = np.zeros_like(Y)
    for m in range(M):
        for e in range(E):
            acc = Y[m, e]
            for k in range(K):
                acc -= H_hat[m, k, e] * np.sqrt(P * rho[k, e]) * phi[k, e]
            out[m, e] = acc
    return out


def oracle_mmse(Y_sp, H_hat, rho, P, sigma2):
    """Per-RE (H_d^H H_d + sigma^2 I)^-1 H_d^H y with loop-assembled systems."""
    M, K, E = H_hat.shape
    d = np.zeros((K, E), dtype=complex)
    for e in range(E):
        Hd = np.zeros((M, K), dtype=complex)
        for m in range(M):
            for k in range(K):
                Hd[m, k] = np.sqrt(P * (1.0 - rho[k, e])) * H_hat[m, k, e]
        G = np.zeros((K, K), dtype=complex)
        b = np.zeros(K, dtype=complex)
        for i in range(K):
            for j in range(K):
                for m in range(M):
                    G[i, j] += np.conj(Hd[m, i]) * Hd[m, j]
            G[i, i] += sigma2
            for m in range(M):
                b[i] += np.conj(Hd[m, i]) * Y_sp[m, e]
        d[:, e] = np.linalg.solve(G, b)
    return d


def oracle_loss(D, D_hat):
    """Sum over users of squared complex-difference norms."""
    K, E = D.shape
    total = 0.0
    for k in range(K):
        for e in range(E):
            diff = D[k, e] - D_hat[k, e]
            total += diff.real**2 + diff.imag**2
    return total


def random_instance(rng, M=None, K=None, S=None, T=None, max_dim=4):
    """Draw a small random chain instance for oracle comparisons."""
    M = M or int(rng.integers(1, max_dim + 1))
    K = K or int(rng.integers(1, max_dim + 1))
    S = S or int(rng.integers(1, max_dim + 1))
    T = T or int(rng.integers(1, max_dim + 1))
    E = S * T
    H = rng.standard_normal((M, K, E)) + 1j * rng.standard_normal((M, K, E))
    rho = rng.uniform(0.05, 0.95, size=(K, E))
    phi = np.exp(2j * np.pi * rng.uniform(size=(K, E)))
    d = rng.standard_normal((K, E)) + 1j * rng.standard_normal((K, E))
    return M, K, S, T, H, rho, phi, d
