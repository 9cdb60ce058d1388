"""Collapsed Gibbs kernels for LDA.

Every kernel takes its uniforms pre-drawn from a seeded numpy Generator, so
the chain is a pure function of the seed whichever backend runs it. The loop
and numpy variants compute each weight as ``(a * b) / c`` and accumulate
with a left-to-right running sum, which keeps them bit-identical.
"""

from __future__ import annotations

import numpy as np

from . import _jit


@_jit.njit
def gibbs_sweep_loop(doc_ids, word_ids, z, ndk, nkw, nk, alpha, eta, uniforms):
    K = nk.shape[0]
    v_eta = nkw.shape[1] * eta
    cum = np.empty(K, dtype=np.float64)
    for i in range(word_ids.shape[0]):
        d = doc_ids[i]
        v = word_ids[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, v] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * (nkw[t, v] + eta) / (nk[t] + v_eta)
            cum[t] = total
        x = uniforms[i] * total
        k = K - 1
        for t in range(K):
            if cum[t] > x:
                k = t
                break
        z[i] = k
        ndk[d, k] += 1
        nkw[k, v] += 1
        nk[k] += 1


def gibbs_sweep_numpy(doc_ids, word_ids, z, ndk, nkw, nk, alpha, eta, uniforms):
    K = nk.shape[0]
    v_eta = nkw.shape[1] * eta
    for i in range(word_ids.shape[0]):
        d = doc_ids[i]
        v = word_ids[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, v] -= 1
        nk[k] -= 1
        cum = np.cumsum((ndk[d] + alpha) * (nkw[:, v] + eta) / (nk + v_eta))
        k = min(int(np.searchsorted(cum, uniforms[i] * cum[-1], side="right")), K - 1)
        z[i] = k
        ndk[d, k] += 1
        nkw[k, v] += 1
        nk[k] += 1


@_jit.njit
def fold_in_sweep_loop(word_ids, z, nk_doc, phi, alpha, uniforms):
    K = nk_doc.shape[0]
    cum = np.empty(K, dtype=np.float64)
    for i in range(word_ids.shape[0]):
        v = word_ids[i]
        nk_doc[z[i]] -= 1
        total = 0.0
        for t in range(K):
            total += (nk_doc[t] + alpha) * phi[t, v]
            cum[t] = total
        x = uniforms[i] * total
        k = K - 1
        for t in range(K):
            if cum[t] > x:
                k = t
                break
        z[i] = k
        nk_doc[k] += 1


def fold_in_sweep_numpy(word_ids, z, nk_doc, phi, alpha, uniforms):
    K = nk_doc.shape[0]
    for i in range(word_ids.shape[0]):
        v = word_ids[i]
        nk_doc[z[i]] -= 1
        cum = np.cumsum((nk_doc + alpha) * phi[:, v])
        k = min(int(np.searchsorted(cum, uniforms[i] * cum[-1], side="right")), K - 1)
        z[i] = k
        nk_doc[k] += 1


KERNELS = {
    "numba": (gibbs_sweep_loop, fold_in_sweep_loop),
    "numpy": (gibbs_sweep_numpy, fold_in_sweep_numpy),
}


def kernels(backend: str | None = None):
    """(gibbs_sweep, fold_in_sweep) for ``backend``; default follows the env flag."""
    backend = backend or _jit.BACKEND
    if backend not in KERNELS:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(KERNELS)}")
    return KERNELS[backend]
