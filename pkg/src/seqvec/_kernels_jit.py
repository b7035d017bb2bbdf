"""Numba-compiled hot loops for training and inference.

One call processes one document. The kernel is a pure function of its inputs:
all randomness arrives through ``uniforms`` (negative-sampling draws consumed
sequentially), so runs are reproducible and thread workers can share the
parameter matrices without coordination (nogil).

``seqvec.kernels`` picks between this module and the pure-numpy twin in
``seqvec._kernels_np``; both implement the same update semantics.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True, fastmath=True)
def _pair_hs(h, neu, target, out_w, nodes, bits, offsets, alpha,
             update_output, dots):
    k = h.shape[0]
    start = offsets[target]
    m = offsets[target + 1] - start
    for j in range(m):
        w = out_w[nodes[start + j]]
        d = 0.0
        for i in range(k):
            d += w[i] * h[i]
        dots[j] = d
    loss = 0.0
    for j in range(m):
        d = dots[j]
        bit = bits[start + j]
        f = 1.0 / (1.0 + np.exp(-d))
        g = np.float32(alpha * (1.0 - bit - f))
        sd = -d if bit else d
        if sd >= 0.0:
            loss += np.log1p(np.exp(-sd))
        else:
            loss += -sd + np.log1p(np.exp(sd))
        w = out_w[nodes[start + j]]
        if update_output:
            for i in range(k):
                wi = w[i]
                neu[i] += g * wi
                w[i] = wi + g * h[i]
        else:
            for i in range(k):
                neu[i] += g * w[i]
    return loss


@njit(nogil=True, cache=True, fastmath=True)
def _pair_ns(h, neu, target, out_w, cum, uniforms, ucur, num_neg, alpha,
             update_output, rows, dots):
    k = h.shape[0]
    v = cum.shape[0]
    rows[0] = target
    lo = cum[target - 1] if target > 0 else 0.0
    gap = cum[target] - lo
    for j in range(num_neg):
        # Inverse-CDF draw conditioned on != target (same law as redrawing).
        scaled = uniforms[ucur + j] * (1.0 - gap)
        if scaled >= lo:
            scaled += gap
        idx = np.searchsorted(cum, scaled, side="right")
        if idx > v - 1:
            idx = v - 1
        rows[j + 1] = idx
    m = num_neg + 1
    for j in range(m):
        w = out_w[rows[j]]
        d = 0.0
        for i in range(k):
            d += w[i] * h[i]
        dots[j] = d
    loss = 0.0
    for j in range(m):
        d = dots[j]
        label = 1.0 if j == 0 else 0.0
        f = 1.0 / (1.0 + np.exp(-d))
        g = np.float32(alpha * (label - f))
        sd = d if j == 0 else -d
        if sd >= 0.0:
            loss += np.log1p(np.exp(-sd))
        else:
            loss += -sd + np.log1p(np.exp(sd))
        w = out_w[rows[j]]
        if update_output:
            for i in range(k):
                wi = w[i]
                neu[i] += g * wi
                w[i] = wi + g * h[i]
        else:
            for i in range(k):
                neu[i] += g * w[i]
    return loss


@njit(nogil=True, cache=True, fastmath=True)
def run_document(doc_vec, tok_vecs, out_w, tokens,
                 mode_dbow, obj_ns, window, num_neg, train_words,
                 hs_nodes, hs_bits, hs_offsets, hs_maxlen,
                 cum, uniforms,
                 a0, a_diff, t_offset, t_total,
                 update_tokens, update_output):
    k = doc_vec.shape[0]
    n_tokens = tokens.shape[0]
    loss = 0.0
    pairs = 0
    ucur = 0
    h = np.empty(k, dtype=np.float32)
    neu = np.empty(k, dtype=np.float32)
    rows = np.empty(num_neg + 1, dtype=np.int64)
    nbuf = num_neg + 1
    if not obj_ns and hs_maxlen > nbuf:
        nbuf = hs_maxlen
    dots = np.empty(nbuf, dtype=np.float64)

    for p in range(n_tokens):
        t = t_offset + p
        alpha = a0 + a_diff * (t / t_total)
        lo = p - window
        if lo < 0:
            lo = 0
        hi = p + window + 1
        if hi > n_tokens:
            hi = n_tokens

        if mode_dbow:
            for q in range(lo, hi):
                target = tokens[q]
                for i in range(k):
                    neu[i] = np.float32(0.0)
                if obj_ns:
                    loss += _pair_ns(doc_vec, neu, target, out_w, cum,
                                     uniforms, ucur, num_neg, alpha,
                                     update_output, rows, dots)
                    ucur += num_neg
                else:
                    loss += _pair_hs(doc_vec, neu, target, out_w, hs_nodes,
                                     hs_bits, hs_offsets, alpha,
                                     update_output, dots)
                pairs += 1
                for i in range(k):
                    doc_vec[i] += neu[i]
                if train_words and update_tokens:
                    # optional joint word training: skip-gram pair center -> target
                    wvec = tok_vecs[tokens[p]]
                    for i in range(k):
                        neu[i] = np.float32(0.0)
                    if obj_ns:
                        loss += _pair_ns(wvec, neu, target, out_w, cum,
                                         uniforms, ucur, num_neg, alpha,
                                         update_output, rows, dots)
                        ucur += num_neg
                    else:
                        loss += _pair_hs(wvec, neu, target, out_w, hs_nodes,
                                         hs_bits, hs_offsets, alpha,
                                         update_output, dots)
                    pairs += 1
                    for i in range(k):
                        wvec[i] += neu[i]
        else:
            # DM: h = mean of doc vector and context token vectors
            n_in = hi - lo  # doc vector stands in for the center token
            for i in range(k):
                h[i] = doc_vec[i]
            for q in range(lo, hi):
                if q == p:
                    continue
                tv = tok_vecs[tokens[q]]
                for i in range(k):
                    h[i] += tv[i]
            inv = np.float32(1.0 / n_in)
            for i in range(k):
                h[i] *= inv
            for i in range(k):
                neu[i] = np.float32(0.0)
            target = tokens[p]
            if obj_ns:
                loss += _pair_ns(h, neu, target, out_w, cum, uniforms, ucur,
                                 num_neg, alpha, update_output, rows, dots)
                ucur += num_neg
            else:
                loss += _pair_hs(h, neu, target, out_w, hs_nodes, hs_bits,
                                 hs_offsets, alpha, update_output, dots)
            pairs += 1
            # exact gradient of the mean: each input vector gets neu / n_in
            for i in range(k):
                neu[i] *= inv
            for i in range(k):
                doc_vec[i] += neu[i]
            if update_tokens:
                for q in range(lo, hi):
                    if q == p:
                        continue
                    tv = tok_vecs[tokens[q]]
                    for i in range(k):
                        tv[i] += neu[i]
    return loss, pairs
