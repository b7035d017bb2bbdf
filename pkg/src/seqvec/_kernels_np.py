"""Pure-numpy twin of the compiled kernels in ``seqvec._kernels_jit``.

Same per-document update semantics, vectorized over Huffman paths and
negative-sample rows instead of compiled scalar loops. Markedly slower (see
``benchmarks/bench_kernels.py``) but dependency-free; selected by setting
``SEQVEC_PURE_NUMPY=1`` or when numba is unavailable.
"""

import numpy as np


def _pair_hs(h, neu, target, out_w, nodes, bits, offsets, alpha, update_output):
    sl = slice(offsets[target], offsets[target + 1])
    nd = nodes[sl]
    bt = bits[sl].astype(np.float64)
    w = out_w[nd]  # copy: gradients read pre-update weights
    d = w.astype(np.float64) @ h.astype(np.float64)
    f = 1.0 / (1.0 + np.exp(-d))
    g = (alpha * (1.0 - bt - f)).astype(np.float32)
    sd = (1.0 - 2.0 * bt) * d
    loss = float(np.logaddexp(0.0, -sd).sum())
    neu += g @ w
    if update_output:
        out_w[nd] += g[:, None] * h[None, :]  # path nodes are distinct
    return loss


def _draw_negatives(cum, uniforms, ucur, num_neg, target):
    lo = cum[target - 1] if target > 0 else 0.0
    gap = cum[target] - lo
    scaled = uniforms[ucur:ucur + num_neg] * (1.0 - gap)
    scaled = np.where(scaled >= lo, scaled + gap, scaled)
    idx = np.searchsorted(cum, scaled, side="right")
    return np.minimum(idx, len(cum) - 1)


def _pair_ns(h, neu, target, out_w, cum, uniforms, ucur, num_neg, alpha,
             update_output):
    rows = np.empty(num_neg + 1, dtype=np.int64)
    rows[0] = target
    rows[1:] = _draw_negatives(cum, uniforms, ucur, num_neg, target)
    w = out_w[rows]
    d = w.astype(np.float64) @ h.astype(np.float64)
    labels = np.zeros(num_neg + 1)
    labels[0] = 1.0
    f = 1.0 / (1.0 + np.exp(-d))
    g = (alpha * (labels - f)).astype(np.float32)
    sd = np.where(labels == 1.0, d, -d)
    loss = float(np.logaddexp(0.0, -sd).sum())
    # row-by-row so a negative drawn twice sees, and accumulates, both updates
    for j in range(num_neg + 1):
        row = out_w[rows[j]]
        neu += g[j] * row
        if update_output:
            row += g[j] * h
    return loss


def run_document(doc_vec, tok_vecs, out_w, tokens,
                 mode_dbow, obj_ns, window, num_neg, train_words,
                 hs_nodes, hs_bits, hs_offsets, hs_maxlen,
                 cum, uniforms,
                 a0, a_diff, t_offset, t_total,
                 update_tokens, update_output):
    n_tokens = tokens.shape[0]
    loss = 0.0
    pairs = 0
    ucur = 0

    for p in range(n_tokens):
        t = t_offset + p
        alpha = a0 + a_diff * (t / t_total)
        lo = max(0, p - window)
        hi = min(n_tokens, p + window + 1)

        if mode_dbow:
            for q in range(lo, hi):
                target = tokens[q]
                neu = np.zeros_like(doc_vec)
                if obj_ns:
                    loss += _pair_ns(doc_vec, neu, target, out_w, cum,
                                     uniforms, ucur, num_neg, alpha,
                                     update_output)
                    ucur += num_neg
                else:
                    loss += _pair_hs(doc_vec, neu, target, out_w, hs_nodes,
                                     hs_bits, hs_offsets, alpha, update_output)
                pairs += 1
                doc_vec += neu
                if train_words and update_tokens:
                    wvec = tok_vecs[tokens[p]]
                    neu = np.zeros_like(wvec)
                    if obj_ns:
                        loss += _pair_ns(wvec, neu, target, out_w, cum,
                                         uniforms, ucur, num_neg, alpha,
                                         update_output)
                        ucur += num_neg
                    else:
                        loss += _pair_hs(wvec, neu, target, out_w, hs_nodes,
                                         hs_bits, hs_offsets, alpha,
                                         update_output)
                    pairs += 1
                    wvec += neu
        else:
            h = doc_vec.copy()
            for q in range(lo, hi):
                if q != p:
                    h += tok_vecs[tokens[q]]
            n_in = hi - lo
            inv = np.float32(1.0 / n_in)
            h *= inv
            neu = np.zeros_like(doc_vec)
            target = tokens[p]
            if obj_ns:
                loss += _pair_ns(h, neu, target, out_w, cum, uniforms, ucur,
                                 num_neg, alpha, update_output)
                ucur += num_neg
            else:
                loss += _pair_hs(h, neu, target, out_w, hs_nodes, hs_bits,
                                 hs_offsets, alpha, update_output)
            pairs += 1
            neu *= inv
            doc_vec += neu
            if update_tokens:
                for q in range(lo, hi):
                    if q != p:
                        tok_vecs[tokens[q]] += neu
    return loss, pairs
