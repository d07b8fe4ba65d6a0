"""Straight-line scalar re-implementations used as independent oracles.

Everything here is written with explicit Python loops and math.* calls,
no vectorization and no imports from the package's numeric paths, so a
bug in the fast implementation cannot hide in its own oracle.
"""

import math

import numpy as np


def scalar_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for r in range(k):
                s += a[i][r] * b[r][j]
            out[i][j] = s
    return np.array(out)


def scalar_softmax_row(scores):
    mx = max(scores)
    exps = [math.exp(s - mx) for s in scores]
    z = sum(exps)
    return [e / z for e in exps]


def scalar_layer_norm(row, gain, bias, eps=1e-5):
    d = len(row)
    mean = sum(row) / d
    var = sum((v - mean) ** 2 for v in row) / d
    inv = 1.0 / math.sqrt(var + eps)
    return [gain[j] * (row[j] - mean) * inv + bias[j] for j in range(d)]


def scalar_mha(e, wq, wk, wv, wo, n_heads, denominator, mask=None):
    """Head h reads/writes column block [h*f, (h+1)*f) of the packed
    projection matrices; returns (output, attention[h][t][u])."""
    tokens, d = len(e), len(e[0])
    f = d // n_heads
    attn = [[[0.0] * tokens for _ in range(tokens)] for _ in range(n_heads)]
    merged = [[0.0] * d for _ in range(tokens)]
    for h in range(n_heads):
        q = [[sum(e[t][p] * wq[p][h * f + j] for p in range(d))
              for j in range(f)] for t in range(tokens)]
        k = [[sum(e[t][p] * wk[p][h * f + j] for p in range(d))
              for j in range(f)] for t in range(tokens)]
        v = [[sum(e[t][p] * wv[p][h * f + j] for p in range(d))
              for j in range(f)] for t in range(tokens)]
        for t in range(tokens):
            scores = []
            for u in range(tokens):
                s = sum(q[t][j] * k[u][j] for j in range(f)) / denominator
                if mask is not None:
                    s += mask[t][u]
                scores.append(s)
            weights = scalar_softmax_row(scores)
            attn[h][t] = weights
            for j in range(f):
                merged[t][h * f + j] = sum(weights[u] * v[u][j]
                                           for u in range(tokens))
    out = [[sum(merged[t][p] * wo[p][c] for p in range(d)) for c in range(d)]
           for t in range(tokens)]
    return np.array(out), np.array(attn)


def scalar_positional(pos, c, d):
    i2 = 2 * (c // 2)
    angle = pos / (10000.0 ** (i2 / d))
    return math.sin(angle) if c % 2 == 0 else math.cos(angle)


def scalar_channel(x, weights, d, n_heads, denominator, n_layers,
                   causal, spatial):
    """Whole-channel reference: encode, positional encoding, pre-norm
    blocks (masked attention + ReLU feed-forward), decode.

    ``weights`` maps the channel-local names used by the model layout
    ('encoder.weight', 'block0.attn.wq', ...) to plain nested lists or
    arrays. The spatial variant transposes in and out.
    """
    x = [list(row) for row in (np.asarray(x).T if spatial else np.asarray(x))]
    tokens = len(x)
    enc_w, enc_b = weights["encoder.weight"], weights["encoder.bias"]
    in_dim = len(enc_w)
    e = [[sum(x[t][p] * enc_w[p][c] for p in range(in_dim)) + enc_b[c]
          + scalar_positional(t, c, d) for c in range(d)] for t in range(tokens)]
    mask = None
    if causal:
        mask = [[0.0 if u <= t else -1e9 for u in range(tokens)]
                for t in range(tokens)]
    for layer in range(n_layers):
        b = f"block{layer}"
        h = [scalar_layer_norm(e[t], weights[f"{b}.ln1.gain"],
                               weights[f"{b}.ln1.bias"]) for t in range(tokens)]
        a, _ = scalar_mha(h, weights[f"{b}.attn.wq"], weights[f"{b}.attn.wk"],
                          weights[f"{b}.attn.wv"], weights[f"{b}.attn.wo"],
                          n_heads, denominator, mask)
        e = [[e[t][c] + a[t][c] for c in range(d)] for t in range(tokens)]
        h = [scalar_layer_norm(e[t], weights[f"{b}.ln2.gain"],
                               weights[f"{b}.ln2.bias"]) for t in range(tokens)]
        w1, b1 = weights[f"{b}.ffn.w1"], weights[f"{b}.ffn.b1"]
        w2, b2 = weights[f"{b}.ffn.w2"], weights[f"{b}.ffn.b2"]
        ff = len(b1)
        for t in range(tokens):
            hidden = [max(0.0, sum(h[t][c] * w1[c][j] for c in range(d)) + b1[j])
                      for j in range(ff)]
            for c in range(d):
                e[t][c] += sum(hidden[j] * w2[j][c] for j in range(ff)) + b2[c]
    dec_w, dec_b = weights["decoder.weight"], weights["decoder.bias"]
    out_dim = len(dec_b)
    out = [[sum(e[t][c] * dec_w[c][o] for c in range(d)) + dec_b[o]
            for o in range(out_dim)] for t in range(tokens)]
    out = np.array(out)
    return out.T if spatial else out


def channel_weight_arrays(params):
    """Strip a ChannelParams dataclass into the plain-array dict the
    scalar oracle consumes."""
    out = {"encoder.weight": params.enc_w.data, "encoder.bias": params.enc_b.data,
           "decoder.weight": params.dec_w.data, "decoder.bias": params.dec_b.data}
    for i, blk in enumerate(params.blocks):
        b = f"block{i}"
        out[f"{b}.ln1.gain"] = blk.ln1_gain.data
        out[f"{b}.ln1.bias"] = blk.ln1_bias.data
        out[f"{b}.ln2.gain"] = blk.ln2_gain.data
        out[f"{b}.ln2.bias"] = blk.ln2_bias.data
        out[f"{b}.attn.wq"] = blk.attn.wq.data
        out[f"{b}.attn.wk"] = blk.attn.wk.data
        out[f"{b}.attn.wv"] = blk.attn.wv.data
        out[f"{b}.attn.wo"] = blk.attn.wo.data
        out[f"{b}.ffn.w1"] = blk.ffn.w1.data
        out[f"{b}.ffn.b1"] = blk.ffn.b1.data
        out[f"{b}.ffn.w2"] = blk.ffn.w2.data
        out[f"{b}.ffn.b2"] = blk.ffn.b2.data
    return out


def scalar_rodrigues(v):
    """Term-by-term Rodrigues formula: R = I + a*K + b*K^2 with a, b
    evaluated directly (no Taylor guard; callers avoid tiny angles)."""
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    theta = math.sqrt(vx * vx + vy * vy + vz * vz)
    eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    if theta == 0.0:
        return np.array(eye)
    k = [[0.0, -vz, vy], [vz, 0.0, -vx], [-vy, vx, 0.0]]
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    k2 = [[sum(k[i][r] * k[r][j] for r in range(3)) for j in range(3)]
          for i in range(3)]
    return np.array([[eye[i][j] + a * k[i][j] + b * k2[i][j]
                      for j in range(3)] for i in range(3)])
