"""Independent reference implementations used to cross-check the package.

Everything here is written as plain loops over scalars, deliberately
avoiding the vectorized routines under test. Slow is fine; these only run
on small cases.
"""

import math

import numpy as np

from prosodynet import net


def naive_conv_full_height(x, kernels, biases, stride):
    """x: (d, S); kernels: (n_k, d, w). Returns pre-activations (n_k, T)."""
    d, s_in = x.shape
    n_k, kd, w = kernels.shape
    assert kd == d
    t_out = (s_in - w) // stride + 1
    out = np.zeros((n_k, t_out))
    for m in range(n_k):
        for t in range(t_out):
            acc = 0.0
            for i in range(d):
                for j in range(w):
                    acc += x[i, t * stride + j] * kernels[m, i, j]
            out[m, t] = acc + biases[m]
    return out


def naive_conv_per_map(maps, kernels, biases, stride):
    """maps: (n_k, T); kernels: (n_k, w). Returns pre-activations (n_k, T2)."""
    n_k, t_in = maps.shape
    w = kernels.shape[1]
    t_out = (t_in - w) // stride + 1
    out = np.zeros((n_k, t_out))
    for m in range(n_k):
        for t in range(t_out):
            acc = 0.0
            for j in range(w):
                acc += maps[m, t * stride + j] * kernels[m, j]
            out[m, t] = acc + biases[m]
    return out


def naive_pool(values, p_out):
    """Adaptive max pool of one map; earlier regions take the ceil size."""
    length = len(values)
    base = length // p_out
    extra = length % p_out
    pooled = []
    start = 0
    for r in range(p_out):
        size = base + (1 if r < extra else 0)
        region = values[start:start + size]
        best = region[0]
        for v in region[1:]:
            if v > best:
                best = v
        pooled.append(best)
        start += size
    return pooled


def naive_softmax(logits):
    m = max(logits)
    e = [math.exp(z - m) for z in logits]
    s = sum(e)
    return [v / s for v in e]


def naive_forward_probs(x, params):
    """Full no-dropout forward pass for a single (rows, frames) window."""
    pre1 = naive_conv_full_height(np.asarray(x, dtype=np.float64),
                                  params.conv1.kernels, params.conv1.biases,
                                  params.conv1.stride)
    act1 = np.maximum(pre1, 0.0)
    pre2 = naive_conv_per_map(act1, params.conv2.kernels, params.conv2.biases,
                              params.conv2.stride)
    act2 = np.maximum(pre2, 0.0)
    feats = []
    for m in range(act2.shape[0]):
        feats.extend(naive_pool(list(act2[m]), params.pool_out))
    logits = []
    for c in range(params.n_classes):
        acc = params.softmax_b[c]
        for f in range(len(feats)):
            acc += feats[f] * params.softmax_w[f, c]
        logits.append(acc)
    return np.asarray(naive_softmax(logits))


def numeric_gradients(X, y, params, h=1e-5):
    """Central-difference gradients of the mean cross-entropy (no dropout)."""

    def loss():
        trace = net.forward_batch(X, params)
        return net.batch_cross_entropy(trace.probs, y)

    grads = {}
    for name, arr in params.tensors():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss()
            arr[idx] = orig - h
            down = loss()
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
            it.iternext()
        grads[name] = g
    return grads


def relative_error(a, b):
    """max |a-b| / max(1, |a|, |b|), elementwise, reduced to a scalar."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def tiny_model(rng, d=3, n_kernels=3, pool_out=2, n_classes=3,
               k1_width=3, stride1=2, k2_width=2, stride2=1):
    """Small random model with reduced kernel sizes for finite differences."""
    k1 = rng.uniform(-0.5, 0.5, size=(n_kernels, d, k1_width))
    k2 = rng.uniform(-0.5, 0.5, size=(n_kernels, k2_width))
    feat = n_kernels * pool_out
    w = rng.uniform(-0.5, 0.5, size=(feat, n_classes))
    return net.ModelParams(
        conv1=net.ConvLayerParams(kernels=k1, biases=rng.uniform(-0.1, 0.1, n_kernels),
                                  stride=stride1),
        conv2=net.ConvLayerParams(kernels=k2, biases=rng.uniform(-0.1, 0.1, n_kernels),
                                  stride=stride2),
        softmax_w=w, softmax_b=rng.uniform(-0.1, 0.1, n_classes),
        pool_out=pool_out, n_classes=n_classes)


def naive_autocorr_f0(frame, sr, f_min=50.0, f_max=600.0):
    """Integer-lag normalized autocorrelation peak; 0.0 when unvoiced."""
    x = np.asarray(frame, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    f_min_eff = max(f_min, 2.0 * sr / n)
    lag_lo = max(2, math.ceil(sr / f_max))
    lag_hi = min(math.floor(sr / f_min_eff), n // 2)
    best_r, best_lag = -1.0, None
    for lag in range(lag_lo, lag_hi + 1):
        num = 0.0
        e1 = 0.0
        e2 = 0.0
        for i in range(n - lag):
            num += x[i] * x[i + lag]
            e1 += x[i] * x[i]
            e2 += x[i + lag] * x[i + lag]
        denom = math.sqrt(e1 * e2) if e1 > 0 and e2 > 0 else 0.0
        r = num / denom if denom > 0 else 0.0
        if r > best_r + 1e-3:
            best_r, best_lag = r, lag
    if best_lag is None or best_r < 0.45:
        return 0.0, max(best_r, 0.0)
    return sr / best_lag, best_r


def naive_median_filter(track, width=5):
    """Running median with edge replication, plain python arithmetic."""
    n = len(track)
    half = width // 2
    out = []
    for i in range(n):
        window = []
        for j in range(i - half, i + half + 1):
            window.append(track[min(max(j, 0), n - 1)])
        window.sort()
        out.append(window[len(window) // 2])
    return np.asarray(out)


def naive_mel(f_hz):
    return 2595.0 * math.log10(1.0 + f_hz / 700.0)
