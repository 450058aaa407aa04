import numpy as np
import pytest


def finite_diff(f, arrays, step=1e-5):
    """Central finite differences of a scalar function of numpy arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + step
            lp = f()
            arr[i] = orig - step
            lm = f()
            arr[i] = orig
            g[i] = (lp - lm) / (2 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-10):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def ccc_direct(pred, gold):
    """Independent direct evaluation of the concordance formula, used as the
    oracle against the library implementation."""
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    mean_p, mean_g = pred.mean(), gold.mean()
    var_p = ((pred - mean_p) ** 2).mean()
    var_g = ((gold - mean_g) ** 2).mean()
    covar = ((pred - mean_p) * (gold - mean_g)).mean()
    denom = var_p + var_g + (mean_p - mean_g) ** 2
    if denom == 0.0:
        return 1.0
    if var_p == 0.0 and var_g == 0.0:
        return 0.0
    return 2.0 * covar / denom


def median_filter_bruteforce(signal, window):
    """Per-position sort-and-pick median with replicate-edge padding and
    window clamping, written independently of the library version."""
    signal = np.asarray(signal, dtype=np.float64)
    t = len(signal)
    if window > t:
        window = t if t % 2 == 1 else t - 1
    if window <= 1:
        return signal.copy()
    half = window // 2
    out = np.empty(t)
    for i in range(t):
        vals = []
        for j in range(i - half, i + half + 1):
            vals.append(signal[min(max(j, 0), t - 1)])
        vals.sort()
        out[i] = vals[len(vals) // 2]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
