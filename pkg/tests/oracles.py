"""Independent reference implementations used as test oracles.

Everything here is written from the definitions with plain loops or
broadcasting, without calling the package's own sweep, loss or bias code.
"""

import math

import numpy as np

# metric lattice step for brute-force grid tests; dyadic so every lattice
# point is exactly representable and lands exactly on the dyadic grid
LATTICE = 1.0 / 8.0
GRID_STEP = 2.0 ** -13
GRID_SIZE = 100_000


def lattice_batch(rng, n_samples, n_cls, span=4.0):
    """Random metrics on the 1/8 lattice in [-span, span] plus labels."""
    k = int(span / LATTICE)
    metrics = rng.integers(-k, k + 1, size=(n_samples, n_cls)) * LATTICE
    labels = rng.integers(0, n_cls, size=n_samples)
    return metrics, labels


def pos_and_maxneg(metrics, labels):
    pos = np.array([metrics[s, labels[s]] for s in range(len(labels))])
    neg = np.array([max(metrics[s, j] for j in range(metrics.shape[1]) if j != labels[s])
                    for s in range(len(labels))])
    return pos, neg


def grid_best_count(pos, neg, lo):
    """Best count of p > t >= q over the dense grid lo + GRID_STEP * k.

    Uses a difference array: a sample is counted on the half-open grid index
    range [idx(q), idx(p)).  Valid when pos, neg and lo lie on the lattice.
    """
    diff = np.zeros(GRID_SIZE + 1, dtype=np.int64)
    for p, q in zip(pos, neg):
        if p <= q:
            continue
        a = (q - lo) / GRID_STEP
        b = (p - lo) / GRID_STEP
        assert a == int(a) and b == int(b)
        a, b = int(a), int(b)
        diff[min(a, GRID_SIZE)] += 1
        diff[min(b, GRID_SIZE)] -= 1
    counts = np.cumsum(diff[:GRID_SIZE])
    return int(counts.max())


def direct_counts(pos, neg, thresholds):
    """Count of p > t >= q for every threshold by broadcasting."""
    t = np.asarray(thresholds)[:, None]
    return ((pos[None, :] > t) & (t >= neg[None, :])).sum(axis=1)


def exhaustive_best(pos, neg):
    """Best count over every observed value plus one value below all of them."""
    vals = np.concatenate([pos, neg])
    cand = np.append(np.unique(vals), vals.min() - 1.0)
    return int(direct_counts(pos, neg, cand).max())


def naive_softplus(z):
    return math.log(1.0 + math.exp(z))


def reference_loss(name, raw, label, bias, gamma=1.0):
    """Loss of one sample written out term by term (moderate inputs only)."""
    raw = [float(v) for v in raw]
    bias = [float(v) for v in bias]
    n = len(raw)
    normalized = "-n" in name or name == "naive-n"
    s = -1.0 if normalized else 1.0
    if name.startswith("naive"):
        return -raw[label] + sum(raw[j] for j in range(n) if j != label) / (n - 1)
    if name in ("bce-di", "bce-ndi"):
        b = bias[label]
        m = [raw[j] + s * b for j in range(n)]
        return naive_softplus(-m[label]) + sum(naive_softplus(m[j]) for j in range(n) if j != label)
    m = [raw[j] + s * bias[j] for j in range(n)]
    if name.startswith("soft"):
        return -math.log(math.exp(m[label]) / sum(math.exp(v) for v in m))
    return naive_softplus(-m[label]) + sum(naive_softplus(m[j]) for j in range(n) if j != label)


def golden_section_min(f, lo, hi, tol=1e-11, max_iter=500):
    """Minimizer of a unimodal function on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def bounded_bce_loss(lo, hi, n, beta):
    """Unified-bias BCE loss with the positive metric at hi and the N - 1 negatives at lo."""
    # logaddexp(0, z) is softplus without overflow for the wide ranges used here
    return float(np.logaddexp(0.0, beta - hi) + (n - 1) * np.logaddexp(0.0, lo - beta))


def golden_bias(lo, hi, n):
    """Bias minimizing bounded_bce_loss, by golden-section search."""
    return golden_section_min(lambda beta: bounded_bce_loss(lo, hi, n, beta), lo - 10.0, hi + math.log(n) + 10.0)


def central_difference(f, x, h=1e-5):
    """Gradient of f at the flat array x by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[k] += h
        xm.flat[k] -= h
        g.flat[k] = (f(xp) - f(xm)) / (2.0 * h)
    return g


# gradients that vanish identically (softmax shift invariance, cosine in one
# dimension) would otherwise compare rounding noise against rounding noise
REL_ERR_FLOOR = 1e-4


def rel_error(a, b, floor=REL_ERR_FLOOR):
    """||a - b|| / max(||a||, ||b||, floor)."""
    a = np.ravel(a)
    b = np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
