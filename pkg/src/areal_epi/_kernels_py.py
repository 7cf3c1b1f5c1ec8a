"""Pure-numpy kernels.  Same algorithms and signatures as ``_kernels.pyx``."""
import numpy as np
from scipy.special import gammaln

# Above this NB size k = 1/psi the log rising factorial uses a Stirling
# difference instead of subtracting two large lgamma values.
STIRLING_K = 1e4
# Below this psi the NB and Poisson densities agree to double precision for any
# representable mean, and 1/psi may overflow; such cells use the Poisson branch.
PSI_POISSON = 1e-300
QMAX = np.iinfo(np.int64).max


def _stirling_tail(x):
    # for huge x the powers overflow to inf and the tail correctly becomes 0
    with np.errstate(over="ignore"):
        x2 = x * x
        return 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2)


def log_rising_ratio(y, k):
    """``lgamma(y + k) - lgamma(k) - y*log(k)`` for y >= 0, k > 0."""
    y = np.asarray(y, dtype=float)
    k = np.asarray(k, dtype=float)
    y, k = np.broadcast_arrays(y, k)
    out = np.empty(y.shape)
    big = k >= STIRLING_K
    small = ~big
    ys, ks = y[small], k[small]
    out[small] = gammaln(ys + ks) - gammaln(ks) - ys * np.log(ks)
    yb, kb = y[big], k[big]
    out[big] = ((yb + kb - 0.5) * np.log1p(yb / kb) - yb
                + _stirling_tail(yb + kb) - _stirling_tail(kb))
    return out


def nb_terms(y, mu, psi):
    """Per-cell log density and its first/second mu-derivatives.

    Returns ``(loglik, score, hess, fisher)`` where ``score`` and ``hess`` are
    d/dmu and d2/dmu2 of the log density and ``fisher = 1/(mu (1 + psi mu))``.
    ``psi == 0`` (anything up to ``PSI_POISSON``) is the Poisson case,
    handled analytically.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), y.shape)
    pm = psi * mu
    lp = np.log1p(pm)
    ll = y * np.log(mu) - gammaln(y + 1.0)
    pois = psi <= PSI_POISSON
    nb = ~pois
    ll[pois] -= mu[pois]
    k = 1.0 / psi[nb]
    ll[nb] += log_rising_ratio(y[nb], k) - (k + y[nb]) * lp[nb]
    var = mu * (1.0 + pm)
    score = (y - mu) / var
    hess = -y / (mu * mu) + psi * (1.0 + psi * y) / (1.0 + pm) ** 2
    return ll, score, hess, 1.0 / var


def nb_quantile(mu, psi, q):
    """Smallest integer y with NB cdf(y; mu, psi) >= q, by exact pmf summation."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    psi = np.broadcast_to(np.asarray(psi, dtype=float), mu.shape)
    q = np.broadcast_to(np.asarray(q, dtype=float), mu.shape)
    out = np.empty(mu.shape, dtype=np.int64)
    for i in range(mu.size):
        out.flat[i] = _quantile1(mu.flat[i], psi.flat[i], q.flat[i])
    return out


def _quantile1(mu, psi, q):
    if q <= 0.0:
        return 0
    if q >= 1.0:
        return QMAX
    sd = np.sqrt(mu * (1.0 + psi * mu))
    upper = int(mu + 40.0 * sd + 50.0)
    while True:
        ys = np.arange(upper + 1, dtype=float)
        ll = nb_terms(ys, np.full(ys.shape, mu), psi)[0]
        cdf = np.cumsum(np.exp(ll))
        idx = int(np.searchsorted(cdf, q, side="left"))
        if idx <= upper:
            return idx
        if cdf[-1] > 1.0 - 1e-12 and ll[-1] < -700.0:
            # q sits beyond the floating-point resolution of the cdf
            return QMAX
        upper *= 2
