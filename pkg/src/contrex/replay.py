"""Per-relation generative models over latent representations.

Single Gaussians are moment-matched with population (1/n) normalization.
Mixtures generalize this through EM with k-means++ initialization; with one
component the mixture is exactly the moment fit. Covariances are stored raw;
the ridge regularizer is added to the diagonal only where a factorization is
needed (density evaluation, sampling), so moment formulas stay exact.

The store keeps one (query-space, prompted-space) model pair per relation and
deliberately exposes no way to retain raw training instances.
"""

import numpy as np
from scipy.linalg import cholesky

from .errors import InvalidArgumentError, NumericError

DEFAULT_RIDGE = 1e-4
EM_MAX_ITER = 100
EM_REL_TOL = 1e-6


class LatentGaussian:
    def __init__(self, mu, sigma, ridge=DEFAULT_RIDGE):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.ridge = float(ridge)
        if self.mu.ndim != 1 or self.sigma.shape != (self.mu.size, self.mu.size):
            raise InvalidArgumentError(
                f"incompatible moment shapes {self.mu.shape} / {self.sigma.shape}"
            )

    @property
    def dim(self):
        return self.mu.size

    def regularized_sigma(self):
        return self.sigma + self.ridge * np.eye(self.dim)

    def cholesky_factor(self):
        try:
            return cholesky(self.regularized_sigma(), lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - ridge prevents this
            raise NumericError(f"covariance not positive definite: {exc}") from exc


class LatentMixture:
    def __init__(self, weights, components, em_log_likelihoods=()):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.components = list(components)
        self.em_log_likelihoods = list(em_log_likelihoods)
        if self.weights.size != len(self.components):
            raise InvalidArgumentError("one weight per component required")
        if np.any(self.weights <= 0) or abs(np.sum(self.weights) - 1.0) > 1e-12:
            raise InvalidArgumentError("weights must be positive and sum to 1")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim


class LatentGaussianStore:
    """Relation -> (query-space mixture, prompted-space mixture).

    Relations are only ever added; no instance-level data is accepted or
    retrievable, which is what makes the pipeline rehearsal-free.
    """

    def __init__(self):
        self._models = {}

    def add(self, relation, query_model, prompted_model):
        r = int(relation)
        if r in self._models:
            raise InvalidArgumentError(f"relation {r} already has generative models")
        self._models[r] = (query_model, prompted_model)

    def relations(self):
        return sorted(self._models)

    def query_model(self, relation):
        return self._models[int(relation)][0]

    def prompted_model(self, relation):
        return self._models[int(relation)][1]

    def __len__(self):
        return len(self._models)

    def __contains__(self, relation):
        return int(relation) in self._models


def _as_samples(samples):
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InvalidArgumentError(f"expected (n, dim) samples, got shape {x.shape}")
    return x


def fit_gaussian(samples, ridge=DEFAULT_RIDGE):
    """Moment-matched Gaussian: sample mean and population (1/n) covariance."""
    x = _as_samples(samples)
    mu = np.mean(x, axis=0)
    centered = x - mu
    sigma = (centered.T @ centered) / x.shape[0]
    return LatentGaussian(mu, sigma, ridge)


def _log_density(x, component):
    """Row-wise log density under the ridge-regularized Gaussian."""
    chol = component.cholesky_factor()
    diff = (x - component.mu).T
    solved = np.linalg.solve(chol, diff)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    quad = np.sum(solved**2, axis=0)
    return -0.5 * (component.dim * np.log(2.0 * np.pi) + log_det + quad)


def mixture_log_likelihood(x, weights, components):
    x = _as_samples(x)
    log_probs = np.stack(
        [np.log(w) + _log_density(x, c) for w, c in zip(weights, components)], axis=1
    )
    m = np.max(log_probs, axis=1, keepdims=True)
    return float(np.sum(m.ravel() + np.log(np.sum(np.exp(log_probs - m), axis=1))))


def _kmeanspp_centers(x, k, rng):
    n = x.shape[0]
    centers = [x[int(rng.integers(0, n))]]
    for _ in range(1, k):
        d2 = np.min(
            np.stack([np.sum((x - c) ** 2, axis=1) for c in centers]), axis=0
        )
        if np.sum(d2) <= 0:
            centers.append(x[int(rng.integers(0, n))])
            continue
        centers.append(x[int(rng.choice_weighted(d2))])
    return np.stack(centers)


def fit_mixture(samples, n_components, rng, ridge=DEFAULT_RIDGE, diagonal=False,
                max_iter=EM_MAX_ITER, rel_tol=EM_REL_TOL):
    """EM-fitted Gaussian mixture; n_components=1 is exactly fit_gaussian.

    Log-likelihood is tracked per iteration and EM stops at convergence or at
    the first non-increase, so the recorded trace is non-decreasing.
    """
    x = _as_samples(samples)
    if n_components < 1:
        raise InvalidArgumentError("n_components must be >= 1")
    if x.shape[0] < n_components:
        raise InvalidArgumentError(
            f"need at least {n_components} samples, got {x.shape[0]}"
        )
    if n_components == 1:
        return LatentMixture([1.0], [fit_gaussian(x, ridge)])

    n, dim = x.shape
    centers = _kmeanspp_centers(x, n_components, rng)
    assign = np.argmin(
        np.stack([np.sum((x - c) ** 2, axis=1) for c in centers]), axis=0
    )
    weights = np.ones(n_components) / n_components
    components = []
    for k in range(n_components):
        members = x[assign == k]
        if members.shape[0] == 0:
            members = x[[int(rng.integers(0, n))]]
        components.append(fit_gaussian(members, ridge))
        weights[k] = max(members.shape[0], 1)
    weights = weights / np.sum(weights)

    trace = []
    prev = -np.inf
    for _ in range(max_iter):
        # E-step: responsibilities under the current ridged components
        log_probs = np.stack(
            [np.log(w) + _log_density(x, c) for w, c in zip(weights, components)],
            axis=1,
        )
        m = np.max(log_probs, axis=1, keepdims=True)
        log_norm = m.ravel() + np.log(np.sum(np.exp(log_probs - m), axis=1))
        ll = float(np.sum(log_norm))
        if trace and ll < prev:
            break
        trace.append(ll)
        if trace and prev > -np.inf and abs(ll - prev) <= rel_tol * abs(prev):
            break
        prev = ll
        resp = np.exp(log_probs - log_norm[:, None])
        # M-step: weighted moments
        totals = np.sum(resp, axis=0)
        totals = np.maximum(totals, 1e-12)
        weights = totals / n
        new_components = []
        for k in range(n_components):
            r = resp[:, k][:, None]
            mu = np.sum(r * x, axis=0) / totals[k]
            centered = x - mu
            sigma = (centered * r).T @ centered / totals[k]
            if diagonal:
                sigma = np.diag(np.diag(sigma))
            new_components.append(LatentGaussian(mu, sigma, ridge))
        components = new_components

    return LatentMixture(weights, components, em_log_likelihoods=trace)


def sample(model, n, rng):
    """Draw n vectors: pick a component by weight, then mu + chol(sigma)·eps."""
    if n < 1:
        raise InvalidArgumentError("need n >= 1 samples")
    if isinstance(model, LatentGaussian):
        model = LatentMixture([1.0], [model])
    chols = [c.cholesky_factor() for c in model.components]
    picks = np.atleast_1d(rng.choice_weighted(model.weights, size=n))
    eps = rng.normal((n, model.dim))
    out = np.empty((n, model.dim))
    for i in range(n):
        c = model.components[picks[i]]
        out[i] = c.mu + chols[picks[i]] @ eps[i]
    return out
