"""Quantile-count regularity of mark collections and the two bounds built on it.

A collection ``M`` of numbers in (0,1) is mu-regular when, with
``r = floor(|M|^(1-mu))``, every ``i = 1..r`` satisfies
``N_i = #{s in M : s <= i/r} >= |M| i / (2 r)``.  I.i.d. uniform collections
are regular with probability at least ``1 - |M|^(1-mu) exp(-|M|^mu / 8)``, and
two regular sets of size ``v`` at mutual distance at most ``D`` are joined by
an edge with probability at least
``1 - exp(-C v^2 * integral of phi(s, t, D) over [a, 1-a]^2)``, ``a = v^-(1-mu)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .errors import ParameterError, ResourceError
from .kernels import _phi, mark_square_integral
from .parallel import map_ordered

__all__ = [
    "DEFAULT_C",
    "index_range",
    "quantile_counts",
    "is_mu_regular",
    "regularity_bound",
    "connection_bound",
    "LemmaReport",
    "mc_check_regularity",
    "mc_check_connection",
    "sample_regular_marks",
]

# prefactor C in the connection bound 1 - exp(-C v^2 I)
DEFAULT_C = 1.0 / 9.0


def _check_mu(mu):
    if not 0.0 < mu < 0.5:
        raise ParameterError(f"mu must lie in (0, 1/2), got {mu}")


def index_range(n, mu):
    """``|I(mu, M)| = floor(n^(1-mu))`` for a collection of size ``n``."""
    _check_mu(mu)
    # nudge so exact integer powers are not floored away by rounding
    return int(np.floor(float(n) ** (1.0 - mu) * (1.0 + 1e-12)))


def quantile_counts(values, r):
    """``N_i = #{s <= i/r}`` for ``i = 1..r`` in O(len(values) + r)."""
    s = np.asarray(values, dtype=float).ravel()
    if r < 1:
        return np.zeros(0, dtype=np.int64)
    k = np.ceil(s * r).astype(np.int64)
    # exact bin: smallest i with s <= i/r, fixing float rounding at edges
    down = (k > 1) & (s <= (k - 1) / r)
    k[down] -= 1
    up = s > k / r
    k[up] += 1
    k = np.clip(k, 1, r + 1)
    return np.cumsum(np.bincount(k, minlength=r + 2)[1:r + 1])


def is_mu_regular(values, mu):
    """Exact evaluation of every quantile-count inequality."""
    _check_mu(mu)
    s = np.asarray(values, dtype=float).ravel()
    n = s.size
    if n == 0:
        raise ParameterError("mark collection must be non-empty")
    if np.any((s <= 0) | (s >= 1)):
        raise ParameterError("marks must lie in (0, 1)")
    r = index_range(n, mu)
    if r < 1:
        return True
    N = quantile_counts(s, r)
    i = np.arange(1, r + 1)
    # integer form of N_i >= n i / (2 r)
    return bool(np.all(2 * r * N >= n * i))


def regularity_bound(n, mu):
    """``1 - n^(1-mu) exp(-n^mu / 8)``; may be negative (vacuous) for small ``n``."""
    _check_mu(mu)
    if n < 1:
        raise ParameterError("n must be a positive integer")
    n = float(n)
    return float(1.0 - np.exp((1.0 - mu) * np.log(n) - n ** mu / 8.0))


def connection_bound(kernel, v, mu, D, C=DEFAULT_C, method="auto"):
    """Lower bound on the probability that two regular ``v``-sets within distance ``D`` connect."""
    _check_mu(mu)
    if v < 1:
        raise ParameterError("v must be a positive integer")
    if not D > 0 or not C > 0:
        raise ParameterError("D and C must be positive")
    a = float(v) ** (-(1.0 - mu))
    if not a < 0.5:
        raise ParameterError(f"integration bounds cross: v^-(1-mu) = {a} >= 1/2")
    I = mark_square_integral(kernel, a, 1.0 - a, float(D), method=method)
    if np.isinf(I):
        return 1.0
    return float(-np.expm1(-C * float(v) ** 2 * I))


@dataclass
class LemmaReport:
    """Validation outcome.  ``empirical`` is the frequency of the event whose
    probability ``bound`` bounds from below (regularity, or connection)."""

    lemma: str
    params: dict
    bound: float
    empirical: float
    sigma: float
    passed: bool
    vacuous: bool
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        out = asdict(self)
        out["pass"] = out.pop("passed")
        out.update(out.pop("extra"))
        return out

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True)


def _trial_uniforms(seed, t, size):
    return rng.generator(seed, rng.TAG["trial"], t).random(size)


def mc_check_regularity(n, mu, trials, seed, threads=None):
    """Draw ``trials`` uniform collections of size ``n`` and count irregular ones.

    Passes when the failure frequency is at most the failure bound
    plus three binomial standard deviations; vacuous bounds pass automatically.
    """
    _check_mu(mu)
    if trials < 100:
        raise ParameterError("at least 100 trials required")
    n, trials = int(n), int(trials)
    r = index_range(n, mu)
    need = n * np.arange(1, r + 1)

    def one(t):
        N = quantile_counts(_trial_uniforms(seed, t, n), r)
        return bool(np.all(2 * r * N >= need))

    regular = np.array(map_ordered(one, range(trials), threads), dtype=bool)
    bound = regularity_bound(n, mu)
    vacuous = bound <= 0
    q = min(max(1.0 - bound, 0.0), 1.0)
    sigma = float(np.sqrt(q * (1.0 - q) / trials))
    failures = int((~regular).sum())
    rate = failures / trials
    passed = True if vacuous else rate <= q + 3 * sigma
    params = {"n": n, "mu": mu, "trials": trials, "seed": int(seed), "index_range": r}
    return LemmaReport("regularity", params, bound, float(regular.mean()), sigma, bool(passed), bool(vacuous),
                       {"failures": failures, "failure_rate": rate})


def sample_regular_marks(gen, v, mu, max_tries=1000):
    """Rejection-sample ``v`` i.i.d. uniforms conditioned on mu-regularity."""
    for _ in range(max_tries):
        s = gen.random(v)
        if is_mu_regular(s, mu):
            return s
    raise ResourceError(f"no {mu}-regular collection of size {v} in {max_tries} attempts")


def mc_check_connection(kernel, v, mu, D, trials, seed, C=DEFAULT_C, max_tries=1000, threads=None):
    """Monte Carlo check of the connection bound at the worst-case distance ``D``.

    Each trial draws two independent regular mark sets of size ``v``, puts all
    ``v^2`` pairs at distance exactly ``D`` and samples every edge indicator.
    The report also carries the mean exact connection probability
    ``1 - prod(1 - p)`` of the sampled mark sets.
    """
    _check_mu(mu)
    v, trials = int(v), int(trials)
    if trials < 1:
        raise ParameterError("trials must be positive")
    bound = connection_bound(kernel, v, mu, D, C)

    def one(t):
        gen = rng.generator(seed, rng.TAG["trial"], t)
        s1 = sample_regular_marks(gen, v, mu, max_tries)
        s2 = sample_regular_marks(gen, v, mu, max_tries)
        phi = _phi(kernel, s1[:, None], s2[None, :], np.full((v, v), float(D)))
        p = -np.expm1(-phi)
        hit = bool(np.any(gen.random((v, v)) < p))
        total = float(np.sum(phi))
        return hit, float(-np.expm1(-total)) if np.isfinite(total) else 1.0

    res = map_ordered(one, range(trials), threads)
    hits = np.array([h for h, _ in res], dtype=bool)
    exact = np.array([e for _, e in res])
    freq = float(hits.mean())
    sigma = float(np.sqrt(max(bound * (1.0 - bound), 0.0) / trials))
    vacuous = bound <= 0
    passed = freq >= bound - 3 * sigma
    params = {"kernel": kernel.as_dict(), "v": v, "mu": mu, "D": float(D), "C": float(C),
              "trials": trials, "seed": int(seed)}
    return LemmaReport("connection", params, bound, freq, sigma, bool(passed), bool(vacuous),
                       {"exact_mean": float(exact.mean())})
