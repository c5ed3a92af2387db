"""G-estimation of structural nested mean models for difference-in-differences panels."""

import json

from . import _didsnmm
from ._didsnmm import ConfigError, DataError, EstimationError, Panel, gallery_names, set_threads

__all__ = [
    "ConfigError",
    "DataError",
    "EstimationError",
    "Fit",
    "Panel",
    "fit",
    "gallery",
    "gallery_names",
    "optimal_regime",
    "oracle_truth",
    "run_acceptance",
    "sensitivity",
    "set_threads",
    "simulate",
]


def _dump(x):
    if isinstance(x, str):
        return x
    return json.dumps(x)


def _dgp(dgp):
    return dgp if isinstance(dgp, str) else json.dumps(dgp)


def gallery(name):
    return json.loads(_didsnmm.gallery(name))


def simulate(dgp, n, seed=1):
    """Draw a panel. `dgp` is a gallery name or a config dict."""
    return _didsnmm.simulate(_dgp(dgp), n, seed)


def oracle_truth(dgp, mc_size, seed=1):
    return json.loads(_didsnmm.oracle_truth(_dgp(dgp), mc_size, seed))


class Fit:
    def __init__(self, core):
        self._core = core

    psi = property(lambda self: self._core.psi)
    se = property(lambda self: self._core.se)
    covariance = property(lambda self: self._core.covariance)
    influence = property(lambda self: self._core.influence)
    names = property(lambda self: self._core.names)
    method = property(lambda self: self._core.method)

    def to_dict(self):
        return json.loads(self._core.to_json())

    def query(self, q):
        """Delta-method estimate of one counterfactual query."""
        return json.loads(self._core.query(_dump(q)))

    def bootstrap(self, queries, B=200, seed=1):
        """Pipeline bootstrap (nuisances and psi refit per replicate)."""
        return json.loads(self._core.pipeline_bootstrap(_dump(list(queries)), B, seed))

    def cde(self, r, m, k, B=0, seed=1):
        return json.loads(self._core.cde(r, m, k, B, seed))

    def __repr__(self):
        pairs = ", ".join(f"{n}={v:.4g}" for n, v in zip(self.names, self.psi))
        return f"Fit({self.method}: {pairs})"


def fit(data, model, nuisance=None, method="closed-form", ridge=0.0, seed=7, bias=None):
    """Estimate psi. `bias` is an optional bias-function dict (coarse models only)."""
    family, c0 = "", 0.0
    if bias is not None:
        bias = dict(bias)
        c0 = float(bias.pop("c0", 0.0))
        family = json.dumps(bias)
    return Fit(_didsnmm.fit(data, _dump(model), _dump(nuisance or {}), method, ridge, seed, c0, family))


def sensitivity(data, model, nuisance=None, family=None, grid=(-1, -0.5, 0, 0.5, 1), targets=None,
                method="closed-form"):
    family = family or {"family": "constant"}
    targets = targets if targets is not None else ["psi:0"]
    return json.loads(_didsnmm.sensitivity(data, _dump(model), _dump(nuisance or {}), _dump(family),
                                           [float(g) for g in grid], _dump(list(targets)), method))


def optimal_regime(data, model, nuisance=None, method="iterative", seed=1):
    return json.loads(_didsnmm.optimal_regime(data, _dump(model), _dump(nuisance or {}), method, seed))


def run_acceptance(profile="quick", only=()):
    return json.loads(_didsnmm.run_acceptance(profile, list(only)))
