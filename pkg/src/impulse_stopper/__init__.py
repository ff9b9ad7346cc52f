"""Controller-stopper games with impulse control.

Submodules: ``model`` (specs and validation), ``operators`` (generator and
intervention operator on grids), ``closedform`` (threshold and investor
models), ``qvi`` (policy-iteration solver), ``simulate`` (Monte Carlo),
``verify`` (region classification and certificates), ``cli``.

Names are resolved lazily so that ``impulse-stopper --threads`` can set
thread caps before numpy and numba load.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "model": ("GameSpec", "LevyDiffusionSpec", "InterventionSpec", "PayoffSpec", "Grid",
              "GridFunction", "ThresholdImpulsePolicy", "StopPolicy", "SpecError", "gbm",
              "proportional_intervention", "validate_spec", "require_valid", "as_nonzero_sum"),
    "operators": ("apply_generator", "generator_stencil", "intervention_operator"),
    "closedform": ("Example1Params", "Example2Params", "example1_solve", "example2_solve",
                   "smooth_fit_kappa1"),
    "qvi": ("QviProblem", "QviError", "solve_qvi", "solve_nonzero_sum", "qvi_residual"),
    "simulate": ("SimulationConfig", "estimate_payoff", "deviation_test", "simulate_investor"),
    "verify": ("RegionError", "classify_regions", "check_zero_sum_conditions",
               "check_nonzero_sum_conditions"),
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}
__all__ = sorted(_WHERE)


def __getattr__(name):
    if name in _WHERE:
        return getattr(import_module(f".{_WHERE[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + __all__)
