"""DDPM sampler lab: schedules, closed-form score oracles, the reverse sampler,
exact Gaussian KL and Monte Carlo diagnostics."""

from ._core import *  # noqa: F401,F403
from ._core import (
    ChainError,
    ConfigError,
    DomainError,
    ExperimentError,
    NumericError,
    SamplerKind,
    Schedule,
    ScoreOracle,
    Target,
    build_id,
    run_experiment,
)

__version__ = "0.1.0"


def experiment(name, *, seed=0, workers=1, target=None, schedule=None, params=None, output_dir=None):
    """Builds a config with spec_version 1 and runs it."""
    config = {"spec_version": 1, "experiment": name, "seed": seed, "workers": workers}
    if target is not None:
        config["target"] = target
    if schedule is not None:
        config["schedule"] = schedule
    if params is not None:
        config["params"] = params
    if output_dir is not None:
        config["output_dir"] = str(output_dir)
    return run_experiment(config)
