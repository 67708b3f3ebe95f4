"""Multi-level second-order few-shot learning primitives."""

from ._core import (
    autocorrelation,
    cooccurrence_difference,
    gen_synthetic,
    infer,
    maxexp,
    maxexp_clamp,
    maxexp_pm_hard,
    maxexp_pm_soft,
    pn_maxexp,
    pn_maxexp_pm,
    pn_sigme,
    rbf_scale_prior,
    run_cli,
    sigme,
    solve_transport,
    trace_normalize,
    verify,
)

__all__ = [
    "autocorrelation",
    "cooccurrence_difference",
    "gen_synthetic",
    "infer",
    "maxexp",
    "maxexp_clamp",
    "maxexp_pm_hard",
    "maxexp_pm_soft",
    "pn_maxexp",
    "pn_maxexp_pm",
    "pn_sigme",
    "rbf_scale_prior",
    "run_cli",
    "sigme",
    "solve_transport",
    "trace_normalize",
    "verify",
]
