"""Tolerances, iteration budgets and enumeration caps.

Defaults can be overridden by a JSON file named in ``CQVERIFY_CONFIG`` and
then by command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Config:
    herm_tol: float = 1e-10
    canon_tol: float = 1e-9
    supp_tol: float = 1e-9
    trace_tol: float = 1e-9
    prune_tol: float = 1e-12
    entail_tol: float = 1e-8
    coupling_tol: float = 1e-6
    solver_tol: float = 1e-4
    solver_max_iters: int = 20_000
    loop_max_iters: int = 10_000
    loop_residual_tol: float = 1e-10
    wp_max_iters: int = 10_000
    wp_tol: float = 1e-10
    enum_cap: int = 1_000_000
    transport_cap: int = 4096
    oracle_trunc: float = 1e3
    random_probes: int = 4
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})


DEFAULT = Config()


def load_config(path: str | None = None) -> Config:
    """Read a JSON config file; unknown keys are kept under ``extra``."""
    path = path or os.environ.get("CQVERIFY_CONFIG")
    if not path:
        return DEFAULT
    with open(path) as fh:
        raw = json.load(fh)
    names = {f.name for f in dataclasses.fields(Config)}
    known = {k: v for k, v in raw.items() if k in names and k != "extra"}
    extra = {k: v for k, v in raw.items() if k not in names}
    cfg = Config(**known, extra=extra)
    for f in dataclasses.fields(Config):
        v = getattr(cfg, f.name)
        if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
            raise ValueError(f"config value {f.name} must be positive")
    return cfg
