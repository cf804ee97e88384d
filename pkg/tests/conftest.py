import numpy as np
import pytest

from mflqg import build_model


def make_pf_config(**overrides):
    """Constant-coefficient partial-filtration config; overrides patch coefficients."""
    coeffs = {
        "A": 0.0,
        "B": 1.0,
        "alpha": 0.0,
        "m": 0.0,
        "sigma": 0.1,
        "sigma_tilde": 0.1,
        "Q": 1.0,
        "R": 1.0,
        "G": 0.0,
        "x_init": 1.0,
    }
    grid = {"T": 1.0, "M": 1000}
    pop = {"N": 8, "reps": 2, "seed": 7}
    for key, val in overrides.items():
        if key in ("T", "M"):
            grid[key] = val
        elif key in ("N", "reps", "seed"):
            pop[key] = val
        else:
            coeffs[key] = val
    return {"mode": "pf", "grid": grid, "coefficients": coeffs, "population": pop}


def make_po_config(**overrides):
    cfg = make_pf_config(**{k: v for k, v in overrides.items() if k not in ("H", "H_tilde", "h")})
    cfg["mode"] = "po"
    cfg["coefficients"].setdefault("H", overrides.get("H", 1.0))
    cfg["coefficients"].setdefault("H_tilde", overrides.get("H_tilde", 0.0))
    cfg["coefficients"].setdefault("h", overrides.get("h", 0.0))
    for key in ("H", "H_tilde", "h"):
        if key in overrides:
            cfg["coefficients"][key] = overrides[key]
    return cfg


@pytest.fixture
def pf_model():
    return build_model(make_pf_config())


@pytest.fixture
def rng():
    return np.random.default_rng(123)
