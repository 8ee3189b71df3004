import warnings

import numpy as np
import pytest

from cardmatch.data import make_dataset


@pytest.fixture(autouse=True)
def _quiet_zero_capacity():
    # zero-capacity strata are expected in random fixtures
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*no pairs can form there")
        yield


def tiny_dataset(xt, xc, keys_t=None, keys_c=None, names=None, outcome=None):
    """Exposed rows xt, unexposed rows xc (each a list of covariate vectors)."""
    xt = np.asarray(xt, dtype=float).reshape(len(xt), -1)
    xc = np.asarray(xc, dtype=float).reshape(len(xc), -1)
    ids = [f"t{i}" for i in range(len(xt))] + [f"c{i}" for i in range(len(xc))]
    keys = None
    if keys_t is not None:
        keys = [(k,) for k in keys_t] + [(k,) for k in keys_c]
    return make_dataset(ids, [True] * len(xt) + [False] * len(xc), np.vstack([xt, xc]), names=names,
                        exact_keys=keys, exact_names=["s"] if keys else (), outcome=outcome)
