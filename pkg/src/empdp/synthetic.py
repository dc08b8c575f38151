"""Synthetic collections for demos and tests."""

from __future__ import annotations

import numpy as np

from empdp.dataset import Database, DatabaseCollection


def subsample_collection(
    values: np.ndarray,
    n_databases: int,
    size: int,
    seed: int = 0,
    column: str = "value",
) -> DatabaseCollection:
    """Databases drawn as random subsets (without replacement) of a fixed population.

    Individual ``k`` has id ``p{k:04d}`` and the single value ``values[k]``.
    """
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    ids = np.array([f"p{k:04d}" for k in range(len(values))])
    dbs = []
    for j in range(n_databases):
        pick = np.sort(rng.choice(len(values), size=size, replace=False))
        dbs.append(Database(f"db{j:04d}", ids[pick], {column: values[pick]}))
    return DatabaseCollection(tuple(dbs), (column,))


def whale_collection(
    n_databases: int = 100,
    population: int = 50,
    size: int = 20,
    whale: float = 50.0,
    seed: int = 0,
) -> DatabaseCollection:
    """Population of exponential(1) values plus one outlier ("whale") of value ``whale``.

    A sum over a database that contains the whale is shifted by ``whale``, so
    that individual dominates the privacy loss of the sum query.
    """
    rng = np.random.default_rng(seed)
    values = rng.exponential(1.0, population)
    values[0] = whale
    return subsample_collection(values, n_databases, size, seed=seed + 1)
