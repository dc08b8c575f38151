"""Convert monthly gridded precipitation into a directory-layout collection.

Input is a long CSV with columns ``cell, year, month, precip`` (for example an
export of the GPCP monthly product; this script does not download anything).
Each year becomes one database whose individuals are grid cells and whose single
column ``total`` is the annual precipitation sum. Years with missing months are
dropped, as are cells absent from some retained year when ``--balanced`` is set.

    python3 scripts/gpcp_to_collection.py monthly.csv gpcp_annual/
    EMPDP_GPCP=gpcp_annual EMPDP_GPCP_COLUMN=total python3 -m pytest -m slow
"""

import argparse

import numpy as np
import pandas as pd

from empdp.dataset import Database, DatabaseCollection, save_collection


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source")
    ap.add_argument("target")
    ap.add_argument("--balanced", action="store_true")
    args = ap.parse_args()

    df = pd.read_csv(args.source, dtype={"cell": str})
    months = df.groupby(["cell", "year"])["month"].nunique()
    complete = months[months == 12].reset_index()[["cell", "year"]]
    df = df.merge(complete, on=["cell", "year"])
    annual = df.groupby(["year", "cell"], sort=True)["precip"].sum().reset_index()
    if args.balanced:
        years = annual["year"].nunique()
        keep = annual.groupby("cell")["year"].nunique()
        annual = annual[annual["cell"].isin(keep[keep == years].index)]

    dbs = tuple(
        Database(f"y{year}", np.array(g["cell"], dtype=object), {"total": g["precip"].to_numpy()})
        for year, g in annual.groupby("year", sort=True)
    )
    save_collection(DatabaseCollection(dbs, ("total",)), args.target, layout="dir")
    print(f"{len(dbs)} annual databases, {annual['cell'].nunique()} cells -> {args.target}")


if __name__ == "__main__":
    main()
