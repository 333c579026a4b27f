#!/usr/bin/env python3
"""Prepare scored COMPAS splits for rocfair.

Reads the ProPublica two-year cohort (compas-scores-two-years.csv), applies
the usual cleaning, and for each seed draws a random 30/35/35
TRAIN/POST/TEST split, fits a logistic-regression score on TRAIN and writes
POST and TEST as `score,group,label` CSVs:

    <out>/post_<seed>.csv
    <out>/test_<seed>.csv

Cleaning: keep days_b_screening_arrest in [-30, 30], drop is_recid == -1,
drop charge degree "O", add length of stay in days, keep African-American
and Caucasian defendants. The label is is_recid and the group is race.

Usage:
    python3 scripts/prepare_compas.py compas-scores-two-years.csv out/compas --seeds 10
"""

import argparse
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

COLUMNS = [
    "age",
    "c_charge_degree",
    "race",
    "sex",
    "priors_count",
    "days_b_screening_arrest",
    "is_recid",
    "c_jail_in",
    "c_jail_out",
]
GROUPS = ["African-American", "Caucasian"]


def clean(raw: pd.DataFrame) -> pd.DataFrame:
    df = raw[COLUMNS].copy()
    df = df[df["days_b_screening_arrest"].between(-30, 30)]
    df = df[df["is_recid"] != -1]
    df = df[df["c_charge_degree"] != "O"]
    stay = pd.to_datetime(df["c_jail_out"]) - pd.to_datetime(df["c_jail_in"])
    df["length_of_stay"] = stay.dt.days
    df = df.drop(columns=["c_jail_in", "c_jail_out", "days_b_screening_arrest"])
    df = df[df["race"].isin(GROUPS)]
    return df.reset_index(drop=True)


def features(df: pd.DataFrame) -> np.ndarray:
    x = pd.get_dummies(
        df[["age", "c_charge_degree", "sex", "priors_count", "length_of_stay"]],
        columns=["c_charge_degree", "sex"],
        drop_first=True,
        dtype=float,
    )
    # attribute-aware: the protected attribute is appended as an input
    x["race"] = (df["race"] == GROUPS[0]).astype(float)
    return x.to_numpy(dtype=float)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--first-seed", type=int, default=0)
    args = ap.parse_args()

    df = clean(pd.read_csv(args.source))
    x = features(df)
    y = df["is_recid"].to_numpy(dtype=int)
    print(f"{len(df)} rows after cleaning, prevalence {y.mean():.3f}")
    args.out.mkdir(parents=True, exist_ok=True)

    n = len(df)
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        perm = np.random.default_rng(seed).permutation(n)
        n_train, n_post = round(0.30 * n), round(0.35 * n)
        train, post, test = perm[:n_train], perm[n_train : n_train + n_post], perm[n_train + n_post :]
        scaler = StandardScaler().fit(x[train])
        model = LogisticRegression(max_iter=1000).fit(scaler.transform(x[train]), y[train])
        for name, idx in (("post", post), ("test", test)):
            out = pd.DataFrame(
                {
                    "score": model.predict_proba(scaler.transform(x[idx]))[:, 1],
                    "group": df["race"].to_numpy()[idx],
                    "label": y[idx],
                }
            )
            out.to_csv(args.out / f"{name}_{seed}.csv", index=False, float_format="%.17g")
        acc = ((model.predict_proba(scaler.transform(x[test]))[:, 1] >= 0.5) == y[test]).mean()
        print(f"seed {seed}: train {len(train)} post {len(post)} test {len(test)}, unconstrained test accuracy {acc:.3f}")


if __name__ == "__main__":
    main()
