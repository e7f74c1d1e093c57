#!/usr/bin/env python3
"""Figures from maxent-ts output directories.

    python3 scripts/plot.py OUT_DIR [--save fig.png]

Picks the plot from whatever tables OUT_DIR holds: spectrum.csv,
var.csv or risk.csv. Needs pandas and matplotlib.
"""
import argparse
import pathlib

import matplotlib.pyplot as plt
import pandas as pd


def spectrum(d, ax):
    s = pd.read_csv(d / "spectrum.csv")
    ax.plot(s["lambda"], s.ensemble, label="ensemble")
    ax.plot(s["lambda"], s.empirical, label="empirical")
    if s.marchenko_pastur.notna().any():
        ax.plot(s["lambda"], s.marchenko_pastur, "--", label="Marchenko-Pastur")
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("density")


def var(d, ax):
    v = pd.read_csv(d / "var.csv")
    first = v[v.model == v.model.iloc[0]]
    days = first.drop_duplicates("day")
    ax.plot(days.day, days["return"], color="0.6", lw=0.6, label="return")
    for (model, level), g in v.groupby(["model", "level"]):
        ax.plot(g.day, g["var"], lw=0.9, label=f"{model} {level:g}")
    ax.set_xlabel("day")


def risk(d, ax):
    r = pd.read_csv(d / "risk.csv")
    labels = [f"{m} N={s} q={q:.2f} #{p}" for m, s, q, p in zip(r["mode"], r["size"], r.q, r.portfolio)]
    y = range(len(r))
    ax.errorbar(r["mean"], y, xerr=[r["mean"] - r.p05, r.p95 - r["mean"]], fmt="o")
    ax.set_yticks(list(y), labels)
    ax.set_xlabel("out-of-sample variance")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--save")
    a = ap.parse_args()
    for name, fn in [("spectrum.csv", spectrum), ("var.csv", var), ("risk.csv", risk)]:
        if (a.out_dir / name).exists():
            break
    else:
        raise SystemExit(f"nothing to plot in {a.out_dir}")
    fig, ax = plt.subplots(figsize=(8, 4.5))
    fn(a.out_dir, ax)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize="small")
    fig.tight_layout()
    if a.save:
        fig.savefig(a.save, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
