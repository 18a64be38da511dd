"""Plots storage energy and per-step convergence time from an mpc/compare output directory."""

import argparse
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def plot_storage(out: pathlib.Path) -> None:
    fig, ax = plt.subplots()
    for path in sorted(out.glob("schedule_*.csv")):
        df = pd.read_csv(path)
        energy = df[df.variable == "E"]
        for entity, rows in energy.groupby("entity"):
            ax.plot(rows.step, rows.value, label=f"{path.stem[9:]} {entity}")
    ax.set_xlabel("step")
    ax.set_ylabel("stored energy (p.u.)")
    ax.legend(fontsize="small")
    fig.savefig(out / "storage.png", dpi=120)


def plot_times(out: pathlib.Path) -> None:
    fig, ax = plt.subplots()
    for path in sorted(out.glob("timeseries_*.csv")) + sorted(out.glob("steps_*.csv")):
        df = pd.read_csv(path)
        ax.plot(df.step, df.convergence_time, marker=".", label=path.stem)
    ax.set_xlabel("step")
    ax.set_ylabel("convergence time (s)")
    ax.legend(fontsize="small")
    fig.savefig(out / "convergence_time.png", dpi=120)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=pathlib.Path, help="directory written by mpcopf_cli")
    args = parser.parse_args()
    plot_storage(args.out)
    plot_times(args.out)
