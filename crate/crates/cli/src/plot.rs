//! Standalone matplotlib scripts for traces.

use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::trace::COLUMNS;

/// Columns the script reads; all of them are trace columns.
pub const PLOTTED: [&str; 5] = ["t", "L_hat", "Jc_hat", "err_X", "mu"];

const TEMPLATE: &str = r##"#!/usr/bin/env python3
"""Four-panel view of rclqr traces: L_hat, Jc_hat, err_X and mu against t.

Usage: python3 plot_trace.py [TRACE.csv ...] [--save FILE]
"""
import os
import sys

import matplotlib
import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_TRACES = [os.path.join(HERE, p) for p in __TRACES__]


def load(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
    data = np.genfromtxt(path, delimiter=",", names=True, skip_header=len(meta))
    return meta, np.atleast_1d(data)


def main(argv):
    save = None
    if "--save" in argv:
        i = argv.index("--save")
        save = argv[i + 1]
        argv = argv[:i] + argv[i + 2:]
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = argv or DEFAULT_TRACES
    fig, axes = plt.subplots(2, 2, figsize=(11, 7), sharex=True)
    (ax_l, ax_jc), (ax_err, ax_mu) = axes
    for path in paths:
        meta, d = load(path)
        label = "seed " + meta.get("seed", "?")
        ax_l.plot(d["t"], d["L_hat"], lw=0.8, label=label)
        ax_jc.plot(d["t"], d["Jc_hat"], lw=0.8, label=label)
        err = d["err_X"]
        if np.isfinite(err).any():
            ax_err.semilogy(d["t"], err, lw=0.8, label=label)
        ax_mu.plot(d["t"], d["mu"], lw=0.8, label=label)
        if "bar_iota" in meta:
            ax_jc.axhline(float(meta["bar_iota"]), color="k", ls="--", lw=0.8)
    ax_l.set_title(r"$\hat{L}_t$")
    ax_jc.set_title(r"$\hat{J}^c_t$ (dashed: $\bar\iota$)")
    ax_err.set_title(r"$\|X_t - X^*\|_F$")
    ax_mu.set_title(r"$\mu_t$")
    for ax in axes[1]:
        ax.set_xlabel("t")
    ax_l.legend(fontsize="small")
    fig.tight_layout()
    if save:
        fig.savefig(save, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main(sys.argv[1:])
"##;

pub fn plot_script(traces: &[String]) -> String {
    let list = traces.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(", ");
    TEMPLATE.replace("__TRACES__", &format!("[{list}]"))
}

pub fn write_plot_script(path: &Path, traces: &[String]) -> CliResult<()> {
    debug_assert!(PLOTTED.iter().all(|c| COLUMNS.contains(c)));
    std::fs::write(path, plot_script(traces)).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}
