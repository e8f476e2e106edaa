"""Report figures rendered next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_TERMS = ("asym_f", "asym_g", "pairwise", "quant_f", "quant_g", "balance")


def save_loss_figure(loss_history, path, map_history=None) -> None:
    """Total loss (optionally with retrieval MAP on a twin axis) and the
    unweighted per-term curves."""
    if not loss_history:
        raise ValueError("loss history is empty")
    iters = range(1, len(loss_history) + 1)
    fig, (ax_total, ax_terms) = plt.subplots(1, 2, figsize=(11, 4))
    ax_total.plot(iters, [rec["total"] for rec in loss_history], color="tab:blue", label="total")
    ax_total.set_xlabel("outer iteration")
    ax_total.set_ylabel("total loss")
    ax_total.grid(True, alpha=0.3)
    if map_history is not None:
        ax_map = ax_total.twinx()
        ax_map.plot(iters, map_history, color="tab:red", linestyle="--", label="MAP")
        ax_map.set_ylabel("MAP")
        ax_map.set_ylim(0.0, 1.05)
    ax_total.set_title("training loss")

    for term in _TERMS:
        vals = [max(rec[term], 1e-12) for rec in loss_history]
        ax_terms.plot(iters, vals, label=term)
    ax_terms.set_yscale("log")
    ax_terms.set_xlabel("outer iteration")
    ax_terms.set_ylabel("unweighted term value")
    ax_terms.grid(True, alpha=0.3)
    ax_terms.legend(fontsize=8)
    ax_terms.set_title("loss terms")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_pr_figure(curve, path) -> None:
    """Recall/precision trace over the Hamming radius sweep."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve.recalls, curve.precisions, marker="o", markersize=3)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.05)
    ax.grid(True, alpha=0.3)
    title = "precision-recall"
    if curve.n_excluded:
        title += f" ({curve.n_excluded} queries without relevant items skipped)"
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
