"""Static PNG plots for loss curves and weight sweeps."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LOSS_KEYS = ("l_M", "l_enhance", "l_adv", "l_D", "l_f2m", "l_m2f", "l_ssl", "total")


def plot_losses(rows: list[dict], path, keys=LOSS_KEYS, smooth: int = 25) -> None:
    """One panel per loss term that was ever non-zero, with a running mean."""
    keys = [k for k in keys if any(r.get(k, 0.0) for r in rows)]
    if not rows or not keys:
        return
    its = [r["iter"] for r in rows]
    fig, axes = plt.subplots(len(keys), 1, figsize=(6, 1.8 * len(keys)), sharex=True, squeeze=False)
    for ax, k in zip(axes[:, 0], keys):
        ys = [r[k] for r in rows]
        ax.plot(its, ys, lw=0.5, alpha=0.4)
        if len(ys) >= smooth:
            run, acc = [], 0.0
            for i, y in enumerate(ys):
                acc += y - (ys[i - smooth] if i >= smooth else 0.0)
                run.append(acc / min(i + 1, smooth))
            ax.plot(its, run, lw=1.2)
        ax.set_ylabel(k)
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)


def plot_sweep(values, scores, param: str, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(len(values)), [100 * s for s in scores], marker="o")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels([f"{v:g}" for v in values])
    ax.set_xlabel(param)
    ax.set_ylabel("night mIoU (%)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)
