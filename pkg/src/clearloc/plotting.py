"""Static result figures rendered to PNG files.

Figures are written with fixed metadata so identical data gives identical bytes.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}
_STYLE = {"clear": "o-", "clear_stage1": "s--", "ho_xu": "^-", "gn_ml": "d-"}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def _db(x):
    return 10 * np.log10(np.asarray(x, dtype=float))


def plot_rmse_vs_noise(rows, path, title=""):
    """RMSE in dB against ``10 log10 sigma^2`` with the CRLB overlaid.

    ``rows`` are :class:`~clearloc.sim.SummaryRow` objects for one sensor count.
    Rows at ``sigma^2 = 0`` are skipped since the axis is logarithmic.
    """
    rows = [r for r in rows if r.sigma2 > 0]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    tags = list(dict.fromkeys(r.estimator for r in rows))
    for ax, kind in zip(axes, ("pos", "vel")):
        for tag in tags:
            sel = [r for r in rows if r.estimator == tag]
            x = _db([r.sigma2 for r in sel])
            y = [getattr(r, f"rmse_{kind}") for r in sel]
            ax.plot(x, 20 * np.log10(np.asarray(y, dtype=float)), _STYLE.get(tag, "x-"), label=tag)
        if tags:
            sel = [r for r in rows if r.estimator == tags[0]]
            bound = np.asarray([getattr(r, f"crlb_{kind}") for r in sel], dtype=float)
            ax.plot(_db([r.sigma2 for r in sel]), 20 * np.log10(bound), "k-", lw=1, label="CRLB")
        ax.set_xlabel(r"$10\log_{10}\sigma^2$")
        ax.set_ylabel(f"{'position' if kind == 'pos' else 'velocity'} RMSE (dB)")
        ax.grid(True, alpha=0.3)
        ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_cdf(curves: dict, path, title=""):
    """Empirical CDFs of position error, with each 95th percentile in the legend."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for tag, cdf in curves.items():
        ax.step(cdf.errors, cdf.fractions, where="post", label=f"{tag} (p95 = {cdf.p95:.3g} m)")
        ax.axvline(cdf.p95, ls=":", lw=0.8, color=ax.lines[-1].get_color())
    ax.axhline(0.95, color="k", lw=0.5)
    ax.set_xlabel("position error (m)")
    ax.set_ylabel("fraction of trials")
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_rmse_vs_sensors(rows, path, title=""):
    """Position RMSE against sensor count for one noise level."""
    fig, ax = plt.subplots(figsize=(6, 4))
    tags = list(dict.fromkeys(r.estimator for r in rows))
    for tag in tags:
        sel = [r for r in rows if r.estimator == tag]
        ax.semilogy([r.n_sensors for r in sel], [r.rmse_pos for r in sel],
                    _STYLE.get(tag, "x-"), label=tag)
    if tags:
        sel = [r for r in rows if r.estimator == tags[0]]
        ax.semilogy([r.n_sensors for r in sel], [r.crlb_pos for r in sel], "k-", lw=1, label="CRLB")
    ax.set_xlabel("number of sensors")
    ax.set_ylabel("position RMSE (m)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
