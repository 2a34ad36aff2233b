"""PNG figures for a run report."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_timeline(report, path):
    """Utterance timeline, one row per speaker, colored by SI-SDR when scored."""
    speakers = sorted({r.speaker for r in report.records})
    fig, ax = plt.subplots(figsize=(10, 1 + 0.5 * max(len(speakers), 1)))
    cmap = plt.get_cmap("viridis")
    scored = [r.si_sdr_db for r in report.records if r.si_sdr_db is not None]
    lo, hi = (min(scored), max(scored)) if scored else (0.0, 1.0)
    span = hi - lo or 1.0
    for r in report.records:
        row = speakers.index(r.speaker)
        color = cmap((r.si_sdr_db - lo) / span) if r.si_sdr_db is not None else "tab:blue"
        ax.barh(row, r.duration_sec, left=r.start_sec, height=0.6, color=color)
    ax.set_yticks(range(len(speakers)), speakers)
    ax.set_xlim(0, max(report.audio_sec, 1e-3))
    ax.set_xlabel("time [s]")
    ax.set_title(f"{report.mode}: {len(report.records)} utterances, "
                 f"RTF {report.real_time_factor:.3f}")
    if scored:
        sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(lo, hi))
        fig.colorbar(sm, ax=ax, label="SI-SDR [dB]")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_si_sdr(report, path):
    """Per-utterance SI-SDR of the output next to the unprocessed mixture."""
    recs = [r for r in report.records if r.si_sdr_db is not None]
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(recs)), 3.5))
    idx = range(len(recs))
    ax.bar([i - 0.2 for i in idx], [r.mixture_si_sdr_db or 0.0 for r in recs], width=0.4,
           label="mixture", color="tab:gray")
    ax.bar([i + 0.2 for i in idx], [r.si_sdr_db for r in recs], width=0.4,
           label=report.mode, color="tab:orange")
    ax.set_xlabel("utterance")
    ax.set_ylabel("SI-SDR [dB]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_figures(report, prefix) -> list:
    """Write the report's figures next to ``prefix``; returns the paths written."""
    paths = [f"{prefix}_timeline.png"]
    plot_timeline(report, paths[0])
    if any(r.si_sdr_db is not None for r in report.records):
        paths.append(f"{prefix}_si_sdr.png")
        plot_si_sdr(report, paths[1])
    return paths
