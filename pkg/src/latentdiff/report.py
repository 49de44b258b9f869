"""Report rendering: figures plus a delimited per-generation summary.

Figures land next to the delimited output inside the archive directory
so a campaign folder is self-describing.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .fitness import Archive


def generation_table(archive: Archive) -> list[tuple[int, int, int]]:
    """Rows of (generation, inserted, cumulative)."""
    per_gen: dict[int, int] = {}
    for rec in archive.records:
        per_gen[rec.generation] = per_gen.get(rec.generation, 0) + 1
    rows = []
    total = 0
    for gen in range(max(per_gen, default=-1) + 1):
        inserted = per_gen.get(gen, 0)
        total += inserted
        rows.append((gen, inserted, total))
    return rows


def write_generation_table(archive: Archive, path) -> Path:
    path = Path(path)
    lines = ["generation\tinserted\tcumulative"]
    for gen, inserted, cumulative in generation_table(archive):
        lines.append(f"{gen}\t{inserted}\t{cumulative}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def render_figures(archive: Archive, outdir) -> list[Path]:
    """Objective scatter, growth curve, and divergence histogram as PNGs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    records = archive.records

    fig, ax = plt.subplots(figsize=(6, 4.5))
    if records:
        sc = ax.scatter([r.divergence for r in records],
                        [r.diversity_at_insert for r in records],
                        c=[r.generation for r in records],
                        s=8, cmap="viridis", alpha=0.7)
        fig.colorbar(sc, ax=ax, label="generation")
    ax.set_xlabel("divergence")
    ax.set_ylabel("diversity at insert")
    ax.set_title("Archived disagreements in objective space")
    fig.tight_layout()
    path = outdir / "objectives.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    if records:
        xs = [r.evaluation_index for r in records]
        ax.step(xs, range(1, len(records) + 1), where="post")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("archive size")
    ax.set_title("Archive growth")
    fig.tight_layout()
    path = outdir / "archive_growth.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    if records:
        ax.hist([r.divergence for r in records], bins=40)
    ax.set_xlabel("divergence")
    ax.set_ylabel("records")
    ax.set_title("Divergence of archived records")
    fig.tight_layout()
    path = outdir / "divergence_hist.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
