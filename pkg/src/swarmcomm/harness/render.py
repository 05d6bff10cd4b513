"""SVG rendering of exported trajectories, one file per episode."""

from __future__ import annotations

import csv
from pathlib import Path

from ..env import read_trajectory

SIZE = 480
PAD = 20
AGENT_COLOR = "#1f5fbf"
LANDMARK_COLOR = "#8c8c8c"


def to_viewport(x: float, y: float, half_width: float, size: int = SIZE, pad: int = PAD) -> tuple[float, float]:
    """Affine arena -> pixel map; (-hw, hw) lands on the top-left corner, (hw, -hw) on the bottom-right."""
    scale = (size - 2 * pad) / (2.0 * half_width)
    return pad + (x + half_width) * scale, pad + (half_width - y) * scale


def episode_svg(episode: dict, half_width: float, size: int = SIZE) -> str:
    scale = (size - 2 * PAD) / (2.0 * half_width)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect class="arena" x="{PAD}" y="{PAD}" width="{size - 2 * PAD}" height="{size - 2 * PAD}" fill="white" stroke="black" stroke-width="1"/>',
    ]
    for _, (x, y) in sorted(episode.get("landmarks", {}).items()):
        cx, cy = to_viewport(x, y, half_width, size)
        parts.append(f'<circle class="landmark" cx="{cx:.2f}" cy="{cy:.2f}" r="{max(3.0, 0.05 * scale):.2f}" fill="{LANDMARK_COLOR}"/>')
    for _, trail in sorted(episode.get("agents", {}).items()):
        pts = [to_viewport(x, y, half_width, size) for _, x, y in trail]
        parts.append('<g class="trail">')
        n = len(pts) - 1
        for k in range(n):
            # older segments fade out
            alpha = 0.15 + 0.85 * (k + 1) / n
            (x0, y0), (x1, y1) = pts[k], pts[k + 1]
            parts.append(
                f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" stroke="{AGENT_COLOR}" stroke-opacity="{alpha:.3f}" stroke-width="2"/>'
            )
        parts.append("</g>")
        if pts:
            cx, cy = pts[-1]
            parts.append(f'<circle class="agent" cx="{cx:.2f}" cy="{cy:.2f}" r="{max(4.0, 0.04 * scale):.2f}" fill="{AGENT_COLOR}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_render(trajectory_path: str | Path, out_dir: str | Path, half_width: float = 2.0) -> list[Path]:
    """Write ``episode_<k>.svg`` for each episode in the trajectory file.

    An empty trajectory still yields one arena-only SVG (``episode_0.svg``).
    """
    with open(trajectory_path, newline="") as fh:
        episodes = read_trajectory(csv.DictReader(fh))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not episodes:
        episodes = {0: {"landmarks": {}, "agents": {}}}
    written = []
    for ep, data in sorted(episodes.items()):
        path = out_dir / f"episode_{ep}.svg"
        path.write_text(episode_svg(data, half_width))
        written.append(path)
    return written
