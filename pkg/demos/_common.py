"""Helpers shared by the demo scripts: output folder and a 3D scatter of a scene."""

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

OUT = Path(os.environ.get("ASSEMBLOID_OUT", Path(__file__).parent / "out"))
OUT.mkdir(parents=True, exist_ok=True)


def draw_scene(ax, scene, title=""):
    for part in scene.parts:
        p = part.placed()
        ax.scatter(p[:, 0], p[:, 1], p[:, 2], s=2)
    ax.set_title(title, fontsize=9)
    ax.set_xlim(-0.6, 0.6)
    ax.set_ylim(-0.6, 0.6)
    ax.set_zlim(-0.6, 0.6)
    ax.set_box_aspect((1, 1, 1))
    ax.set_axis_off()


def save(fig, name):
    path = OUT / name
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    print("wrote", path)
