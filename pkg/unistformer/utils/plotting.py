"""Heat-map rendering of exported attention matrices."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .handlers import FileHelper  # noqa: E402


def render_heatmap(
    matrix: np.ndarray,
    path: Union[str, Path],
    title: str = "",
) -> Path:
    """Save ``matrix`` as a PNG heat map (rows = attending joint, columns = attended joint)."""
    fig, ax = plt.subplots(figsize=(6, 5))
    try:
        image = ax.imshow(matrix, cmap="viridis", interpolation="nearest")
        fig.colorbar(image, ax=ax)
        ax.set_xlabel("joint j")
        ax.set_ylabel("joint i")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        buffer = io.BytesIO()
        fig.savefig(buffer, format="png", dpi=120)
    finally:
        plt.close(fig)
    return FileHelper.write_atomic(path, buffer.getvalue())
