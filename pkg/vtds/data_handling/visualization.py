import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

from vtds.core.ground_truth import instance_color, instance_colors
from vtds.core.semantics import SemanticClass

DETECTION_COLOR = "lime"


class Visualization:
    """
    Box overlays for a rendered frame: detection boxes in green, tracking boxes
    coloured per track with the same mapping as the instance image.
    """

    def __init__(self, bundle):
        self.bundle = bundle

    def draw_boxes(self, ax, tracking: bool = False, label: bool = True):
        ax.imshow(self.bundle.rgb)
        for box in self.bundle.boxes:
            if tracking:
                color = np.array(instance_color(box.track_id)) / 255.0
            else:
                color = DETECTION_COLOR
            rect = Rectangle(
                (box.x_min, box.y_min),
                box.width,
                box.height,
                fill=False,
                edgecolor=color,
                linewidth=1.5,
                linestyle="--" if box.truncated else "-",
            )
            ax.add_patch(rect)
            if label:
                name = SemanticClass(box.class_id).label
                text = f"{box.track_id}" if tracking else name
                ax.text(box.x_min, box.y_min - 2, text, color=color, fontsize=6)
        ax.set_axis_off()
        ax.set_title("tracking" if tracking else "detection", fontsize=8)

    def figure(self):
        """
        Detection and tracking overlays side by side, above the semantic and
        instance images.
        """
        fig, axes = plt.subplots(2, 2, figsize=(10, 7.5))
        self.draw_boxes(axes[0, 0], tracking=False)
        self.draw_boxes(axes[0, 1], tracking=True)
        axes[1, 0].imshow(self.bundle.semantic_rgb)
        axes[1, 0].set_title("semantic", fontsize=8)
        axes[1, 1].imshow(instance_colors(self.bundle.instances))
        axes[1, 1].set_title("instance", fontsize=8)
        for ax in axes[1]:
            ax.set_axis_off()
        fig.tight_layout()
        return fig

    def save(self, path: str, dpi: int = 100) -> str:
        fig = self.figure()
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        return path
