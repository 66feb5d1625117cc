"""Imbalanced multilabel x-ray classification pipeline.

The heavy lifting lives in the compiled extension; this package re-exports the
main operations: metrics (auc, hamming_loss, f1_label), the three ensemble
aggregation rules (ctp, ptc_lw, ptc_mode), mask post-processing and ROI
cropping, taxonomy projections, the synthetic corpus generator, checkpoint
prediction, grad-cam heatmaps and the full pipeline driver.
"""

try:
    from ._imlx import (  # noqa: F401
        auc,
        hamming_loss,
        f1_label,
        ctp,
        ptc_lw,
        ptc_mode,
        postprocess_mask,
        crop_to_roi,
        resize,
        view_labels,
        project,
        synth_generate,
        run_pipeline,
        predict,
        grad_cam,
        __version__,
    )
except ImportError:  # editable/dev layouts expose the extension at top level
    from _imlx import (  # noqa: F401
        auc,
        hamming_loss,
        f1_label,
        ctp,
        ptc_lw,
        ptc_mode,
        postprocess_mask,
        crop_to_roi,
        resize,
        view_labels,
        project,
        synth_generate,
        run_pipeline,
        predict,
        grad_cam,
        __version__,
    )

__all__ = [
    "auc",
    "hamming_loss",
    "f1_label",
    "ctp",
    "ptc_lw",
    "ptc_mode",
    "postprocess_mask",
    "crop_to_roi",
    "resize",
    "view_labels",
    "project",
    "synth_generate",
    "run_pipeline",
    "predict",
    "grad_cam",
    "__version__",
]
