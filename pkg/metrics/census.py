import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from models.camera import CameraView, TrainingView
from models.results import CensusReport
from models.splats import SplatSet
from rasterizer.binning import RasterSettings
from rasterizer.renderer import render_forward

logger = logging.getLogger(__name__)


def as_cameras(views: Sequence[Union[TrainingView, CameraView]]) -> list:
    return [view.camera if isinstance(view, TrainingView) else view for view in views]


def visibility_flags(splats: SplatSet, views: Sequence[Union[TrainingView, CameraView]],
                     background: Sequence[float] = (0.0, 0.0, 0.0),
                     settings: Optional[RasterSettings] = None) -> Tuple[np.ndarray, np.ndarray]:
    """OR of the contributed and in-frustum flags over every view"""
    contributed = np.zeros(splats.count, dtype=bool)
    in_frustum = np.zeros(splats.count, dtype=bool)
    for camera in as_cameras(views):
        output = render_forward(splats, camera, background, settings)
        contributed |= output.contributed
        in_frustum |= output.in_frustum
    return contributed, in_frustum


def occlusion_census(splats: SplatSet, views: Sequence[Union[TrainingView, CameraView]],
                     background: Sequence[float] = (0.0, 0.0, 0.0),
                     settings: Optional[RasterSettings] = None) -> CensusReport:
    """Count splats that never enter the blending of any pixel of any view

    Never-contributing splats are split into those inside at least one view
    frustum (occluded by closer splats) and those outside every frustum.
    The splat set is not modified.
    """
    contributed, in_frustum = visibility_flags(splats, views, background, settings)
    occluded = ~contributed
    report = CensusReport(
        total=splats.count,
        occluded=int(occluded.sum()),
        occluded_in_frustum=int((occluded & in_frustum).sum()),
        out_of_frustum=int((occluded & ~in_frustum).sum()),
        occluded_indices=np.flatnonzero(occluded & in_frustum),
        out_of_frustum_indices=np.flatnonzero(occluded & ~in_frustum),
    )
    logger.info(f"Census: {report.occluded}/{report.total} splats never contribute "
                f"({report.ratio:.1%}; {report.out_of_frustum} outside every frustum)")
    return report
