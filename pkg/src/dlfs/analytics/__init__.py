from .composite import (
    CompositeAccumulator,
    CompositeParams,
    accumulate,
    composite_reduce,
    composite_weights,
    preview_rgb,
    save_png,
    tile_weights,
)
from .polygon import LabelPolygon, from_geojson, polygonize, rasterize, to_geojson
from .segment import (
    EdgeStats,
    FieldSegmentation,
    SegmentParams,
    colorize,
    edge_stats_update,
    extract_edges,
    gradient_magnitude,
    label_components,
    otsu_threshold,
    segment_fields,
    temporal_mean_gradient,
)

__all__ = [
    "CompositeAccumulator", "CompositeParams", "EdgeStats", "FieldSegmentation", "LabelPolygon",
    "SegmentParams", "accumulate", "colorize", "composite_reduce", "composite_weights",
    "edge_stats_update", "extract_edges", "from_geojson", "gradient_magnitude", "label_components",
    "otsu_threshold", "polygonize", "preview_rgb", "rasterize", "save_png", "segment_fields",
    "temporal_mean_gradient", "tile_weights", "to_geojson",
]
