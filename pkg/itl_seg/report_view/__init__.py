"""
Report package.

This package contains everything that turns finished runs into files:
- BaseRenderer and the built-in renderers (overlays, loss curves, tables)
- Renderer plugin discovery
- IDX prediction dumps
- Report tables (forgetting, scheme and ordering comparisons, costs)

"""

from .base_renderer import BaseRenderer, LossCurveRenderer, OverlayRenderer, TableRenderer
from .extract_renderers import load_renderer_classes
from .predictions import decode_predictions, prediction_path, write_prediction
from .tables import cost_table, forgetting_deltas, forgetting_table, ordering_comparison, scheme_comparison

__all__ = [
    'BaseRenderer', 'LossCurveRenderer', 'OverlayRenderer', 'TableRenderer',
    'load_renderer_classes',
    'decode_predictions', 'prediction_path', 'write_prediction',
    'cost_table', 'forgetting_deltas', 'forgetting_table', 'ordering_comparison', 'scheme_comparison',
]
