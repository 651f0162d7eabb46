import importlib.util
import inspect
from typing import Type
from pathlib import Path

from itl_seg.error import ConfigError
from itl_seg.report_view.base_renderer import BaseRenderer


def load_renderer_classes(path: str) -> list[Type[BaseRenderer]]:
    """Load renderer class types from a Python file without instantiating them."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Renderer module not found: {path}")
    spec = importlib.util.spec_from_file_location(path.stem, path)
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as e:
        raise ConfigError(f"Cannot import renderer module {path}: {e}") from e
    renderer_classes = []

    for _, obj in inspect.getmembers(module, inspect.isclass):
        if issubclass(obj, BaseRenderer) and not inspect.isabstract(obj) and obj.__module__ == module.__name__:
            renderer_classes.append(obj)

    return renderer_classes
