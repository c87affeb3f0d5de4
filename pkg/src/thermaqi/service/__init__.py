from .app import build_annotator, create_app
from .core import Annotator, AnnotationResult, InsufficientContextError, UnregisteredLocationError

__all__ = [
    "Annotator",
    "AnnotationResult",
    "InsufficientContextError",
    "UnregisteredLocationError",
    "build_annotator",
    "create_app",
]
