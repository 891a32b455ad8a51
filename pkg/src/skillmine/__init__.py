"""skillmine: a self-evolving skill library engine.

Mines heterogeneous resource descriptions into validated, executable skill
packages under a stateful domain knowledge tree, and maintains the library
through closed-loop validation, repair, novelty review, and tree refinement.
All model interaction sits behind a pluggable provider gateway so the control
plane is deterministic and testable offline.
"""

__version__ = "0.1.0"

from .config import EngineConfig, load_config
from .pipeline import Pipeline
from .registry import Registry, open_registry
from .tree import DomainTree, load_tree

__all__ = [
    "DomainTree",
    "EngineConfig",
    "Pipeline",
    "Registry",
    "__version__",
    "load_config",
    "load_tree",
    "open_registry",
]
