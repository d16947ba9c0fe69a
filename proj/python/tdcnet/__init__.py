"""Dual-branch depth completion for transparent objects."""

try:
    # installed wheel layout: extension lives inside the package
    from tdcnet._tdcnet import *  # noqa: F401,F403
    from tdcnet._tdcnet import __version__  # noqa: F401
except ImportError:
    # in-tree builds put _tdcnet on PYTHONPATH next to the package
    from _tdcnet import *  # noqa: F401,F403
    from _tdcnet import __version__  # noqa: F401
