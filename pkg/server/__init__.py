"""twinwatch server side.

In-process event bus connecting the validation stages, and a read-only REST API over a store.
"""

__version__ = "0.1.0"
