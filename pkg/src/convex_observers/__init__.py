"""convex-observers: reduced-order contracting observers from convex programs."""

__version__ = "0.1.0"
