"""Shape sensing for edge-FBG fibers: simulation, CNN regression, tooling."""

__version__ = "0.1.0"
