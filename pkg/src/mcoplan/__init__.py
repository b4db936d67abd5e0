"""mcoplan: multi-criteria radiotherapy planning on synthetic 2D cases.

Pipeline: generate a phantom case and its dose-influence matrix, build a
Pareto surface over convex dose objectives (goal programming and
prioritized optimization are available as single-plan alternatives),
navigate the surface interactively through convex combinations, then
sparsify the navigated plan down to a deliverable beam count within a
chosen closeness.
"""

__version__ = "0.1.0"
