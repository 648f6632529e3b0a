"""nacforge: architecture/hardware codesign at desk scale.

Global evolutionary search over a hierarchical layer space scored by task
metric and analytic bit-operation cost, followed by TPE training-HPO and an
iterative prune + quantization-aware fine-tuning loop.
"""

__version__ = "0.1.0"
