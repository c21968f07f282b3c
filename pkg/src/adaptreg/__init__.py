"""adaptreg: robust output regulation with adaptively estimated signal
frequencies.

The package combines an adaptive frequency estimator driven by the reference
signal, a time-varying internal-model controller with scheduled stabilizing
gains, closed-loop simulation of finite-dimensional and FEM-discretized
diffusion plants, and a per-step reference optimizer, all exposed through a
scenario CLI (``adaptreg run|check|sweep|export-plant``).
"""

__version__ = "0.1.0"
