"""Bone-animated Gaussian splats.

Reconstructs an animatable 3D Gaussian model from a monocular masked
image sequence: a differentiable splat renderer, a neural-bone skinning
rig, and a trainer that couples photometric, rigidity, and score
distillation objectives. The fitted model renders from novel cameras and
accepts user-authored bone poses.
"""

__version__ = "0.1.0"

__all__ = ["AnimatableSplatModel", "__version__"]


def __getattr__(name):
    # Deferred so importing bags stays cheap (numba kernels compile lazily).
    if name == "AnimatableSplatModel":
        from bags.estimator import AnimatableSplatModel

        return AnimatableSplatModel
    raise AttributeError(f"module 'bags' has no attribute {name!r}")
