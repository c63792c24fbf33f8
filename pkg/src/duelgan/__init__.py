"""Dual-discriminator GAN with a peer-agreement (duel) regularizer, built on a small numpy autodiff."""
from .objectives import DuelConfig
from .synth import MixtureSpec, ring_mixture

__version__ = "0.1.0"
__all__ = ["DuelConfig", "MixtureSpec", "ring_mixture", "__version__"]
