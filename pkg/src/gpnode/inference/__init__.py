"""Log-posterior assembly and NUTS sampling."""
from .nuts import Chain, NutsConfig, SamplerError, map_point, nuts_sample, run_chain
from .posterior import LikelihoodBlock, Posterior

__all__ = ["Chain", "LikelihoodBlock", "NutsConfig", "Posterior", "SamplerError", "map_point",
           "nuts_sample", "run_chain"]
