"""Mission-scale side-scan sonar synthesis.

Light geometry/conditioning/oracle modules import immediately; the
torch-backed pieces (networks, training, sequence, evaluation) are regular
submodules imported on use: ``import sonarsynth.networks``.
"""

from . import conditioning, corpus, errors, mission, oracle

__version__ = "0.1.0"

__all__ = ["conditioning", "corpus", "errors", "mission", "oracle", "__version__"]
