"""FisherPrune：LDA 末层效用 + 反卷积效用回溯的结构化剪枝"""

from .version import FisherPrune_version

__version__ = FisherPrune_version
