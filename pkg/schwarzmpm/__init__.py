from schwarzmpm.config import Config
from schwarzmpm.main import main

__version__ = "0.1.0"
__all__ = ["main", "Config"]
