from .ascad import install_ascad
from .config_file import install_config_file

__all__ = [
    "install_ascad",
    "install_config_file",
]
