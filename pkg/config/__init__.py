# Config package
from .config import Config, RunConfig, get_config

__all__ = ['Config', 'RunConfig', 'get_config']
