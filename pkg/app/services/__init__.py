"""StimLab Services Package"""

from .file_handler import FileHandler

__all__ = ['FileHandler']
