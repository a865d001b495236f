"""
Пакет cli (команды командной строки).
"""

from . import data, report, sweep, train

__all__ = ["data", "report", "sweep", "train"]
