"""
Пакет services (бизнес-логика).
"""

from . import (
    augmentation,
    data_service,
    distillation,
    mesh_service,
    report_service,
    sweep_service,
    trainer,
)

__all__ = [
    "augmentation",
    "data_service",
    "distillation",
    "mesh_service",
    "report_service",
    "sweep_service",
    "trainer",
]
