"""Binary formats (PCDS datasets, T3DN checkpoints) and file helpers."""

from t3dnet.storage.checkpoint_store import load_checkpoint, save_checkpoint
from t3dnet.storage.pcds import read_dataset, write_dataset

__all__ = ["load_checkpoint", "read_dataset", "save_checkpoint", "write_dataset"]
