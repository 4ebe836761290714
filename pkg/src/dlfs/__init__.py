"""Object-store backed file layer and tiled raster analytics."""

from .errors import DlfsError
from .metastore import FileMeta, MetaClient, MetaServer, MetaStore
from .objstore import DirStore, MemoryStore, NetworkModel, ObjectKey, ObjectStore, SimulatedStore, open_store
from .tiling import TileKey, TileSpec
from .vfl import Vfl, VflConfig

__version__ = "0.1.0"

__all__ = [
    "DirStore", "DlfsError", "FileMeta", "MemoryStore", "MetaClient", "MetaServer", "MetaStore",
    "NetworkModel", "ObjectKey", "ObjectStore", "SimulatedStore", "TileKey", "TileSpec", "Vfl",
    "VflConfig", "open_store",
]
