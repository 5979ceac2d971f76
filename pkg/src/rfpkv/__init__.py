"""Remote-fetching RDMA key-value store over an emulated transport."""

from rfpkv.nic import NicProfile, default_profile, load_profile
from rfpkv.rdma import Emulator, Status

__version__ = "0.1.0"

__all__ = ["Emulator", "NicProfile", "Status", "default_profile", "load_profile"]
