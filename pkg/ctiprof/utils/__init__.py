from ctiprof.utils.files import atomic_write_bytes, atomic_write_text, sha256_bytes, sha256_file
from ctiprof.utils.net import fqdn_of

__all__ = ["atomic_write_bytes", "atomic_write_text", "sha256_bytes", "sha256_file", "fqdn_of"]
