"""
URL helpers
"""
from urllib.parse import urlsplit


def fqdn_of(url: str) -> str:
    """Lower-cased host component of a URL ("" when the URL has no host)"""
    try:
        host = urlsplit(url.strip()).hostname
    except ValueError:
        return ""
    return (host or "").lower()
