# ctiprof - threat group behavioral profiles from ATT&CK and Malpedia
__version__ = "1.0.0"
