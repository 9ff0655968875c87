# ctiprof tests
