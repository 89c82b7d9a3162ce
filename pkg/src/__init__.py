# fragstat: fragmentation chain simulation and estimation
