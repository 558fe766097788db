#!/usr/bin/env python3
shells = 0
try:
    with open("/etc/passwd") as f:
        for line in f:
            if line.rstrip().endswith("sh") and not line.rstrip().endswith("nologin"):
                shells += 1
except OSError:
    pass
print("LOG: shells=%d" % shells)
