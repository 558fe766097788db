#!/usr/bin/env python3
# Runs on the manager with the arguments from an ARY line.
import sys

print("active response invoked with:", " ".join(sys.argv[1:]))
