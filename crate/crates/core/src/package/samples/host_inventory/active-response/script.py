#!/usr/bin/env python3
import sys

print("inventory response:", " ".join(sys.argv[1:]))
