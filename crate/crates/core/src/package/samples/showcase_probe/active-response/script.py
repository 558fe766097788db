#!/usr/bin/env python3
import sys

print("showcase response:", " ".join(sys.argv[1:]))
