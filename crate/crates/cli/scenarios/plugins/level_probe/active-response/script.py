#!/usr/bin/env python3
import sys

print("level probe response:", " ".join(sys.argv[1:]))
