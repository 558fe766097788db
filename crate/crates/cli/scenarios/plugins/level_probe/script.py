#!/usr/bin/env python3
# Reports nothing by itself; scenarios feed it level=N lines.
