#!/usr/bin/env python3
import os

print("LOG: probe %s ok" % os.environ.get("SOC_AGENT_ID", "000"))
print("ARY: Arg1 Arg2 Arg3")
