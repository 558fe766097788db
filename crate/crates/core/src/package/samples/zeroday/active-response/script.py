#!/usr/bin/env python3
# quarantine <pid> <command>: record the request where the mail relay picks it up.
import datetime
import os
import sys

args = sys.argv[1:]
agent = os.environ.get("SOC_AGENT_ID", "unknown")
line = "%s agent=%s action=%s\n" % (datetime.datetime.utcnow().isoformat(), agent, " ".join(args))
with open("zeroday_quarantine.log", "a") as f:
    f.write(line)
print("quarantine requested on agent %s: %s" % (agent, " ".join(args)))
