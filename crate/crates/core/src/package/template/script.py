#!/usr/bin/env python3
# Runs on every targeted agent once per interval. Report by printing lines:
#   LOG: <message>          shipped to the manager for decoding
#   ARY: <arg> <arg> ...    runs active-response/script.py on the manager
# Arguments must not contain spaces.

print("LOG: Value_1 Value_2 Value_3")
