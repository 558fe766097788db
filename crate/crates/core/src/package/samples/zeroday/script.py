#!/usr/bin/env python3
# Userland stand-in for a syscall hook: looks for processes holding the
# account databases open. When ZERODAY_EVENTS (or
# $SOC_OSSEC_DIR/zeroday_access.log) exists, new "<path> <command> <pid>"
# lines in it are reported instead, which keeps runs reproducible.
import os

WATCHED = ("/etc/passwd", "/etc/shadow")


def report(path, command, pid):
    print("LOG: %s %s %s" % (path, command, pid))
    if path == "/etc/shadow":
        print("ARY: quarantine %s %s" % (pid, command))


def from_event_file(events):
    offset_file = ".offset"
    try:
        with open(offset_file) as f:
            offset = int(f.read().strip() or 0)
    except (OSError, ValueError):
        offset = 0
    with open(events) as f:
        f.seek(offset)
        for line in f:
            parts = line.split()
            if len(parts) == 3 and parts[0] in WATCHED:
                report(*parts)
        offset = f.tell()
    with open(offset_file, "w") as f:
        f.write(str(offset))


def from_proc():
    for pid in filter(str.isdigit, os.listdir("/proc")):
        try:
            fds = os.listdir("/proc/%s/fd" % pid)
            with open("/proc/%s/comm" % pid) as f:
                command = f.read().strip() or "unknown"
        except OSError:
            continue
        for fd in fds:
            try:
                target = os.readlink("/proc/%s/fd/%s" % (pid, fd))
            except OSError:
                continue
            if target in WATCHED:
                report(target, command.replace(" ", "_"), pid)


events = os.environ.get("ZERODAY_EVENTS") or os.path.join(os.environ.get("SOC_OSSEC_DIR", "."), "zeroday_access.log")
if os.path.exists(events):
    from_event_file(events)
else:
    from_proc()
