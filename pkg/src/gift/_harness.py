"""Child-process test harness. Runs standalone: ``python -I -B _harness.py <scratch> <nonce>``.

Reads ``candidate.py`` and ``tests.json`` from the scratch directory, executes
the candidate once, evaluates every test call in order and writes one verdict
line per test to the original stdout:

    @@GIFT-VERDICT <nonce> {"index": i, "passed": bool, "failure_kind": str|null, "detail": str}

Network access, process spawning and writes outside the scratch directory are
refused by an audit hook; the affected test is reported as ``resource_limit``.
"""

import ast
import io
import json
import math
import os
import sys
import traceback

MARKER = "@@GIFT-VERDICT"
DETAIL_CAP = 400

scratch = os.path.realpath(sys.argv[1])
nonce = sys.argv[2]
output_cap = int(sys.argv[3]) if len(sys.argv) > 3 else 65536
no_network = (sys.argv[4] == "1") if len(sys.argv) > 4 else True

verdict_fd = os.dup(1)

with open(os.path.join(scratch, "tests.json"), encoding="utf-8") as fh:
    TESTS = json.load(fh)
with open(os.path.join(scratch, "candidate.py"), encoding="utf-8") as fh:
    SOURCE = fh.read()


class SandboxViolation(BaseException):
    pass


class OutputLimit(BaseException):
    pass


violation = []

_NET_EVENTS = {"socket.connect", "socket.bind", "socket.sendto", "socket.sendmsg",
               "socket.getaddrinfo", "socket.gethostbyname", "socket.gethostbyaddr",
               "socket.__new__"}
_SPAWN_EVENTS = {"subprocess.Popen", "os.system", "os.exec", "os.posix_spawn", "os.spawn",
                 "os.fork", "os.forkpty", "pty.spawn"}
_FS_EVENTS = {"os.remove", "os.rename", "os.rmdir", "os.mkdir", "shutil.rmtree", "os.chmod",
              "os.chown", "os.link", "os.symlink", "os.truncate", "os.utime"}
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_APPEND | os.O_CREAT | os.O_TRUNC


def _inside(path):
    try:
        p = os.path.realpath(os.fsdecode(path))
    except (TypeError, ValueError):
        return False
    return p == scratch or p.startswith(scratch + os.sep)


def _violate(what):
    violation.append(what)
    raise SandboxViolation(what)


def _audit(event, args):
    if no_network and event in _NET_EVENTS:
        _violate(f"network access ({event})")
    if event in _SPAWN_EVENTS:
        _violate(f"process spawn ({event})")
    if event == "open":
        path, mode, flags = args
        if isinstance(path, int):
            return
        writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or (flags or 0) & _WRITE_FLAGS
        if writing and not _inside(path):
            _violate(f"write outside scratch ({path!r})")
    elif event in _FS_EVENTS and args and not isinstance(args[0], int) and not _inside(args[0]):
        _violate(f"filesystem modification outside scratch ({event})")


class CappedWriter(io.TextIOBase):
    def __init__(self, cap):
        self.cap = cap
        self.size = 0

    def writable(self):
        return True

    def write(self, s):
        self.size += len(s)
        if self.size > self.cap:
            violation.append("output cap exceeded")
            raise OutputLimit("output cap exceeded")
        return len(s)


def _parse(text):
    try:
        return True, ast.literal_eval(text)
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
        return False, text


def _approx(a, b, tol):
    if isinstance(a, bool) or isinstance(b, bool):
        return a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=tol, abs_tol=0.0) or a == b
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_approx(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_approx(a[k], b[k], tol) for k in a)
    return a == b


def _matches(actual, test):
    ok, expected = _parse(test["expected"])
    if not ok:
        return str(actual) == expected
    if test.get("comparison") == "approx":
        return _approx(actual, expected, test.get("tolerance") or 1e-6)
    return actual == expected


def _short(obj):
    try:
        text = repr(obj)
    except BaseException:
        text = "<unrepresentable>"
    return text if len(text) <= DETAIL_CAP else text[:DETAIL_CAP] + "..."


def _emit(index, passed, kind=None, detail=""):
    line = json.dumps({"index": index, "passed": passed, "failure_kind": kind, "detail": detail[:DETAIL_CAP]})
    os.write(verdict_fd, f"{MARKER} {nonce} {line}\n".encode())


def _error_detail(exc):
    tb = traceback.format_exception_only(type(exc), exc)
    return "".join(tb).strip()


def main():
    sys.setrecursionlimit(10000)
    sys.dont_write_bytecode = True
    os.chdir(scratch)
    sys.addaudithook(_audit)
    sink = CappedWriter(output_cap)
    sys.stdout = sink
    sys.stderr = sink
    namespace = {"__name__": "__candidate__"}
    load_error = None
    try:
        exec(compile(SOURCE, "candidate.py", "exec"), namespace)
    except (SandboxViolation, OutputLimit, MemoryError) as e:
        load_error = ("resource_limit", violation[-1] if violation else _error_detail(e))
    except BaseException as e:
        load_error = ("runtime_error", _error_detail(e))
    for i, test in enumerate(TESTS):
        if load_error is not None:
            _emit(i, False, *load_error)
            continue
        sink.size = 0
        before = len(violation)
        try:
            actual = eval(test["call_expression"], namespace)
            if len(violation) > before:
                _emit(i, False, "resource_limit", violation[-1])
            elif _matches(actual, test):
                _emit(i, True)
            else:
                _emit(i, False, "wrong_output", f"expected {test['expected']}, got {_short(actual)}")
        except (SandboxViolation, OutputLimit, MemoryError) as e:
            _emit(i, False, "resource_limit", violation[-1] if len(violation) > before else _error_detail(e))
        except BaseException as e:
            if len(violation) > before:
                _emit(i, False, "resource_limit", violation[-1])
            else:
                _emit(i, False, "runtime_error", _error_detail(e))
    os.write(verdict_fd, f"{MARKER} {nonce} done\n".encode())


main()
os._exit(0)
