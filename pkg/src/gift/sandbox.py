"""Run candidate code against a task's test cases in a resource-limited child process."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import resource
import secrets
import signal
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from gift.records import PassReport, SeedTask, TestResult

log = logging.getLogger(__name__)

HARNESS = Path(__file__).with_name("_harness.py")
MARKER = "@@GIFT-VERDICT"


class SandboxEnvironmentError(EnvironmentError):
    """The configured runtime cannot be started."""


@dataclass(frozen=True)
class SandboxLimits:
    wall_timeout_ms: int = 10_000
    memory_mb: int = 1024
    output_cap_bytes: int = 1_000_000
    no_network: bool = True

    def __post_init__(self):
        if self.wall_timeout_ms <= 0:
            raise ValueError("wall_timeout_ms must be > 0")
        if self.memory_mb <= 0 or self.output_cap_bytes <= 0:
            raise ValueError("memory_mb and output_cap_bytes must be > 0")


def check_runtime(python: str = sys.executable) -> None:
    try:
        proc = subprocess.run([python, "-I", "-B", "-c", "import ast, json, math"],
                              capture_output=True, timeout=30)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise SandboxEnvironmentError(f"cannot start runtime {python!r}: {e}") from e
    if proc.returncode != 0:
        raise SandboxEnvironmentError(f"runtime {python!r} is unusable: {proc.stderr.decode(errors='replace')[:300]}")


def _limit_child(limits: SandboxLimits):
    def apply():
        mem = limits.memory_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
        cpu = limits.wall_timeout_ms // 1000 + 2
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))
        resource.setrlimit(resource.RLIMIT_FSIZE, (limits.output_cap_bytes, limits.output_cap_bytes))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
    return apply


def _drain(stream, buf: bytearray, cap: int, overflow: threading.Event):
    while True:
        chunk = stream.read1(65536) if hasattr(stream, "read1") else stream.read(65536)
        if not chunk:
            break
        room = cap - len(buf)
        if room > 0:
            buf.extend(chunk[:room])
        if len(chunk) > room:
            overflow.set()
            break


def _kill_group(proc: subprocess.Popen):
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _parse_verdicts(stdout: str, nonce: str, n_tests: int) -> tuple[dict[int, TestResult], bool]:
    results: dict[int, TestResult] = {}
    done = False
    tag = f"{MARKER} {nonce} "
    for line in stdout.splitlines():
        pos = line.find(tag)
        if pos == -1:
            continue
        payload = line[pos + len(tag):]
        if payload == "done":
            done = True
            continue
        try:
            v = json.loads(payload)
        except json.JSONDecodeError:
            continue
        i = v.get("index")
        if isinstance(i, int) and 0 <= i < n_tests and i not in results:
            results[i] = TestResult(bool(v["passed"]), None if v["passed"] else v["failure_kind"], v.get("detail", ""))
    return results, done


def run_tests(code: str, task: SeedTask, limits: SandboxLimits = SandboxLimits(),
              python: str = sys.executable) -> PassReport:
    """Execute ``code`` once and evaluate every test of ``task`` in order.

    All tests always run inside the same child. When the child is killed (wall
    timeout, output cap) the test in progress and every later test are
    reported with the corresponding failure kind.
    """
    if not code or not code.strip():
        raise ValueError("code must be nonempty")
    n = len(task.tests)
    nonce = secrets.token_hex(8)
    with tempfile.TemporaryDirectory(prefix="gift-sbx-") as scratch:
        with open(os.path.join(scratch, "candidate.py"), "w", encoding="utf-8") as fh:
            fh.write(code)
        with open(os.path.join(scratch, "tests.json"), "w", encoding="utf-8") as fh:
            json.dump([t.to_dict() for t in task.tests], fh)
        env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), "OPENBLAS_NUM_THREADS": "1",
               "OMP_NUM_THREADS": "1", "HOME": scratch, "TMPDIR": scratch}
        cmd = [python, "-I", "-B", str(HARNESS), scratch, nonce,
               str(limits.output_cap_bytes), "1" if limits.no_network else "0"]
        start = time.monotonic()
        try:
            proc = subprocess.Popen(cmd, cwd=scratch, env=env, stdin=subprocess.DEVNULL,
                                    stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                                    preexec_fn=_limit_child(limits), start_new_session=True)
        except OSError as e:
            raise SandboxEnvironmentError(f"cannot start runtime {python!r}: {e}") from e
        out, err = bytearray(), bytearray()
        out_over, err_over = threading.Event(), threading.Event()
        readers = [threading.Thread(target=_drain, args=(proc.stdout, out, limits.output_cap_bytes, out_over)),
                   threading.Thread(target=_drain, args=(proc.stderr, err, limits.output_cap_bytes, err_over))]
        for t in readers:
            t.daemon = True
            t.start()
        deadline = start + limits.wall_timeout_ms / 1000
        timed_out = False
        while True:
            if proc.poll() is not None:
                break
            if out_over.is_set() or err_over.is_set():
                _kill_group(proc)
                break
            if time.monotonic() >= deadline:
                timed_out = True
                _kill_group(proc)
                break
            time.sleep(0.005)
        proc.wait()
        wall_ms = int((time.monotonic() - start) * 1000)
        for t in readers:
            t.join(timeout=1.0)
        for stream in (proc.stdout, proc.stderr):
            stream.close()

    results, done = _parse_verdicts(out.decode("utf-8", errors="replace"), nonce, n)
    if out_over.is_set() or err_over.is_set():
        missing = TestResult(False, "resource_limit", "output cap exceeded")
    elif timed_out:
        missing = TestResult(False, "timeout", f"wall timeout of {limits.wall_timeout_ms} ms exceeded")
    elif proc.returncode and proc.returncode < 0:
        # killed by a signal: RLIMIT_CPU -> SIGXCPU, RLIMIT_FSIZE -> SIGXFSZ
        missing = TestResult(False, "resource_limit", f"child killed by signal {-proc.returncode}")
    else:
        tail = err.decode("utf-8", errors="replace").strip().splitlines()[-1:] or [""]
        missing = TestResult(False, "runtime_error", f"harness exited early (status {proc.returncode}) {tail[0]}")
    per_test = [results.get(i, missing) for i in range(n)]
    return PassReport.from_results(per_test, wall_ms)


def pass_rate(reports: Sequence[PassReport]) -> float:
    if not reports:
        raise ValueError("pass_rate of an empty list is undefined")
    return sum(r.all_passed for r in reports) / len(reports)


class Sandbox:
    """Bounded-concurrency runner with a cache keyed on (code, tests, limits).

    The cache treats candidates as deterministic: identical code on identical
    tests reuses the first report. Flaky programs are recorded once, not retried.
    """

    def __init__(self, limits: SandboxLimits = SandboxLimits(), max_concurrency: int = 4,
                 python: str = sys.executable, cache: bool = True):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.limits = limits
        self.python = python
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._cache: Optional[dict[str, PassReport]] = {} if cache else None
        self._lock = threading.Lock()
        self.executions = 0

    def check(self) -> None:
        check_runtime(self.python)

    def _key(self, code: str, task: SeedTask) -> str:
        blob = json.dumps([code, [t.to_dict() for t in task.tests], self.limits.__dict__], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def run(self, code: str, task: SeedTask) -> PassReport:
        key = self._key(code, task) if self._cache is not None else None
        if key is not None:
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit
        with self._slots:
            report = run_tests(code, task, self.limits, self.python)
        with self._lock:
            self.executions += 1
            if key is not None:
                self._cache.setdefault(key, report)
                report = self._cache[key]
        return report
