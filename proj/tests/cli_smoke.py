"""Exit codes and file outputs of the enclsim CLI."""
import os
import subprocess
import sys
import tempfile

exe, root = sys.argv[1], sys.argv[2]
wl = lambda p: os.path.join(root, "workloads", p)
failures = []


def run(*args):
    return subprocess.run([exe, *args], capture_output=True, text=True)


def expect(cond, what):
    if not cond:
        failures.append(what)


with tempfile.TemporaryDirectory() as tmp:
    trace, stats = os.path.join(tmp, "t.trace"), os.path.join(tmp, "s.stats")
    r = run("run", wl("hello.yaml"), "--trace-out", trace, "--stats-out", stats)
    expect(r.returncode == 0, f"run hello: rc {r.returncode}")
    expect("hello" in r.stdout.lower(), "run hello: guest stdout not echoed")

    r = run("replay", trace)
    expect(r.returncode == 0 and "OK" in r.stdout, f"replay: rc {r.returncode}\n{r.stdout}")

    cut = os.path.join(tmp, "cut.trace")
    with open(trace) as f, open(cut, "w") as g:
        g.write(f.read()[: os.path.getsize(trace) // 2])
    r = run("replay", cut)
    expect(r.returncode == 1 and "TruncatedTrace" in r.stderr, f"truncated replay: rc {r.returncode}")

    r = run("report", stats, stats)
    expect(r.returncode == 0 and "delta" in r.stdout, "report of two stats files")
    r = run("report")
    expect(r.returncode == 0 and r.stdout == "", "empty report")

    r = run("run", wl("scenarios/r2_mutate_perms.yaml"), "--violation=abort", "--quiet")
    expect(r.returncode == 2, f"abort mode: rc {r.returncode}")
    r = run("run", wl("scenarios/r2_mutate_perms.yaml"), "--quiet")
    expect(r.returncode == 0, f"record mode: rc {r.returncode}")

    r = run("run", wl("fib_pure.yaml"), "--tcs", "0")
    expect(r.returncode == 3, f"bad --tcs: rc {r.returncode}")
    r = run("run", os.path.join(tmp, "missing.yaml"))
    expect(r.returncode == 3, f"missing manifest: rc {r.returncode}")
    r = run("run", wl("fib_pure.yaml"), "--violation=maybe")
    expect(r.returncode == 3, f"bad --violation: rc {r.returncode}")

    r = run("lockdemo", "--interleavings", "1000")
    expect(r.returncode == 0 and r.stdout.startswith("witness"), "lockdemo finds a witness")

for f in failures:
    print("FAIL", f)
print(f"{len(failures)} failures")
sys.exit(1 if failures else 0)
