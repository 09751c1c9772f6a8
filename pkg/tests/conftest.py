"""Prints a one-line verdict per acceptance criterion at the end of the run."""


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props or rep.when != "call" and outcome != "error":
                continue
            n = props["criterion"]
            ok = outcome == "passed" and lines.get(n, (True,))[0]
            lines[n] = (ok, props.get("title", ""), props.get("measured", ""))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        ok, title, measured = lines[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}  {measured}")
