import re

CRITERIA = {
    1: "chi formula exact values",
    2: "Fejer monotonicity on seeded instances",
    3: "reduction identities are bit-identical",
    4: "preconditioned resolvent matches direct solve",
    5: "phi_z profile is nonincreasing",
    6: "head-to-head evaluation ordering",
    7: "entropy experiment agreement",
    8: "constraint activity pattern",
    9: "primal-dual constants dominate the reference",
    10: "cross-solver agreement",
    11: "incremental ERM",
    12: "distributed consensus",
    13: "variable-metric no-inversion scheme",
    14: "CLI determinism and counter contracts",
}

_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes: dict[int, str] = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = _PATTERN.search(getattr(rep, "nodeid", ""))
            if m:
                num = int(m.group(1))
                word = "PASS" if status == "passed" else "FAIL"
                outcomes[num] = word
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(outcomes):
        desc = CRITERIA.get(num, "")
        terminalreporter.write_line(
            f"criterion {num:2d} [{desc}]: {outcomes[num]}")
