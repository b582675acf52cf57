from dataclasses import replace

from ndfsim.scenarios import get_scenario


def tiny_config(name, layers=2, width=8, n=4, nt=2, **training):
    cfg = get_scenario(name)
    tr = replace(cfg.training, hidden_layers=layers, hidden_width=width, **training)
    sp = replace(cfg.sampling, n1=n, n2=n, nt=nt if cfg.dynamic else 1)
    return replace(cfg, training=tr, sampling=sp)


CRITERIA: list[str] = []


def record(name: str, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
    CRITERIA.append(line)
    print(line)
    return passed


def pytest_runtest_logreport(report):
    # skipped criteria still get a line, so the summary lists every criterion
    if report.skipped and "test_acceptance" in report.nodeid:
        reason = report.longrepr[-1] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        CRITERIA.append(f"SKIP {report.nodeid.split('::')[-1]}: {reason.removeprefix('Skipped: ')}")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
