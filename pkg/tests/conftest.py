import numpy as np
import pytest

from intrusion_glm.dataset import DesignMatrix


def draw_counts(rng, X, beta, gamma=0.0):
    """Poisson (gamma=0) or gamma-Poisson NB2 responses for design ``X``."""
    mu = np.exp(np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float))
    if gamma > 0:
        mu = mu * rng.gamma(1.0 / gamma, gamma, size=mu.shape)
    return rng.poisson(mu).astype(float)


def random_design(rng, m, n_coef, scale=0.5):
    """Intercept plus ``n_coef - 1`` standard-normal columns scaled by ``scale``."""
    Z = rng.standard_normal((m, n_coef - 1)) * scale
    names = tuple(f"x{j + 1}" for j in range(n_coef - 1))
    return DesignMatrix.from_arrays(Z, names, add_intercept=True)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when == "call":
                lines.append((props["criterion"], outcome == "passed", props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(lines, key=lambda t: int(t[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
