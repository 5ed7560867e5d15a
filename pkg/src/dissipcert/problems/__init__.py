"""Bundled problem files used by the tests, docs and CLI walkthroughs."""

from importlib import resources

NAMES = (
    "scalar_lq",
    "double_well_tracking",
    "poly_dynamics_quadratic_costs",
    "economic_growth",
    "shared_equilibrium",
)


def text(name):
    """Return the contents of a bundled problem file by short name."""
    if name not in NAMES:
        raise KeyError("unknown bundled problem %r (have %s)" % (name, ", ".join(NAMES)))
    return resources.files(__package__).joinpath(name + ".prob").read_text(encoding="utf-8")


def path(name):
    """Filesystem path of a bundled problem file (for CLI examples)."""
    if name not in NAMES:
        raise KeyError("unknown bundled problem %r" % name)
    return str(resources.files(__package__).joinpath(name + ".prob"))
