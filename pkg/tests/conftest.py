import numpy as np
import pytest

from riskcircuit.circuit import CircuitBuilder, SystemKind
from riskcircuit.inference import ClosurePolicy
from riskcircuit.rates import RateModel

HOUR = 3600


@pytest.fixture
def builder():
    return CircuitBuilder()


def make_model(venue="39", **over):
    base = dict(venue=venue, behaviours={"default": 1.0, "close": 2.0},
                lambda_direct=0.0, lambda_indirect=0.0, rho=0.0,
                deposit=0.0, decay=0.0)
    base.update(over)
    return RateModel(**base)


def one_box_doc(lam=0.7, duration=1, venue_level_rates=False, flags=None,
                subject_prior=None, companion_prior=None):
    """Venue + registered subject a:14 + unregistered companion b:7, one box."""
    b = CircuitBuilder()
    x = b.system(SystemKind.MANAGED_VENUE, "39")
    a = b.system(SystemKind.REGISTERED_INDIVIDUAL, "14")
    u = b.system(SystemKind.UNREGISTERED_INDIVIDUAL, "7")
    box = b.box(x, (0, duration), [(a, 0, duration, "default"),
                                   (u, 0, duration, "default")],
                flags=list(flags or []))
    doc = b.build()
    priors = {}
    if subject_prior is not None:
        priors[a] = tuple(subject_prior)
    if companion_prior is not None:
        priors[u] = tuple(companion_prior)
    policy = ClosurePolicy(prevalence=0.0, system_priors=priors)
    model = make_model(lambda_direct=lam)
    return doc, box, {"39": model}, policy, (x, a, u)


def certain_contagious(n=2):
    v = np.zeros(n)
    v[1] = 1.0
    return tuple(v)


def certain_uninfected(n=9):
    v = np.zeros(n)
    v[0] = 1.0
    return tuple(v)
