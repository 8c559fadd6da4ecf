"""Specs shared by the extinction and acceptance tests."""
from growfrag import ModelSpec, PowerLogistic, RampAboveThreshold, SymmetricBeta, default_spec


def battery():
    base = default_spec(0.2)
    return {
        "default-D0.2": base,
        "default-D0": base.with_death(0.0),
        "default-D1.5": base.with_death(1.5),
        "beta5-D0.4": base.with_kernel(SymmetricBeta(5.0)).with_death(0.4),
        "powerlogistic-D0.3": ModelSpec(PowerLogistic(1.5, 2.0), RampAboveThreshold(2.0, 0.3),
                                        SymmetricBeta(2.0), 0.3, 1.0),
    }
