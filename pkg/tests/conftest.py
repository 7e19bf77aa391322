"""Session fixtures: the reference flow runs every test module shares."""

import numpy as np
import pytest

from coupledflow import families, flow


@pytest.fixture(scope="session")
def sphere_hist_512():
    """Shrinking round S^2 at 512 nodes, run to 100x curvature growth."""
    cfg = flow.FlowConfig(family="round_sphere", params={"nodes": 512},
                          t_max=10.0, rm_max=100.0, save_interval=1e-3)
    hist = flow.run(cfg)
    flow.detect_blowup(hist)
    flow.type_one_diagnostic(hist)
    return hist


@pytest.fixture(scope="session")
def sphere_hist_256():
    cfg = flow.FlowConfig(family="round_sphere", params={"nodes": 256},
                          t_max=10.0, rm_max=50.0, save_interval=1e-3)
    hist = flow.run(cfg)
    flow.detect_blowup(hist)
    flow.type_one_diagnostic(hist)
    return hist


@pytest.fixture(scope="session")
def coupled_sphere_256():
    """Round S^2 with a zonal scalar: the coupled Type-I reference run.

    Runs deep (sup|Rm| to 1e8) so the latest saved slice sits within
    ~5e-9 of the singular time: the reduced-distance standin for the
    limiting soliton potential carries an O(sqrt(gap * lambda)) bias, and
    the lambda = 64 rescaling trend needs that bias dominated by the
    physical distance-to-soliton decay.
    """
    cfg = flow.FlowConfig(family="round_sphere",
                          params={"nodes": 256, "phi_amplitude": 0.1},
                          t_max=10.0, rm_max=1.0e8, save_interval=5e-4)
    hist = flow.run(cfg)
    flow.detect_blowup(hist)
    flow.type_one_diagnostic(hist)
    return hist


@pytest.fixture(scope="session")
def sphere3_hist_256():
    """Round S^3 (2-dim fiber)."""
    cfg = flow.FlowConfig(family="round_sphere",
                          params={"nodes": 256, "fiber_dim": 2},
                          t_max=10.0, rm_max=100.0, save_interval=5e-4)
    hist = flow.run(cfg)
    flow.detect_blowup(hist)
    flow.type_one_diagnostic(hist)
    return hist


@pytest.fixture(scope="session")
def dumbbell_hist():
    """S^3-type dumbbell pinching at the neck; p = pole stays tame."""
    cfg = flow.FlowConfig(family="dumbbell",
                          params={"nodes": 384, "neck_w": 0.14},
                          t_max=10.0, rm_stop_factor=1.5e3,
                          save_interval=2e-4)
    hist = flow.run(cfg)
    flow.detect_blowup(hist)
    return hist


@pytest.fixture(scope="session")
def flat_static_256():
    metric, phi = families.flat_torus(nodes=256)
    return flow.make_static_history(metric, phi, 0.0, 1.6, n_saves=5)


@pytest.fixture(scope="session")
def cap_static_512():
    metric, phi = families.gaussian_cap(nodes=512, flat_radius=1.0,
                                        belt_width=0.5)
    return flow.make_static_history(metric, phi, 0.0, 1.0, n_saves=5)


@pytest.fixture(scope="session")
def coupled_flat_pair():
    """Coupled flat-torus runs at two resolutions with saves scaled for the
    second-order evolution-residual study."""

    def make(nodes, save):
        return flow.run(flow.FlowConfig(
            family="perturbed_flat", params={"nodes": nodes, "eps": 0.1},
            t_max=0.06, save_interval=save))

    return make(256, 1.6e-3), make(512, 4e-4)
