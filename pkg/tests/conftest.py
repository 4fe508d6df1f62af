"""Shared fixtures: synthetic snapshots and session-scoped reference runs.

The expensive simulations (two-pore vortex run, Poiseuille channel, closed
wall conservation run) are executed once per session and shared between the
unit tests and the acceptance suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pytest

from nanoporeflow.config import (CellClass, CriterionParams, DomainSpec,
                                 FluidProps, GridSpec, QuantumParams,
                                 RunParams, SimulationConfig,
                                 equidistant_pores)
from nanoporeflow import solver
from nanoporeflow.snapshot import FieldSnapshot


def make_snapshot(u, v, dx=1.0e-8, dy=1.0e-8, p=None, gamma=None, mask=None,
                  t=0.0, step=0) -> FieldSnapshot:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if p is None:
        p = np.zeros_like(u)
    if gamma is None:
        gamma = np.ones_like(u)
    if mask is None:
        mask = np.full(u.shape, CellClass.LIQUID, dtype=np.int8)
    return FieldSnapshot(dx=dx, dy=dy, u=u, v=v, p=np.asarray(p, float),
                         gamma=np.asarray(gamma, float),
                         mask=np.asarray(mask, np.int8), t=t, step=step)


def linear_field_snapshot(n=32, dx=1.0e-8, dy=1.0e-8, a=(0.0, 1.0, 2.0),
                          b=(1.0, -0.5, 0.25)):
    """u, v linear in x and y: u = a0 + a1 x + a2 y etc."""
    xc = (np.arange(n) + 0.5) * dx
    yc = (np.arange(n) + 0.5) * dy
    X, Y = np.meshgrid(xc, yc)
    u = a[0] + a[1] * X + a[2] * Y
    v = b[0] + b[1] * X + b[2] * Y
    return make_snapshot(u, v, dx=dx, dy=dy)


def two_pore_config(n_pores=2, diameter=100e-9, nx=192, ny=192,
                    pressure_offset=5.0e4, max_steps=500) -> SimulationConfig:
    """The desk-scale pore-exchange configuration used by the acceptance runs.

    1.2 um x 1.25 um box, 0.6 um liquid region, 50 nm wall; matched-density
    low-viscosity fluids so the pore jets reach Re ~ 100 and roll up into
    resolved vortex dipoles within a few hundred steps.
    """
    domain = DomainSpec(width=1.2e-6, height=1.25e-6, wall_y=0.6e-6,
                        wall_thickness=5e-8)
    grid = GridSpec.for_domain(domain, nx, ny)
    return SimulationConfig(
        domain=domain, grid=grid,
        pores=equidistant_pores(n_pores, diameter, domain),
        fluids=FluidProps(rho_liquid=1000.0, rho_gas=1000.0, eta_liquid=3e-6,
                          eta_gas=3e-6, surface_tension=0.0, v_ref=4.2e-9),
        run=RunParams(driver="pressure_offset", pressure_offset=pressure_offset,
                      max_steps=max_steps, snapshot_every=0),
        criterion=CriterionParams(), quantum=QuantumParams())


@dataclass
class ReferenceRun:
    config: SimulationConfig
    ctx: solver.SolverContext
    state: solver.SolverState
    diagnostics: list
    elapsed: float

    @property
    def snapshot(self):
        return solver.snapshot_of(self.state, self.ctx)


def _run(config: SimulationConfig) -> ReferenceRun:
    ctx = solver.SolverContext(config)
    state = solver.initial_state(config, ctx)
    diags = []
    t0 = time.time()
    for _ in range(config.run.max_steps):
        state, d = solver.step(state, ctx)
        diags.append(d)
    return ReferenceRun(config=config, ctx=ctx, state=state,
                       diagnostics=diags, elapsed=time.time() - t0)


@pytest.fixture(scope="session")
def two_pore_run() -> ReferenceRun:
    """2-pore d=100 nm run, 500 steps: vortex pairs, line speeds, symmetry."""
    return _run(two_pore_config())


@pytest.fixture(scope="session")
def poiseuille_run() -> ReferenceRun:
    """Body-force-driven single-phase channel, 128 cells across."""
    H = 1.0e-6
    domain = DomainSpec(width=4.0e-7, height=H, wall_y=H, wall_thickness=1e-8,
                        wall_enabled=False)
    grid = GridSpec.for_domain(domain, 16, 128)
    config = SimulationConfig(
        domain=domain, grid=grid, pores=(),
        fluids=FluidProps(rho_liquid=1000.0, rho_gas=1000.0, eta_liquid=1e-3,
                          eta_gas=1e-3, surface_tension=0.0),
        run=RunParams(driver="none", body_force_x=1.0e9, periodic_x=True,
                      max_steps=55000, snapshot_every=0),
        criterion=CriterionParams(), quantum=QuantumParams())
    return _run(config)


@pytest.fixture(scope="session")
def closed_wall_run() -> ReferenceRun:
    """No-pore closed-wall run with an initial shear perturbation, 1000 steps."""
    domain = DomainSpec(width=1.2e-6, height=1.25e-6, wall_y=0.6e-6,
                        wall_thickness=5e-8)
    grid = GridSpec.for_domain(domain, 64, 64)
    config = SimulationConfig(
        domain=domain, grid=grid, pores=(),
        fluids=FluidProps(rho_liquid=1000.0, rho_gas=100.0, eta_liquid=3e-6,
                          eta_gas=3e-6, surface_tension=0.0),
        run=RunParams(driver="none", initial_speed=0.05, max_steps=1000,
                      snapshot_every=0),
        criterion=CriterionParams(), quantum=QuantumParams())
    return _run(config)
