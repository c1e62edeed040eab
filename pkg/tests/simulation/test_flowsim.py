"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the two-phase flow tests: discrete conservation of the TPFA pressure solve,
saturation bounds and water balance of the upwind transport, and the water-cut responses.
"""

import logging

import numpy as np
import pytest

from wrml.fields.grf import Grid2D
from wrml.simulation.flowsim import (
    FlowConfig,
    FlowState,
    WellSet,
    flux_imbalance,
    fractional_flow,
    pressure_solve,
    run_flow,
    saturation_step,
    simulate,
)
from wrml.utils.exceptions import CFLViolation, SingularSystem


def _config(grid, producers, injectors, **kwargs):
    return FlowConfig(
        grid=grid,
        wells=WellSet(
            producer_cells=tuple(c for c, _ in producers),
            producer_rates=tuple(r for _, r in producers),
            injector_cells=tuple(c for c, _ in injectors),
            injector_rates=tuple(r for _, r in injectors),
            producer_names=tuple("P{}".format(i + 1) for i in range(len(producers))),
        ),
        **kwargs
    )


@pytest.fixture
def lognormal_permeability(desk_grid):
    return np.exp(0.5 * np.random.default_rng(5).standard_normal(desk_grid.n_nodes))


def test_default_wells(desk_grid):
    wells = WellSet.default(desk_grid)
    assert len(wells.producer_cells) == 9
    assert len(set(wells.producer_cells) | set(wells.injector_cells)) == 13
    assert wells.producer_cells[0] == 1 * 21 + 1
    assert wells.producer_cells[4] == 10 * 21 + 10
    assert set(wells.injector_cells) == {0, 20, 420, 440}
    assert sum(wells.producer_rates) + sum(wells.injector_rates) == pytest.approx(0.0, abs=1e-15)


def test_no_sources_give_constant_pressure():
    grid = Grid2D.from_domain(1.0, 1.0, 4, 4)
    cfg = _config(grid, [], [])
    p, fluxes = pressure_solve(np.ones(16), np.zeros(16), cfg)
    np.testing.assert_array_equal(p, np.zeros(16))
    assert fluxes.max_abs() == 0.0

    state = FlowState(pressure=p, saturation=np.full(16, 0.3))
    new_state = saturation_step(state, fluxes, cfg)
    np.testing.assert_array_equal(new_state.saturation, state.saturation)


def test_single_pair_conservation():
    grid = Grid2D.from_domain(1.0, 1.0, 6, 6)
    cfg = _config(grid, [(35, -1.0)], [(0, 1.0)])
    _, fluxes = pressure_solve(np.ones(36), np.zeros(36), cfg)
    np.testing.assert_allclose(fluxes.net_outflow(), cfg.sources, atol=1e-10 * fluxes.max_abs())
    assert flux_imbalance(fluxes, cfg) <= 1e-10


def test_unbalanced_rates():
    grid = Grid2D.from_domain(1.0, 1.0, 4, 4)
    cfg = _config(grid, [(15, -1.0)], [(0, 2.0)])
    with pytest.raises(SingularSystem):
        pressure_solve(np.ones(16), np.zeros(16), cfg)


def test_five_spot_pressure_is_symmetric():
    grid = Grid2D.from_domain(2.0, 2.0, 9, 9)
    cfg = _config(grid, [(0, -0.25), (8, -0.25), (72, -0.25), (80, -0.25)], [(40, 1.0)])
    p, _ = pressure_solve(np.ones(81), np.zeros(81), cfg)
    P = p.reshape(9, 9)
    np.testing.assert_allclose(P, P[::-1, :], atol=1e-10)
    np.testing.assert_allclose(P, P[:, ::-1], atol=1e-10)
    np.testing.assert_allclose(P, P.T, atol=1e-10)


def test_saturation_step_water_balance(desk_flow_config, lognormal_permeability):
    cfg = desk_flow_config
    s = np.random.default_rng(1).uniform(0.0, 0.5, cfg.n_cells)
    p, fluxes = pressure_solve(lognormal_permeability, s, cfg)
    state = FlowState(pressure=p, saturation=s)
    new_state = saturation_step(state, fluxes, cfg)

    stored = cfg.pore_volume * (new_state.saturation.sum() - s.sum())
    assert stored == pytest.approx(new_state.injected_water - new_state.produced_water, abs=1e-12)
    assert new_state.injected_water == pytest.approx(cfg.dt * 0.015)
    assert np.all((new_state.saturation >= 0) & (new_state.saturation <= 1))


def test_cfl_cap(desk_grid):
    cfg = FlowConfig.default(grid=desk_grid, total_rate=10.0, max_substeps=1)
    p, fluxes = pressure_solve(np.ones(cfg.n_cells), np.zeros(cfg.n_cells), cfg)
    with pytest.raises(CFLViolation):
        saturation_step(FlowState(pressure=p, saturation=np.zeros(cfg.n_cells)), fluxes, cfg)


def test_full_run_conservation(desk_flow_config, lognormal_permeability):
    result = run_flow(lognormal_permeability, desk_flow_config, [10.0, 30.0, 70.0])
    assert result.max_flux_imbalance <= 1e-10
    assert result.water_balance_error <= 1e-8
    assert np.all((result.state.saturation >= 0) & (result.state.saturation <= 1))
    assert np.all((result.water_cut >= 0) & (result.water_cut <= 1))
    assert result.state.time == pytest.approx(70.0)
    assert result.water_cut.shape == (3, 9)


def test_center_well_is_dry_early(desk_flow_config):
    water_cut = simulate(np.ones(desk_flow_config.n_cells), desk_flow_config, [1.0])
    assert water_cut.shape == (1, 9)
    assert water_cut[0, 4] == 0.0


def test_long_flood_reaches_all_producers(desk_grid):
    cfg = FlowConfig.default(grid=desk_grid, total_rate=0.5, t_end=60.0)
    water_cut = simulate(np.ones(cfg.n_cells), cfg, [60.0])
    assert np.all(water_cut >= 0.9)


def test_transposed_permeability_transposes_wells(desk_flow_config, lognormal_permeability):
    times = [20.0]
    K = lognormal_permeability
    K_t = K.reshape(21, 21).T.ravel()
    original = simulate(K, desk_flow_config, times)[0]
    transposed = simulate(K_t, desk_flow_config, times)[0]
    order = [3 * (k % 3) + k // 3 for k in range(9)]
    np.testing.assert_allclose(transposed, original[order], atol=1e-8)


def test_observation_times_must_be_steps(desk_flow_config):
    with pytest.raises(ValueError):
        simulate(np.ones(desk_flow_config.n_cells), desk_flow_config, [0.15])
    with pytest.raises(ValueError):
        simulate(np.ones(desk_flow_config.n_cells), desk_flow_config, [80.0])


def test_fractional_flow_endpoints(desk_flow_config):
    np.testing.assert_allclose(fractional_flow(np.array([0.0, 0.5, 1.0]), desk_flow_config), [0.0, 0.5, 1.0])


def test_saturation_step_reports_clipping(desk_flow_config, lognormal_permeability, caplog):
    cfg = desk_flow_config
    s = np.full(cfg.n_cells, 1.0 + 1e-6)
    p, fluxes = pressure_solve(lognormal_permeability, s, cfg)
    with caplog.at_level(logging.WARNING, logger="wrml.simulation.flowsim"):
        new_state = saturation_step(FlowState(pressure=p, saturation=s), fluxes, cfg)
    assert np.all(new_state.saturation <= 1.0)
    assert any("clipped" in record.getMessage() for record in caplog.records)


def test_saturation_step_in_range_is_silent(desk_flow_config, lognormal_permeability, caplog):
    cfg = desk_flow_config
    s = np.random.default_rng(1).uniform(0.0, 0.5, cfg.n_cells)
    p, fluxes = pressure_solve(lognormal_permeability, s, cfg)
    with caplog.at_level(logging.WARNING, logger="wrml.simulation.flowsim"):
        saturation_step(FlowState(pressure=p, saturation=s), fluxes, cfg)
    assert not caplog.records


def test_halving_the_time_step_barely_moves_water_cut(desk_grid, lognormal_permeability):
    times = [10.0, 30.0, 70.0]
    coarse = simulate(lognormal_permeability, FlowConfig.default(grid=desk_grid), times)
    fine = simulate(lognormal_permeability, FlowConfig.default(grid=desk_grid, dt=0.05), times)
    assert np.abs(coarse - fine).max() < 0.02


@pytest.mark.slow
def test_full_resolution_conservation():
    cfg = FlowConfig.default()
    assert cfg.n_cells == 41 * 41
    K = np.exp(0.8 * np.random.default_rng(17).standard_normal(cfg.n_cells))
    result = run_flow(K, cfg, [35.0, 70.0])
    assert result.max_flux_imbalance <= 1e-10
    assert result.water_balance_error <= 1e-8
    assert np.all((result.state.saturation >= 0) & (result.state.saturation <= 1))
    assert np.all(result.water_cut[1] >= result.water_cut[0])
