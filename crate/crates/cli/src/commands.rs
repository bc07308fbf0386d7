//! Subcommand implementations: orchestration of the core library plus
//! plot-ready file output and run manifests.

use std::time::Instant;

use num_complex::Complex64 as C64;

use eploop::basis::{assemble_operator_blocks, BasisSpec, OperatorBlocks};
use eploop::dynamics::{adiabatic_decay, PopulationTrace, PropagationSettings};
use eploop::loops::{
    grid_search, lin_grid, log_grid, sweep_duration, sweep_phase, sweep_radius, track_loop,
    transfer_for_loop, Engine, LoopSpec, SweepResult, SweepRunner,
};
use eploop::spectral::{
    assess_convergence, canonicalize_ep_pair, locate_ep, solve_at, ConvergenceCriteria,
    EpSearchOptions, SolveOptions, SolverBackend,
};
use eploop::two_level::{fit_model, sample_octagon, TwoLevelModel};
use eploop::FieldPoint;

use crate::config::{BackendKind, EngineKind, RunConfig, SpectrumMode, SweepAxis};
use crate::output::{cell, OutputDir, Table};
use crate::CliError;

fn basis_spec(cfg: &RunConfig) -> BasisSpec<f64> {
    BasisSpec::new(cfg.n_max, cfg.sturmian_scale).with_rotation_angle(cfg.rotation_angle)
}

fn solve_options(cfg: &RunConfig) -> SolveOptions<f64> {
    SolveOptions {
        backend: match cfg.backend {
            BackendKind::Auto => SolverBackend::Auto,
            BackendKind::Dense => SolverBackend::Dense,
            BackendKind::ShiftInvert => SolverBackend::ShiftInvert,
        },
        residual_tol: cfg.residual_tol,
        ..Default::default()
    }
}

fn settings(cfg: &RunConfig) -> PropagationSettings<f64> {
    let mut s = PropagationSettings::default();
    s.rtol = cfg.rtol;
    s.atol = cfg.atol;
    s.output_samples = cfg.output_samples;
    s.subspace = cfg.subspace;
    s.im_energy_guard = cfg.im_energy_guard;
    s.cycles = cfg.cycles;
    s.solver = solve_options(cfg);
    s
}

fn center(cfg: &RunConfig) -> FieldPoint<f64> {
    FieldPoint::new(cfg.gamma, cfg.f)
}

fn target(cfg: &RunConfig) -> C64 {
    C64::new(cfg.energy_re, cfg.energy_im)
}

fn rotation(cfg: &RunConfig) -> C64 {
    C64::from_polar(1.0, cfg.rotation_angle)
}

fn loop_spec(cfg: &RunConfig) -> LoopSpec<f64> {
    LoopSpec::new(center(cfg), cfg.r, cfg.t, cfg.phi0)
}

fn blocks_for(cfg: &RunConfig) -> Result<OperatorBlocks<f64>, CliError> {
    Ok(assemble_operator_blocks(&basis_spec(cfg))?)
}

fn fit_for(cfg: &RunConfig, blocks: &OperatorBlocks<f64>) -> Result<TwoLevelModel<f64>, CliError> {
    let samples = sample_octagon(
        blocks,
        rotation(cfg),
        center(cfg),
        cfg.octagon_radius,
        target(cfg),
        &solve_options(cfg),
    )?;
    let model = fit_model(&samples, center(cfg))?.with_c(C64::new(cfg.c_re, cfg.c_im))?;
    Ok(model)
}

fn runner<'a>(
    cfg: &RunConfig,
    blocks: Option<&'a OperatorBlocks<f64>>,
    model: &'a TwoLevelModel<f64>,
) -> SweepRunner<'a, f64> {
    SweepRunner {
        blocks,
        b: rotation(cfg),
        model,
        target: target(cfg),
        tracked: cfg.tracked,
        settings: settings(cfg),
        refreshes_per_cycle: cfg.refreshes_per_cycle,
        init_label: 1,
        convergence: ConvergenceCriteria { tol: cfg.convergence_tol, ..Default::default() },
    }
}

fn engine_of(cfg: &RunConfig) -> Engine {
    match cfg.engine {
        EngineKind::TwoLevel => Engine::TwoLevel,
        EngineKind::Full => Engine::Full,
    }
}

fn write_manifest(
    out: &mut OutputDir,
    cfg: &RunConfig,
    command: &str,
    started: Instant,
) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str("# eploop run manifest; feed this file back via --config to reproduce\n");
    text.push_str("[manifest]\n");
    text.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("command = {command}\n"));
    text.push_str(&format!("elapsed_s = {:.3}\n", started.elapsed().as_secs_f64()));
    for (name, sum) in out.checksums() {
        text.push_str(&format!("checksum_{} = fnv1a64:{}\n", name.replace('.', "_"), sum));
    }
    text.push('\n');
    text.push_str(&cfg.serialize());
    let path = out.root().join("run_manifest.txt");
    std::fs::write(&path, text)
        .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
    Ok(())
}

/// Resonance table at one field point, or eigenvalue trajectories along the
/// configured loop (one file per adiabatic label).
pub fn spectrum(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let mut out = OutputDir::create(std::path::Path::new(&cfg.directory))?;
    let blocks = blocks_for(cfg)?;
    match cfg.spectrum_mode {
        SpectrumMode::Point => {
            let mut set = solve_at(
                &blocks,
                center(cfg),
                rotation(cfg),
                target(cfg),
                cfg.count,
                &solve_options(cfg),
            )?;
            canonicalize_ep_pair(&mut set);
            assess_convergence(
                &blocks,
                &mut set,
                &ConvergenceCriteria { tol: cfg.convergence_tol, ..Default::default() },
                &solve_options(cfg),
            )?;
            let mut table =
                Table::new("label,re_energy (a.u.),im_energy (a.u.),converged,self_orthogonal");
            let mut rows: Vec<_> = set.resonances.iter().collect();
            rows.sort_by_key(|r| r.label);
            for r in rows {
                table.row(&[
                    r.label.to_string(),
                    cell(r.energy.re),
                    cell(r.energy.im),
                    (r.converged as u8).to_string(),
                    (r.self_orthogonal as u8).to_string(),
                ]);
            }
            out.write("spectrum.csv", &table.finish())?;
        }
        SpectrumMode::Loop => {
            let track = track_loop(
                &blocks,
                rotation(cfg),
                &loop_spec(cfg),
                target(cfg),
                cfg.count,
                cfg.loop_points,
                cfg.cycles,
                &solve_options(cfg),
            )?;
            let labels: Vec<usize> = track[0].1.labels();
            for &label in &labels {
                let mut table = Table::new("t (a.u.),re_energy (a.u.),im_energy (a.u.)");
                for (t, set) in &track {
                    if let Some(r) = set.by_label(label) {
                        table.row(&[cell(*t), cell(r.energy.re), cell(r.energy.im)]);
                    }
                }
                out.write(&format!("trajectory_label_{label}.csv"), &table.finish())?;
            }
            // start/end label permutation summary
            let perm = eploop::loops::loop_permutation(&track[0].1, &track.last().unwrap().1);
            let mut table = Table::new("start_label,end_label_at_same_energy");
            for (a, b) in perm {
                table.row(&[a.to_string(), b.to_string()]);
            }
            out.write("loop_permutation.csv", &table.finish())?;
        }
    }
    write_manifest(&mut out, cfg, "spectrum", started)
}

/// Octagon fit, EP location, and a held-out validation at half the fit
/// radius; coefficients are written in the manifest text format.
pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let mut out = OutputDir::create(std::path::Path::new(&cfg.directory))?;
    let blocks = blocks_for(cfg)?;
    let model = fit_for(cfg, &blocks)?;

    let location = locate_ep(
        &model,
        |c, radius| {
            let samples =
                sample_octagon(&blocks, rotation(cfg), c, radius, target(cfg), &solve_options(cfg))?;
            fit_model(&samples, c)
        },
        &EpSearchOptions { initial_radius: cfg.octagon_radius, ..Default::default() },
    )?;

    // held-out octagon at half radius: worst eigenvalue error of the model
    let held_out = sample_octagon(
        &blocks,
        rotation(cfg),
        center(cfg),
        cfg.octagon_radius * 0.5,
        target(cfg),
        &solve_options(cfg),
    )?;
    let mut held_out_err = 0.0f64;
    for (p, e1, e2) in held_out.iter().skip(1) {
        let (m1, m2) = model.eigenvalues(*p);
        let direct = (m1 - e1).norm().max((m2 - e2).norm());
        let swapped = (m1 - e2).norm().max((m2 - e1).norm());
        held_out_err = held_out_err.max(direct.min(swapped));
    }

    let mut text = String::new();
    text.push_str("# two-level model fitted on an octagon; coefficients in atomic units\n");
    text.push_str("[two-level-model]\n");
    text.push_str(&format!("center_gamma = {:?}\n", model.center.gamma));
    text.push_str(&format!("center_f = {:?}\n", model.center.f));
    let names_k = ["a", "b", "c_coef"];
    for (name, v) in names_k.iter().zip(model.kappa_coeffs.iter()) {
        text.push_str(&format!("kappa_{name}_re = {:?}\nkappa_{name}_im = {:?}\n", v.re, v.im));
    }
    let names_e = ["d", "e", "f", "g", "h", "i"];
    for (name, v) in names_e.iter().zip(model.eta_coeffs.iter()) {
        text.push_str(&format!("eta_{name}_re = {:?}\neta_{name}_im = {:?}\n", v.re, v.im));
    }
    text.push_str(&format!("free_c_re = {:?}\nfree_c_im = {:?}\n", model.c.re, model.c.im));
    text.push_str(&format!("fit_residual = {:?}\n", model.fit_residual));
    text.push_str(&format!("octagon_radius = {:?}\n", cfg.octagon_radius));
    text.push_str(&format!("held_out_error = {held_out_err:?}\n"));
    text.push_str("\n[ep-location]\n");
    text.push_str(&format!("gamma = {:?}\n", location.point.gamma));
    text.push_str(&format!("f = {:?}\n", location.point.f));
    text.push_str(&format!("energy_re = {:?}\n", location.energy.re));
    text.push_str(&format!("energy_im = {:?}\n", location.energy.im));
    text.push_str(&format!("splitting_abs = {:?}\n", location.splitting.norm()));
    out.write("model.txt", &text)?;
    write_manifest(&mut out, cfg, "fit", started)?;

    // the fit must generalize: the held-out error at half radius stays
    // within an order of magnitude of the recorded residual
    let threshold = (10.0 * model.fit_residual).max(1e-10);
    if held_out_err > threshold {
        return Err(CliError::Numerical(format!(
            "held-out validation error {held_out_err:e} exceeds {threshold:e}"
        )));
    }
    Ok(())
}

fn write_trace(
    out: &mut OutputDir,
    name: &str,
    trace: &PopulationTrace<f64>,
) -> Result<(), CliError> {
    let mut header = String::from("t (a.u.)");
    for l in &trace.labels {
        header.push_str(&format!(
            ",pop_{l},re_energy_{l} (a.u.),im_energy_{l} (a.u.)"
        ));
    }
    let mut table = Table::new(&header);
    for (k, &t) in trace.times.iter().enumerate() {
        let mut row = vec![cell(t)];
        for (j, _) in trace.labels.iter().enumerate() {
            row.push(cell(trace.coefficients[(k, j)].norm_sqr()));
            row.push(cell(trace.energies[(k, j)].re));
            row.push(cell(trace.energies[(k, j)].im));
        }
        table.row(&row);
    }
    out.write(name, &table.finish())
}

/// Propagate the configured loop with the configured engine.
pub fn propagate(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let mut out = OutputDir::create(std::path::Path::new(&cfg.directory))?;
    let blocks = blocks_for(cfg)?;
    let model = fit_for(cfg, &blocks)?;
    let run = runner(cfg, Some(&blocks), &model);
    let lspec = loop_spec(cfg);
    let trace = transfer_for_loop(&run, &lspec, engine_of(cfg))?;
    write_trace(&mut out, "trace.csv", &trace)?;

    let mut summary = String::new();
    summary.push_str("# post-loop populations\n[result]\n");
    summary.push_str(&format!("engine = {}\n", cfg.engine.as_str()));
    for &l in &trace.labels {
        summary.push_str(&format!(
            "final_pop_{l} = {:?}\n",
            trace.final_population(l).unwrap_or(f64::NAN)
        ));
    }
    summary.push_str(&format!(
        "transfer = {:?}\n",
        trace.final_population(1).unwrap_or(f64::NAN)
    ));
    summary.push_str(&format!(
        "adiabatic_decay_label_1 = {:?}\n",
        adiabatic_decay(&trace, 1).unwrap_or(f64::NAN)
    ));
    out.write("summary.txt", &summary)?;
    write_manifest(&mut out, cfg, "propagate", started)
}

fn write_sweep(
    out: &mut OutputDir,
    name: &str,
    res: &SweepResult<f64>,
) -> Result<(), CliError> {
    let mut header = res.axis_names.join(",");
    header.push_str(",transfer,decay_label_1");
    // the label set is uniform across points; take it from the first success
    let labels: Vec<usize> = res
        .points
        .iter()
        .find(|p| p.error.is_none())
        .map(|p| p.final_populations.iter().map(|(l, _)| *l).collect())
        .unwrap_or_default();
    for l in &labels {
        header.push_str(&format!(",pop_{l}"));
    }
    header.push_str(",error");
    let mut table = Table::new(&header);
    for p in &res.points {
        let mut row: Vec<String> = p.coords.iter().map(|&c| cell(c)).collect();
        row.push(cell(p.transfer));
        row.push(cell(p.decay_label1));
        for l in &labels {
            let v = p
                .final_populations
                .iter()
                .find(|(ll, _)| ll == l)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN);
            row.push(cell(v));
        }
        row.push(p.error.clone().unwrap_or_default());
        table.row(&row);
    }
    out.write(name, &table.finish())
}

/// Transfer sweeps over T, r, rT, or phi0 grids.
pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let mut out = OutputDir::create(std::path::Path::new(&cfg.directory))?;
    let blocks = blocks_for(cfg)?;
    let model = fit_for(cfg, &blocks)?;
    let run = runner(cfg, Some(&blocks), &model);
    let engine = engine_of(cfg);

    let grid = |scale, lo, hi, n| match scale {
        crate::config::GridScale::Log => log_grid(lo, hi, n),
        crate::config::GridScale::Linear => lin_grid(lo, hi, n),
    };

    let (res, file): (SweepResult<f64>, &str) = match cfg.axis {
        SweepAxis::Duration => {
            let tg = grid(cfg.t_scale, cfg.t_min, cfg.t_max, cfg.t_points);
            (sweep_duration(&run, cfg.r, cfg.phi0, &tg, engine), "duration_sweep.csv")
        }
        SweepAxis::Radius => {
            let rg = grid(cfg.r_scale, cfg.r_min, cfg.r_max, cfg.r_points);
            (sweep_radius(&run, cfg.t, cfg.phi0, &rg, engine), "radius_sweep.csv")
        }
        SweepAxis::Phase => {
            let pg = lin_grid(cfg.phi_min, cfg.phi_max, cfg.phi_points);
            (sweep_phase(&run, cfg.r, cfg.t, &pg, engine), "phase_sweep.csv")
        }
        SweepAxis::DurationRadius => {
            let rg = grid(cfg.r_scale, cfg.r_min, cfg.r_max, cfg.r_points);
            let tg = grid(cfg.t_scale, cfg.t_min, cfg.t_max, cfg.t_points);
            let res = grid_search(&run, &rg, &tg, cfg.phi0, engine);
            let mut ridge = Table::new("r,optimal_T (a.u.),transfer");
            for (r, t, v) in &res.ridge {
                ridge.row(&[cell(*r), cell(*t), cell(*v)]);
            }
            out.write("ridge.csv", &ridge.finish())?;
            (res, "grid_sweep.csv")
        }
    };
    write_sweep(&mut out, file, &res)?;

    let mut summary = String::new();
    summary.push_str("# sweep optimum\n[optimum]\n");
    summary.push_str(&format!("engine = {}\n", cfg.engine.as_str()));
    summary.push_str(&format!("axis = {}\n", cfg.axis.as_str()));
    match res.optimum_index {
        Some(k) => {
            for (name, v) in res.axis_names.iter().zip(res.points[k].coords.iter()) {
                summary.push_str(&format!("{name} = {v:?}\n"));
            }
            summary.push_str(&format!("transfer = {:?}\n", res.optimum_value));
        }
        None => summary.push_str("transfer = nan\n"),
    }
    summary.push_str(&format!("failed_points = {}\n", res.failed_points));

    // optional full-engine verification of two-level sweep points
    if cfg.full_spot_checks > 0 && engine == Engine::TwoLevel {
        let n = cfg.full_spot_checks.min(res.points.len());
        let mut table = Table::new("coords..,two_level,full,rel_deviation");
        let stride = res.points.len().div_ceil(n);
        summary.push_str("\n[spot-checks]\n");
        let mut worst: f64 = 0.0;
        for p in res.points.iter().step_by(stride.max(1)).take(n) {
            if p.error.is_some() {
                continue;
            }
            let lspec = match cfg.axis {
                SweepAxis::Duration => LoopSpec::new(center(cfg), cfg.r, p.coords[0], cfg.phi0),
                SweepAxis::Radius => LoopSpec::new(center(cfg), p.coords[0], cfg.t, cfg.phi0),
                SweepAxis::Phase => LoopSpec::new(center(cfg), cfg.r, cfg.t, p.coords[0]),
                SweepAxis::DurationRadius => {
                    LoopSpec::new(center(cfg), p.coords[0], p.coords[1], cfg.phi0)
                }
            };
            let full = transfer_for_loop(&run, &lspec, Engine::Full)?;
            let fv = full.final_population(1).unwrap_or(f64::NAN);
            let rel = (fv - p.transfer).abs() / fv.abs().max(1e-300);
            worst = worst.max(rel);
            let mut row: Vec<String> = p.coords.iter().map(|&c| cell(c)).collect();
            row.push(cell(p.transfer));
            row.push(cell(fv));
            row.push(cell(rel));
            table.row(&row);
        }
        out.write("spot_checks.csv", &table.finish())?;
        summary.push_str(&format!("worst_rel_deviation = {worst:?}\n"));
    }
    out.write("sweep_summary.txt", &summary)?;
    write_manifest(&mut out, cfg, "sweep", started)?;

    if res.failed_points > 0 {
        return Err(CliError::PartialSweep(res.failed_points));
    }
    Ok(())
}
