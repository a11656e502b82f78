//! Subcommand pipelines. Each handler validates its inputs first (exit 3),
//! returns early on `--dry-run`, then computes (exit 4).

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde_json::{json, Value};
use twistlab::emission::{
    bound_state, default_eta, effective_couplings, evolve, fit_decay_rate, markov_rate, snapshot,
    EmitterPosition, EmitterSpec,
};
use twistlab::format::sig;
use twistlab::model::neighbor_table;
use twistlab::optics::{
    balanced_omega_b, feasibility, recoil_angular_frequency, write_potential_map, FeasibilityOptions,
    SchemeParams,
};
use twistlab::spectrum::{band_grid, band_metrics, bands, critical_ratio, DosResult, KPath};
use twistlab::{
    build_moire_cell, commensurate_angle, enumerate_angles, tile_lattice, Error, HoppingModel, MoireCell,
    TiledLattice,
};

use crate::args::{
    AngleArgs, AnglesArgs, BandsArgs, BoundArgs, CellArgs, Cli, Command, CouplingsArgs, CriticalArgs, EmitArgs,
    EmitterArgs, FeasibilityArgs, GridArgs, LaserArgs, ModelArgs, PotentialArgs, Scheme,
};
use crate::output::{write_atomic, Artifacts};

/// MHz/2π to rad/s.
const MHZ: f64 = 2.0 * PI * 1e6;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid parameter: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn invalid(e: Error) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(Failure::Validation(msg()))
    }
}

struct Ctx {
    dry_run: bool,
    out: Artifacts,
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let start = Instant::now();
    if let Some(t) = cli.threads {
        check(t > 0, || "--threads must be at least 1".into())?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(runtime)?;
    }
    if !cli.dry_run {
        std::fs::create_dir_all(&cli.out_dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    }
    let mut ctx = Ctx {
        dry_run: cli.dry_run,
        out: Artifacts::new(&cli.out_dir),
    };
    let name = cli.command.name();
    let result = match &cli.command {
        Command::Angles(a) => angles(a, &mut ctx),
        Command::Cell(a) => cell_cmd(a, &mut ctx),
        Command::Potential(a) => potential(a, &mut ctx),
        Command::Feasibility(a) => feasibility_cmd(a, &mut ctx),
        Command::Bands(a) => bands_cmd(a, &mut ctx),
        Command::Dos(a) => dos_cmd(a, &mut ctx),
        Command::Metrics(a) => metrics_cmd(a, &mut ctx),
        Command::Critical(a) => critical(a, &mut ctx),
        Command::Emit(a) => emit(a, &mut ctx),
        Command::Bound(a) => bound(a, &mut ctx),
        Command::Couplings(a) => couplings(a, &mut ctx),
    };
    let derived = match result {
        Ok(v) => v,
        Err(e) => {
            ctx.out.remove_all();
            return Err(e);
        }
    };
    let parameters = serde_json::to_value(cli).map_err(runtime)?;
    if cli.dry_run {
        let resolved = json!({ "subcommand": name, "parameters": parameters, "derived": derived });
        let text = serde_json::to_string_pretty(&resolved).map_err(runtime)?;
        let _ = writeln!(std::io::stdout(), "{text}");
        return Ok(());
    }
    let manifest = json!({
        "subcommand": name,
        "parameters": parameters,
        "artifacts": ctx.out.names(),
        "results": derived,
        "version": env!("CARGO_PKG_VERSION"),
        "duration_seconds": start.elapsed().as_secs_f64(),
    });
    let path = cli.out_dir.join(format!("{name}.manifest.json"));
    if let Err(e) = write_atomic(&path, &manifest) {
        ctx.out.remove_all();
        return Err(Failure::Runtime(format!("cannot write manifest {}: {e}", path.display())));
    }
    let _ = writeln!(std::io::stdout(), "{}", path.display());
    Ok(())
}

fn moire_cell(a: &AngleArgs) -> Result<MoireCell, Failure> {
    let angle = commensurate_angle(a.lattice.into(), a.m, a.n).map_err(invalid)?;
    build_moire_cell(angle).map_err(runtime)
}

fn hopping(m: &ModelArgs) -> Result<HoppingModel, Failure> {
    let model = m.model();
    model.validate().map_err(invalid)?;
    Ok(model)
}

/// `J`, or 1 when the intralayer hopping is switched off.
fn energy_unit(model: &HoppingModel) -> f64 {
    if model.j > 0.0 {
        model.j
    } else {
        1.0
    }
}

fn cell_summary(cell: &MoireCell) -> Value {
    json!({
        "theta_deg": cell.angle.degrees(),
        "m": cell.angle.m,
        "n": cell.angle.n,
        "sites": cell.site_count(),
        "coincidences": cell.coincidences.len(),
    })
}

fn angles(a: &AnglesArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let list = enumerate_angles(a.lattice.into(), a.max_index).map_err(invalid)?;
    if ctx.dry_run {
        return Ok(json!({ "count": list.len() }));
    }
    ctx.out
        .write(&a.out, |w| {
            writeln!(w, "m,n,theta_rad,theta_deg,sites")?;
            for t in &list {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    t.m,
                    t.n,
                    sig(t.theta, 9),
                    sig(t.degrees(), 9),
                    t.expected_site_count()
                )?;
            }
            Ok(())
        })
        .map_err(runtime)?;
    Ok(json!({ "count": list.len() }))
}

fn cell_cmd(a: &CellArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let model = hopping(&a.model)?;
    let cell = moire_cell(&a.angle)?;
    if ctx.dry_run {
        return Ok(cell_summary(&cell));
    }
    let table = neighbor_table(&cell, &model).map_err(runtime)?;
    ctx.out.write(&a.out, |w| cell.write_csv(w)).map_err(runtime)?;
    ctx.out
        .write(&a.bonds_out, |w| table.write_csv(w, energy_unit(&model)))
        .map_err(runtime)?;
    let mut summary = cell_summary(&cell);
    summary["interlayer_bonds"] = table.interlayer(&cell).count().into();
    summary["intralayer_bonds"] = table.intralayer(&cell).count().into();
    Ok(summary)
}

fn scheme_params(l: &LaserArgs) -> Result<SchemeParams, Failure> {
    let omega_a = l.omega * MHZ;
    let delta_a = l.delta_detuning * MHZ;
    let delta_b = l.delta_b.unwrap_or(l.delta_detuning) * MHZ;
    let omega_b = match l.omega_b {
        Some(o) => o * MHZ,
        None if matches!(l.scheme, Scheme::Turnout) => 0.0,
        None => balanced_omega_b(omega_a, delta_a, delta_b).map_err(invalid)?,
    };
    let required = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| Failure::Validation(format!("scheme {:?} needs --{flag}", l.scheme)))
    };
    let params = match l.scheme {
        Scheme::Ideal => SchemeParams::Ideal {
            omega_a,
            omega_b,
            delta_a,
            delta_b,
            delta_2ph: l.splitting * MHZ,
            gamma_g: l.gamma_g * MHZ,
        },
        Scheme::Hyperfine => SchemeParams::Hyperfine {
            omega_a,
            omega_b,
            delta_a,
            delta_b,
            delta_g: l.splitting * MHZ,
        },
        Scheme::FineStructure => SchemeParams::FineStructure {
            omega_p: required(l.omega_p, "omega-p")? * MHZ,
            delta_p: required(l.delta_p, "delta-p")? * MHZ,
            omega_a,
            omega_b,
            delta_a,
            delta_b,
            gamma_g: l.gamma_g * MHZ,
        },
        Scheme::Turnout => SchemeParams::Turnout {
            lambda1: required(l.lambda1, "lambda1")? * 1e-9,
            lambda2: required(l.lambda2, "lambda2")? * 1e-9,
            gamma_e: l.gamma_e * MHZ,
            delta: delta_a,
            omega: omega_a,
            lambda_m: l.lambda_m.map(|x| x * 1e-9),
        },
    };
    params.validate().map_err(invalid)?;
    Ok(params)
}

fn potential(a: &PotentialArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let params = scheme_params(&a.laser)?;
    check(matches!(a.laser.scheme, Scheme::Ideal | Scheme::Hyperfine), || {
        "potential maps are available for the ideal and hyperfine schemes".into()
    })?;
    check(a.grid >= 1, || "--grid must be at least 1".into())?;
    check(a.extent > 0.0 && a.extent.is_finite(), || "--extent must be positive".into())?;
    let angle = commensurate_angle(a.angle.lattice.into(), a.angle.m, a.angle.n).map_err(invalid)?;
    let summary = json!({ "theta_deg": angle.degrees(), "points": a.grid * a.grid });
    if ctx.dry_run {
        return Ok(summary);
    }
    let mut failure = None;
    ctx.out
        .write(&a.out, |w| {
            write_potential_map(w, &params, angle.theta, a.grid, a.extent).map_err(|e| {
                failure = Some(e.to_string());
                std::io::Error::other("potential map failed")
            })
        })
        .map_err(|e| Failure::Runtime(failure.take().unwrap_or_else(|| e.to_string())))?;
    Ok(summary)
}

fn feasibility_cmd(a: &FeasibilityArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let params = scheme_params(&a.laser)?;
    let e_r = match a.recoil_khz {
        Some(khz) => {
            check(khz > 0.0, || "--recoil-khz must be positive".into())?;
            khz * 2.0 * PI * 1e3
        }
        None => recoil_angular_frequency(a.mass_amu, a.wavelength_nm * 1e-9).map_err(invalid)?,
    };
    check(a.max_gamma_star_hz > 0.0, || "--max-gamma-star-hz must be positive".into())?;
    let d_nm = a.wavelength_nm / 2.0;
    let mut opts = FeasibilityOptions::new(e_r);
    opts.a_s = a.a_s_nm.map(|x| x / d_nm);
    opts.lz = a.lz_nm.map(|x| x / d_nm);
    opts.max_gamma_star = a.max_gamma_star_hz * 2.0 * PI;
    if ctx.dry_run {
        return Ok(json!({ "scheme": params.name(), "e_r_khz": e_r / (2.0 * PI * 1e3) }));
    }
    let report = feasibility(&params, &opts).map_err(runtime)?;
    let khz = |x: f64| x / (2.0 * PI * 1e3);
    let summary = json!({
        "scheme": report.scheme,
        "v_d_khz": khz(report.v_d),
        "e_r_khz": khz(report.e_r),
        "gamma_star_hz": report.gamma_star / (2.0 * PI),
        "trap_frequency_khz": report.omega_t.map(khz),
        "u_estimate_khz": report.u_estimate.map(khz),
        "eps_2ph": report.eps_2ph,
        "flags": report.flags,
    });
    let doc = json!({ "over_2pi": summary, "angular": report });
    ctx.out.write_json(&a.out, &doc).map_err(runtime)?;
    Ok(summary)
}

fn bands_cmd(a: &BandsArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let model = hopping(&a.model)?;
    check(a.kpoints >= 1, || "--kpoints must be at least 1".into())?;
    let cell = moire_cell(&a.angle)?;
    if ctx.dry_run {
        return Ok(cell_summary(&cell));
    }
    let path = KPath::standard(&cell, a.kpoints);
    let b = bands(&cell, &model, &path).map_err(runtime)?;
    ctx.out.write(&a.out, |w| b.write_csv(w, energy_unit(&model))).map_err(runtime)?;
    let mut summary = cell_summary(&cell);
    summary["bands"] = b.band_count().into();
    summary["samples"] = b.k.len().into();
    Ok(summary)
}

fn grid_setup(a: &GridArgs) -> Result<(MoireCell, HoppingModel), Failure> {
    let model = hopping(&a.model)?;
    check(a.nk >= 1, || "--nk must be at least 1".into())?;
    Ok((moire_cell(&a.angle)?, model))
}

fn dos_cmd(a: &GridArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let (cell, model) = grid_setup(a)?;
    check(model.j > 0.0, || "DOS binning needs J > 0".into())?;
    if ctx.dry_run {
        return Ok(cell_summary(&cell));
    }
    let grid = band_grid(&cell, &model, a.nk, 0.0).map_err(runtime)?;
    let d = DosResult::from_grid(&grid, energy_unit(&model)).map_err(runtime)?;
    let out = a.out.clone().unwrap_or_else(|| "dos.csv".into());
    ctx.out.write(&out, |w| d.write_csv(w, energy_unit(&model))).map_err(runtime)?;
    let mut summary = cell_summary(&cell);
    summary["total_counts"] = d.total().into();
    summary["bin_width"] = d.bin_width.into();
    Ok(summary)
}

fn metrics_cmd(a: &GridArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let (cell, model) = grid_setup(a)?;
    if ctx.dry_run {
        return Ok(cell_summary(&cell));
    }
    let grid = band_grid(&cell, &model, a.nk, 0.0).map_err(runtime)?;
    let m = band_metrics(&cell, &grid);
    let out = a.out.clone().unwrap_or_else(|| "metrics.json".into());
    ctx.out.write_json(&out, &m).map_err(runtime)?;
    let mut summary = cell_summary(&cell);
    summary["isolated_top"] = m.isolated_top.into();
    summary["top_gap"] = grid.top_gap().into();
    summary["touchings"] = serde_json::to_value(&m.touchings).map_err(runtime)?;
    Ok(summary)
}

fn critical(a: &CriticalArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let model = hopping(&a.model)?;
    check(a.nk >= 1, || "--nk must be at least 1".into())?;
    check(a.lo < a.hi && a.lo.is_finite() && a.hi.is_finite(), || {
        format!("need --lo < --hi, got {} and {}", a.lo, a.hi)
    })?;
    check(a.tol > 0.0, || "--tol must be positive".into())?;
    let cell = moire_cell(&a.angle)?;
    if ctx.dry_run {
        return Ok(cell_summary(&cell));
    }
    let ratio = critical_ratio(&cell, &model, (a.lo, a.hi), a.tol, a.nk).map_err(runtime)?;
    let mut summary = cell_summary(&cell);
    summary["critical_jperp_over_j"] = ratio.into();
    summary["tol"] = a.tol.into();
    summary["nk"] = a.nk.into();
    ctx.out.write_json(&a.out, &summary).map_err(runtime)?;
    Ok(summary)
}

fn bath(angle: &AngleArgs, model: &ModelArgs, e: &EmitterArgs) -> Result<(TiledLattice, HoppingModel, EmitterSpec), Failure> {
    let model = hopping(model)?;
    let cell = moire_cell(angle)?;
    let spec = EmitterSpec {
        attach: e.attach,
        ..EmitterSpec::new(e.g, e.delta)
    };
    spec.attach_site(&cell).map_err(invalid)?;
    check(e.cells >= 1, || "--cells must be at least 1".into())?;
    let lattice = tile_lattice(&cell, e.cells).map_err(invalid)?;
    Ok((lattice, model, spec))
}

fn emit(a: &EmitArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let (lattice, model, spec) = bath(&a.angle, &a.model, &a.emitter)?;
    let tmax = a.tmax.unwrap_or(a.emitter.cells as f64 / 2.0);
    check(a.dt > 0.0 && a.dt.is_finite(), || "--dt must be positive".into())?;
    check(tmax >= 0.0 && tmax.is_finite(), || "--tmax must be non-negative".into())?;
    check(a.nk >= 1, || "--nk must be at least 1".into())?;
    let mut summary = cell_summary(&lattice.cell);
    summary["bath_sites"] = lattice.len().into();
    summary["tmax"] = tmax.into();
    if ctx.dry_run {
        return Ok(summary);
    }
    let run = evolve(&lattice, &model, &spec, a.dt, tmax).map_err(runtime)?;
    let snap = snapshot(&run, &lattice).map_err(runtime)?;
    ctx.out.write(&a.out, |w| run.write_csv(w)).map_err(runtime)?;
    ctx.out.write(&a.snapshot_out, |w| snap.write_csv(w)).map_err(runtime)?;

    let eta = default_eta(energy_unit(&model), a.nk);
    let gamma = markov_rate(&lattice.cell, &model, &spec, eta, a.nk).map_err(runtime)?;
    let pops = run.populations();
    let t_fit = if gamma > 0.0 { (2.0 / gamma).min(tmax) } else { tmax };
    let fit = fit_decay_rate(&run.times, &pops, t_fit);
    summary["norm_drift"] = run.norm_drift.into();
    summary["final_population"] = pops.last().copied().into();
    summary["golden_rule_rate"] = gamma.into();
    summary["fitted_rate"] = fit.map(|f| f.0).into();
    summary["fit_r2"] = fit.map(|f| f.1).into();
    summary["snapshot_anisotropy"] = snap.anisotropy.into();
    summary["bath_probability"] = snap.bath_probability.into();
    Ok(summary)
}

fn bound(a: &BoundArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let (lattice, model, spec) = bath(&a.angle, &a.model, &a.emitter)?;
    let mut summary = cell_summary(&lattice.cell);
    summary["bath_sites"] = lattice.len().into();
    if ctx.dry_run {
        return Ok(summary);
    }
    let b = bound_state(&lattice, &model, &spec).map_err(runtime)?;
    let origin = spec.tiled_site(&lattice).map_err(runtime)?;
    ctx.out
        .write(&a.out, |w| {
            writeln!(w, "x,y,layer,prob")?;
            for (i, c) in b.field.iter().enumerate() {
                let r = lattice.displacement(origin, i);
                writeln!(w, "{},{},{},{}", sig(r.x, 9), sig(r.y, 9), lattice.layer(i), sig(c.norm_sqr(), 9))?;
            }
            Ok(())
        })
        .map_err(runtime)?;
    summary["energy"] = b.energy.into();
    summary["emitter_weight"] = b.emitter_weight.into();
    summary["xi_over_diagonal"] = b.xi.into();
    summary["fit_r2"] = b.fit_r2.into();
    summary["anisotropy"] = b.anisotropy.into();
    Ok(summary)
}

fn parse_positions(s: &str, default_site: usize) -> Result<Vec<EmitterPosition>, Failure> {
    s.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let parts: Vec<&str> = p.split(',').map(str::trim).collect();
            let bad = || Failure::Validation(format!("position `{p}` is not `c1,c2[,site]`"));
            if !(2..=3).contains(&parts.len()) {
                return Err(bad());
            }
            let c1 = parts[0].parse::<i64>().map_err(|_| bad())?;
            let c2 = parts[1].parse::<i64>().map_err(|_| bad())?;
            let site = match parts.get(2) {
                Some(x) => x.parse::<usize>().map_err(|_| bad())?,
                None => default_site,
            };
            Ok(EmitterPosition { cell: [c1, c2], site })
        })
        .collect()
}

fn couplings(a: &CouplingsArgs, ctx: &mut Ctx) -> Result<Value, Failure> {
    let model = hopping(&a.model)?;
    let cell = moire_cell(&a.angle)?;
    check(a.emitter.cells >= 1, || "--cells must be at least 1".into())?;
    check(a.emitter.g.is_finite() && a.emitter.delta.is_finite(), || "g and delta must be finite".into())?;
    let positions = parse_positions(&a.positions, cell.coincidence_site())?;
    check(!positions.is_empty(), || "need at least one position".into())?;
    for p in &positions {
        EmitterSpec::new(a.emitter.g, a.emitter.delta)
            .at(p.site)
            .attach_site(&cell)
            .map_err(invalid)?;
    }
    let eta = a.eta.unwrap_or_else(|| default_eta(energy_unit(&model), a.emitter.cells));
    check(eta > 0.0 && eta.is_finite(), || format!("--eta must be positive, got {eta}"))?;
    let mut summary = cell_summary(&cell);
    summary["positions"] = positions.len().into();
    summary["eta"] = eta.into();
    if ctx.dry_run {
        return Ok(summary);
    }
    let m = effective_couplings(&cell, &model, a.emitter.g, a.emitter.delta, &positions, a.emitter.cells, eta)
        .map_err(runtime)?;
    ctx.out.write(&a.out, |w| m.write_csv(w, &cell, energy_unit(&model))).map_err(runtime)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_default_to_given_site() {
        let p = parse_positions("0,0; 1,-1,3", 7).unwrap();
        assert_eq!(p[0], EmitterPosition { cell: [0, 0], site: 7 });
        assert_eq!(p[1], EmitterPosition { cell: [1, -1], site: 3 });
        assert!(parse_positions("1", 0).is_err());
        assert!(parse_positions("a,b", 0).is_err());
    }
}
