use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mixvar::coercivity::{mean_coercivity_fit, theta_estimate, ThetaOptions};
use mixvar::container::save_field;
use mixvar::envelope::{tabulate_envelope, EnvelopeOptions, EnvelopeTable};
use mixvar::smoothness::Rect;
use mixvar::solver::{relax_compare, solve_dirichlet, DirichletProblem, RelaxOptions, SolveOptions};
use mixvar::youngmeasure::{
    empirical_measure, jensen_gap, moments, random_generator, scale_and_tile, sliced_w1, EmpiricalMeasure,
};
use mixvar::Grid;
use serde::Serialize;
use serde_json::json;

use crate::config::{self, Resolved, RunConfig};
use crate::CliError;

fn bad(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("config field `{field}`: {reason}"))
}

/// Argument errors from the library are validation failures; everything
/// else is numerical.
fn classify(e: mixvar::Error) -> CliError {
    use mixvar::Error as E;
    match e {
        E::InvalidArgument { .. } | E::StencilTooWide { .. } | E::UnknownIntegrand(_) | E::MissingGrowth { .. } => {
            CliError::Validation(e.to_string())
        }
        E::Io(io) => CliError::Io(io),
        other => CliError::Numerical(other.to_string()),
    }
}

/// Writes `manifest` next to the outputs when `result` is a numerical failure.
fn with_manifest<T>(
    result: Result<T, CliError>,
    manifest: &Path,
    subcommand: &str,
    hash: &str,
    partial: &[PathBuf],
) -> Result<T, CliError> {
    if let Err(CliError::Numerical(msg)) = &result {
        let body = json!({
            "status": "numerical_failure",
            "subcommand": subcommand,
            "error": msg,
            "config_hash": hash,
            "partial_artifacts": partial,
        });
        write_json(manifest, &body)?;
    }
    result
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.into()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// CSV preceded by a `# config_sha256=` comment line.
fn write_csv(path: &Path, hash: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# config_sha256={hash}")?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_measure(path: &Path, hash: &str, nu: &EmpiricalMeasure) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# config_sha256={hash}")?;
    nu.write_csv(file).map_err(classify)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn envelope_options(r: &Resolved) -> Result<(mixvar::envelope::Lattice, EnvelopeOptions), CliError> {
    let sec = r.config.envelope.clone().unwrap_or_default();
    let lattice = sec.lattice.clone().ok_or_else(|| bad("envelope.lattice", "required"))?;
    lattice.validate().map_err(|e| bad("envelope.lattice", e))?;
    if lattice.dim() != r.integrand.dim() {
        return Err(bad("envelope.lattice", format!("needs {} coordinates (n·m)", r.integrand.dim())));
    }
    let opts = EnvelopeOptions {
        resolution: sec.resolution,
        multistart: sec.multistart,
        tol: sec.tol,
        seed: r.seed,
        max_iter: sec.max_iter,
        threads: r.config.threads,
        ..Default::default()
    };
    Ok((lattice, opts))
}

pub fn envelope(config: &Path, out: &Path) -> Result<(), CliError> {
    let r = config::load(config)?.resolve()?;
    let (lattice, opts) = envelope_options(&r)?;
    let manifest = out.with_extension("failure.json");
    let summary = out.with_extension("json");
    let result = tabulate_envelope(&r.integrand, &r.a, &lattice, &opts).map_err(classify);
    let mut table = with_manifest(result, &manifest, "envelope", &r.hash, &[])?;
    table.header.config_hash = Some(r.hash.clone());
    table.save(out).map_err(classify)?;
    let failed = table.failures();
    let (lo, hi) = table.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    write_json(
        &summary,
        &json!({
            "config_hash": r.hash,
            "config": r.config,
            "table": out,
            "nodes": table.values.len(),
            "failed_nodes": failed,
            "min": lo,
            "max": hi,
        }),
    )?;
    if failed > 0 {
        let msg = format!("{failed} lattice nodes did not converge; they hold the upper estimate F(V)");
        return with_manifest(
            Err(CliError::Numerical(msg)),
            &manifest,
            "envelope",
            &r.hash,
            &[out.to_path_buf(), summary],
        );
    }
    Ok(())
}

fn parse_t(spec: &str) -> Result<Vec<f64>, CliError> {
    let err = || CliError::Validation(format!("argument `--t`: expected start:stop:count, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, stop, count] = parts.as_slice() else { return Err(err()) };
    let (start, stop): (f64, f64) = (start.parse().map_err(|_| err())?, stop.parse().map_err(|_| err())?);
    let count: usize = count.parse().map_err(|_| err())?;
    if count < 2 || !(stop > start) {
        return Err(err());
    }
    Ok((0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect())
}

pub fn coerce(config: &Path, out: &Path, q: Option<f64>, t: Option<&str>) -> Result<(), CliError> {
    let mut cfg: RunConfig = config::load(config)?;
    let mut sec = cfg.coerce.clone().unwrap_or_default();
    if let Some(q) = q {
        sec.q = Some(q);
    }
    if let Some(t) = t {
        sec.t = Some(parse_t(t)?);
    }
    cfg.coerce = Some(sec.clone());
    let r = cfg.resolve()?;
    let q = sec.q.ok_or_else(|| bad("coerce.q", "required (or pass --q)"))?;
    let t = sec.t.clone().ok_or_else(|| bad("coerce.t", "required (or pass --t)"))?;
    out_dir(out)?;
    let opts = ThetaOptions {
        resolution: sec.resolution,
        multistart: sec.multistart,
        seed: r.seed,
        tol: sec.tol,
        max_iter: sec.max_iter,
        domain: (r.domain != Rect::cube(r.a.dim())).then(|| r.domain.clone()),
        threads: r.config.threads,
        ..Default::default()
    };
    let manifest = out.join("failure.json");
    let result = theta_estimate(&r.integrand, &r.a, q, &t, &opts).map_err(classify);
    let curve = with_manifest(result, &manifest, "coerce", &r.hash, &[])?;
    let theta_csv = out.join("theta.csv");
    write_csv(
        &theta_csv,
        &r.hash,
        &["t", "theta_hat", "feasibility_gap", "iterations", "inherited"],
        curve.points.iter().map(|p| {
            vec![num(p.t), num(p.theta_hat), num(p.feasibility_gap), p.iterations.to_string(), p.inherited.to_string()]
        }),
    )?;
    let fit = mean_coercivity_fit(&curve, sec.c_min).map_err(classify)?;
    write_json(
        &out.join("coerce.json"),
        &json!({
            "config_hash": r.hash,
            "config": r.config,
            "curve": curve,
            "convexity_defect": curve.convexity_defect(),
            "fit": fit,
        }),
    )
}

fn problem(r: &Resolved) -> Result<DirichletProblem, CliError> {
    Ok(DirichletProblem {
        a: r.a.clone(),
        domain: r.domain.clone(),
        integrand: r.integrand.clone(),
        datum: r.datum()?,
        p: r.p(),
        resolution: r.resolution()?,
    })
}

pub fn solve(config: &Path, out: &Path) -> Result<(), CliError> {
    let r = config::load(config)?.resolve()?;
    let prob = problem(&r)?;
    prob.grid().map_err(classify)?;
    let opts: SolveOptions = r.config.solve.clone().unwrap_or_default().options(r.seed);
    out_dir(out)?;
    let manifest = out.join("failure.json");
    let result = solve_dirichlet(&prob, &opts).map_err(classify);
    let sol = with_manifest(result, &manifest, "solve", &r.hash, &[])?;
    save_field(out.join("u.field"), &sol.u, Some(&r.hash)).map_err(classify)?;
    write_csv(
        &out.join("trace.csv"),
        &r.hash,
        &["step", "energy", "grad_norm"],
        sol.trace
            .energies
            .iter()
            .zip(&sol.trace.grad_norms)
            .enumerate()
            .map(|(k, (e, g))| vec![k.to_string(), num(*e), num(*g)]),
    )?;
    let mut snapshots = Vec::new();
    for (step, field) in &sol.trace.snapshots {
        let path = out.join(format!("snapshot_{step:06}.csv"));
        write_measure(&path, &r.hash, &empirical_measure(field))?;
        snapshots.push(path);
    }
    let d = sol.u.a_gradient().map_err(classify)?;
    let (barycentre, p_moment) = moments(&empirical_measure(&d), prob.p);
    write_json(
        &out.join("solve.json"),
        &json!({
            "config_hash": r.hash,
            "config": r.config,
            "energy": sol.energy,
            "iterations": sol.trace.iterations,
            "termination": sol.trace.termination,
            "final_grad_norm": sol.trace.grad_norms.last(),
            "barycentre": barycentre,
            "p_moment": p_moment,
            "snapshots": snapshots,
        }),
    )
}

pub fn relax(config: &Path, table: &Path, levels: Option<usize>, out: &Path) -> Result<(), CliError> {
    let mut cfg: RunConfig = config::load(config)?;
    let mut sec = cfg.relax.clone().unwrap_or_default();
    if let Some(l) = levels {
        sec.levels = Some(l);
    }
    let levels = sec.levels.unwrap_or(3);
    sec.levels = Some(levels);
    cfg.relax = Some(sec.clone());
    let r = cfg.resolve()?;
    let table = EnvelopeTable::load(table)
        .map_err(|e| CliError::Validation(format!("argument `--table`: cannot load {}: {e}", table.display())))?;
    if table.header.a != r.a || table.header.n != r.integrand.n() || table.header.m != r.integrand.m() {
        return Err(CliError::Validation("argument `--table`: table was built for a different a or shape".into()));
    }
    let prob = problem(&r)?;
    let opts = RelaxOptions {
        solve: SolveOptions {
            tol: sec.tol,
            max_iter: sec.max_iter,
            restarts: 0,
            perturbation: sec.perturbation,
            seed: r.seed,
            snapshot_every: 0,
        },
        restarts: sec.restarts,
        warm_perturbation: sec.warm_perturbation,
        gap_tol: sec.gap_tol,
    };
    out_dir(out)?;
    let manifest = out.join("failure.json");
    let result = relax_compare(&prob, &table, levels, &opts).map_err(|e| match e {
        mixvar::Error::OutsideHull { .. } => {
            CliError::Numerical(format!("{e}; extend the table lattice to cover the encountered gradients"))
        }
        other => classify(other),
    });
    let report = with_manifest(result, &manifest, "relax", &r.hash, &[])?;
    write_csv(
        &out.join("relax.csv"),
        &r.hash,
        &["level", "E_F", "E_QF", "gap", "grad_norm", "wallclock"],
        report.csv_rows().into_iter().map(|row| row.to_vec()),
    )?;
    write_json(
        &out.join("relax.json"),
        &json!({
            "config_hash": r.hash,
            "config": r.config,
            "table_config_hash": table.header.config_hash,
            "no_relaxation_gap_detected": report.no_gap_detected,
            "report": report,
        }),
    )
}

#[derive(Serialize)]
struct ScaleEntry {
    generator: usize,
    j: u32,
    tiles: usize,
    covered_fraction: f64,
    barycentre: Vec<f64>,
    p_moment: f64,
    sliced_w1_to_generator: f64,
    jensen_gap: Option<f64>,
    measure: PathBuf,
}

pub fn ym(config: &Path, out: &Path, table: Option<&Path>) -> Result<(), CliError> {
    let r = config::load(config)?.resolve()?;
    let sec = r.config.ym.clone().unwrap_or_default();
    let target_counts = match &sec.target_resolution {
        Some(t) => t.clone(),
        None => r.resolution().map_err(|_| bad("ym.target_resolution", "required when `resolution` is absent"))?,
    };
    let target = Grid::new(r.a.clone(), r.domain.clone(), target_counts).map_err(|e| bad("ym.target_resolution", e))?;
    let gen_grid = Grid::cube(r.a.clone(), sec.generator_resolution).map_err(|e| bad("ym.generator_resolution", e))?;
    let p = sec.p.unwrap_or(r.integrand.growth().p);
    let table = match table {
        Some(path) => Some(EnvelopeTable::load(path).map_err(|e| {
            CliError::Validation(format!("argument `--table`: cannot load {}: {e}", path.display()))
        })?),
        None => None,
    };
    out_dir(out)?;
    let manifest = out.join("failure.json");
    let mut entries = Vec::new();
    let mut written = Vec::new();
    let run = (|| -> Result<(), CliError> {
        for g in 0..sec.generators {
            let phi = random_generator(&gen_grid, r.config.n, sec.amplitude, r.seed.wrapping_add(g as u64))
                .map_err(classify)?;
            let base = empirical_measure(&phi.a_gradient().map_err(classify)?);
            for &j in &sec.scales {
                let tiled = scale_and_tile(&phi, j, &target).map_err(classify)?;
                let nu = empirical_measure(&tiled.field.a_gradient().map_err(classify)?);
                let (barycentre, p_moment) = moments(&nu, p);
                let w1 = sliced_w1(&nu, &base, sec.directions, r.seed).map_err(classify)?;
                let gap = match &table {
                    Some(t) => Some(jensen_gap(&nu, &r.integrand, t).map_err(classify)?),
                    None => None,
                };
                let path = out.join(format!("measure_g{g}_j{j}.csv"));
                write_measure(&path, &r.hash, &nu)?;
                written.push(path.clone());
                entries.push(ScaleEntry {
                    generator: g,
                    j,
                    tiles: tiled.boxes.len(),
                    covered_fraction: tiled.covered_fraction,
                    barycentre,
                    p_moment,
                    sliced_w1_to_generator: w1,
                    jensen_gap: gap,
                    measure: path,
                });
            }
        }
        Ok(())
    })();
    with_manifest(run, &manifest, "ym", &r.hash, &written)?;
    write_json(&out.join("ym.json"), &json!({ "config_hash": r.hash, "config": r.config, "p": p, "scales": entries }))
}
