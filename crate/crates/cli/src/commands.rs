//! The four subcommands. Each reads a validated [`RunConfig`] and writes its
//! files into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use heavyq_core::base_solver::{solve_base, BaseSolution};
use heavyq_core::correction::{geometric_grid, Analysis, ApproxOutput, GRID_LEVEL, GRID_POINTS};
use heavyq_core::model::stability_report;
use heavyq_core::oracle::{exact_solve, simulate_replications, SimConfig};
use heavyq_core::polyalg::C;
use heavyq_core::precision::Precision;
use thiserror::Error;

use crate::config::{ConfigError, GridSpec, Reference, RunConfig};
use crate::output::{fmt_num, write_csv};

/// Base survival band defining the tail grid of the error table.
pub const TAIL_BAND: (f64, f64) = (1e-2, 1e-5);
pub const TAIL_POINTS: usize = 40;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] heavyq_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {msg}")]
    Output { path: PathBuf, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
            CliError::Output { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn precision() -> Result<Precision> {
    match std::env::var(heavyq_core::precision::PRECISION_ENV) {
        Err(_) => Ok(Precision::Double),
        Ok(v) if v.eq_ignore_ascii_case("extended") => Ok(Precision::Extended),
        Ok(v) if v.is_empty() || v.eq_ignore_ascii_case("double") => Ok(Precision::Double),
        Ok(v) => Err(CliError::Usage(format!("HEAVYQ_PRECISION must be 'double' or 'extended', got '{v}'"))),
    }
}

pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
}

fn join(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Output { path: path.to_path_buf(), msg: e.to_string() })
}

fn complex(z: C) -> String {
    format!("{} {}", fmt_num(z.re), fmt_num(z.im))
}

fn header(cfg: &RunConfig, cmd: &str) -> String {
    let name = cfg.entries.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let prec = match precision() {
        Ok(Precision::Extended) => "extended",
        _ => "double",
    };
    format!("heavyq {cmd}\nconfig: {name}\nprecision: {prec}\n")
}

impl<'a> Run<'a> {
    fn prepare(&self) -> Result<()> {
        precision()?;
        fs::create_dir_all(self.out).map_err(|e| CliError::Output { path: self.out.to_path_buf(), msg: e.to_string() })
    }

    fn analysis(&self) -> Result<Analysis> {
        let model = self.cfg.build_model()?;
        let pt = self.cfg.build_service()?;
        let ht = self.cfg.build_heavy()?;
        Ok(Analysis::new(&model, &pt, ht)?)
    }

    fn grid(&self, auto: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        self.cfg.grid.resolve(auto)
    }

    /// Base model: roots, u, transform factors and the survival on the grid.
    pub fn solve(&self) -> Result<String> {
        self.prepare()?;
        let model = self.cfg.build_model()?;
        let pt = self.cfg.build_service()?;
        let rep = stability_report(&model, pt.mean)?;
        if !rep.is_stable() {
            return Err(heavyq_core::Error::Unstable { margin: rep.margin, load: rep.load }.into());
        }
        let sol = solve_base(&model, &pt)?;
        let grid = self.grid(|| geometric_grid(sol.horizon(GRID_LEVEL), GRID_POINTS));
        let mut r = header(self.cfg, "solve");
        let _ = writeln!(r, "states: {}", model.n_states);
        let _ = writeln!(r, "real arrival fraction: {}", fmt_num(model.real_fraction()));
        let _ = writeln!(r, "mean service: {}", fmt_num(pt.mean));
        let _ = writeln!(r, "base load: {}", fmt_num(rep.load));
        let _ = writeln!(r, "base margin: {}", fmt_num(rep.margin));
        let mut load = rep.load;
        if self.cfg.heavy.is_some() {
            let ht = self.cfg.build_heavy()?;
            let mean = (1.0 - self.cfg.eps) * pt.mean + self.cfg.eps * ht.mean();
            let mix = stability_report(&model, mean)?;
            let _ = writeln!(r, "heavy tail: {}", ht.describe());
            let _ = writeln!(r, "eps: {}", fmt_num(self.cfg.eps));
            let _ = writeln!(r, "mixture load: {}", fmt_num(mix.load));
            let _ = writeln!(r, "mixture margin: {}", fmt_num(mix.margin));
            load = mix.load;
        }
        let _ = writeln!(r, "stationary law: {}", model.pi.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(" "));
        base_section(&mut r, &sol);
        write_text(&join(self.out, "report.txt"), &r)?;
        let rows: Vec<Vec<String>> = grid.iter().map(|&t| vec![fmt_num(t), fmt_num(sol.survival(t))]).collect();
        write_csv(&join(self.out, "survival.csv"), &["t", "survival"], &rows)?;
        Ok(format!(
            "load {:.6}, {} roots in the right half-plane (one at zero), P(W = 0) = {:.6}",
            load,
            sol.rho.len(),
            sol.atom()
        ))
    }

    /// Corrected and simplified approximations, one CSV per variant.
    pub fn approx(&self) -> Result<String> {
        self.prepare()?;
        let a = self.analysis()?;
        let grid = self.grid(|| a.default_grid());
        let mut r = header(self.cfg, "approx");
        let _ = writeln!(r, "eps: {}", fmt_num(self.cfg.eps));
        let _ = writeln!(r, "heavy tail: {}", a.ht.describe());
        base_section(&mut r, &a.base);
        let mut summary = Vec::new();
        for &v in &self.cfg.variants {
            let out = a.approximate(self.cfg.eps, &grid, v, self.cfg.simplified)?;
            write_approx(&join(self.out, &format!("approx_{}.csv", v.name())), &out)?;
            let _ = writeln!(r, "[{}]", v.name());
            let _ = writeln!(r, "prefactor eps/(u.omega): {}", fmt_num(out.prefactor));
            let _ = writeln!(r, "largest imaginary residue: {}", fmt_num(out.max_imag));
            if let Some(g) = out.simplification_gap() {
                let _ = writeln!(r, "max |corrected - simplified|: {}", fmt_num(g));
                summary.push(format!("{}: gap {:.5}", v.name(), g));
            } else {
                summary.push(format!("{}: simplified only", v.name()));
            }
        }
        write_text(&join(self.out, "report.txt"), &r)?;
        Ok(format!("{} grid points; {}", grid.len(), summary.join(", ")))
    }

    /// Error table against the reference, plus plot-ready curves.
    pub fn compare(&self) -> Result<String> {
        self.prepare()?;
        let a = self.analysis()?;
        let grid = self.grid(|| a.default_grid());
        let (lo, hi) = (a.base.horizon(TAIL_BAND.0), a.base.horizon(TAIL_BAND.1));
        let tail: Vec<f64> =
            (0..TAIL_POINTS).map(|i| lo * (hi / lo).powf(i as f64 / (TAIL_POINTS - 1) as f64)).collect();
        let eps = self.cfg.eps;
        let exact = match self.cfg.reference {
            Reference::Exact => {
                let ex = exact_solve(&a.model, &a.base, a.ht.clone(), eps, None)?;
                Some((ex.survival_grid(&grid)?, ex.survival_grid(&tail)?))
            }
            Reference::Corrected => None,
        };
        let mut table = Vec::new();
        let mut curves: Vec<Vec<f64>> = Vec::new();
        let mut names = vec!["t".to_string()];
        let mut lines = Vec::new();
        for &v in &self.cfg.variants {
            let on_grid = a.approximate(eps, &grid, v, false)?;
            let on_tail = a.approximate(eps, &tail, v, false)?;
            let corr = on_grid.corrected.clone().unwrap();
            let corr_tail = on_tail.corrected.clone().unwrap();
            let (ref_grid, ref_tail) = match &exact {
                Some((g, t)) => (g.clone(), t.clone()),
                None => (corr.clone(), corr_tail.clone()),
            };
            let abs = |x: &[f64]| x.iter().zip(&ref_grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let rel = |x: &[f64]| x.iter().zip(&ref_tail).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
            let row = [
                on_grid.simplification_gap().unwrap(),
                abs(&corr),
                rel(&corr_tail),
                abs(&on_grid.simplified),
                rel(&on_tail.simplified),
                abs(&on_grid.base),
                rel(&on_tail.base),
            ];
            lines.push(format!(
                "{}: corrected {:.2}% / simplified {:.2}% tail error",
                v.name(),
                100.0 * row[2],
                100.0 * row[4]
            ));
            table.push(std::iter::once(v.name().to_string()).chain(row.iter().map(|&x| fmt_num(x))).collect());
            if curves.is_empty() {
                curves.push(grid.clone());
                curves.push(ref_grid.clone());
                names.push("reference".into());
            }
            for (label, col) in [("base", on_grid.base), ("corrected", corr), ("simplified", on_grid.simplified)] {
                names.push(format!("{label}_{}", v.name()));
                curves.push(col);
            }
        }
        write_csv(
            &join(self.out, "compare.csv"),
            &[
                "variant",
                "corrected_vs_simplified_max_abs",
                "corrected_max_abs",
                "corrected_tail_rel",
                "simplified_max_abs",
                "simplified_tail_rel",
                "base_max_abs",
                "base_tail_rel",
            ],
            &table,
        )?;
        let rows: Vec<Vec<String>> =
            (0..grid.len()).map(|i| curves.iter().map(|c| fmt_num(c[i])).collect()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        write_csv(&join(self.out, "curves.csv"), &names, &rows)?;
        let mut r = header(self.cfg, "compare");
        let _ = writeln!(r, "eps: {}", fmt_num(eps));
        let _ = writeln!(
            r,
            "reference: {}",
            match self.cfg.reference {
                Reference::Exact => "exact (transform inversion)",
                Reference::Corrected => "corrected",
            }
        );
        let _ = writeln!(r, "tail grid: {} points on [{}, {}]", TAIL_POINTS, fmt_num(lo), fmt_num(hi));
        for l in &lines {
            let _ = writeln!(r, "{l}");
        }
        write_text(&join(self.out, "report.txt"), &r)?;
        Ok(lines.join("; "))
    }

    /// Monte-Carlo estimate of the mixture model's delay survival.
    pub fn simulate(&self) -> Result<String> {
        self.prepare()?;
        let model = self.cfg.build_model()?;
        let pt = self.cfg.build_service()?;
        let ht = self.cfg.build_heavy()?;
        let grid = match &self.cfg.grid {
            GridSpec::Auto => geometric_grid(solve_base(&model, &pt)?.horizon(1e-3), 41),
            g => g.resolve(Vec::new),
        };
        let reps = self.cfg.sim_replications;
        if self.cfg.sim_customers < reps * 10_000 {
            return Err(ConfigError {
                path: self.cfg.entries.path.clone(),
                line: self.cfg.entries.line("sim.customers"),
                msg: format!("sim.customers must be at least 10000 per replication ({reps} replications)"),
            }
            .into());
        }
        let res = simulate_replications(
            &model,
            &pt,
            ht.as_ref(),
            self.cfg.eps,
            &grid,
            SimConfig::new(self.cfg.sim_customers, self.cfg.seed),
            reps,
        )?;
        let rows: Vec<Vec<String>> = (0..grid.len())
            .map(|i| vec![fmt_num(grid[i]), fmt_num(res.survival[i]), fmt_num(res.std_err[i])])
            .collect();
        write_csv(&join(self.out, "simulation.csv"), &["t", "survival", "std_err"], &rows)?;
        let mut r = header(self.cfg, "simulate");
        let _ = writeln!(r, "eps: {}", fmt_num(self.cfg.eps));
        let _ = writeln!(r, "customers: {} in {} replications", res.n_customers, reps);
        let _ = writeln!(r, "seed: {}", self.cfg.seed);
        write_text(&join(self.out, "report.txt"), &r)?;
        Ok(format!("{} customers, {} replications", res.n_customers, reps))
    }
}

fn base_section(r: &mut String, sol: &BaseSolution) {
    let _ = writeln!(r, "roots with nonnegative real part:");
    for &z in &sol.rho {
        let _ = writeln!(r, "  {}", complex(z));
    }
    let _ = writeln!(r, "left roots of the cleared determinant:");
    for &(z, m) in &sol.den_roots.roots {
        let _ = writeln!(r, "  {} x{m}", complex(z));
    }
    let _ = writeln!(r, "transform zeros:");
    for &(z, m) in &sol.num_roots.roots {
        let _ = writeln!(r, "  {} x{m}", complex(z));
    }
    let _ = writeln!(r, "u: {}", sol.u.iter().map(|&z| complex(z)).collect::<Vec<_>>().join(", "));
    let _ = writeln!(r, "u.omega: {}", complex(sol.uw));
    let _ = writeln!(r, "P(W = 0): {}", fmt_num(sol.atom()));
}

pub const APPROX_HEADER: [&str; 6] = ["t", "base", "theta1", "theta2", "corrected", "simplified"];

fn write_approx(path: &Path, out: &ApproxOutput) -> Result<()> {
    let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map_or(String::new(), |v| fmt_num(v[i]));
    let rows: Vec<Vec<String>> = (0..out.grid.len())
        .map(|i| {
            vec![
                fmt_num(out.grid[i]),
                fmt_num(out.base[i]),
                fmt_num(out.theta1[i]),
                opt(&out.theta2, i),
                opt(&out.corrected, i),
                fmt_num(out.simplified[i]),
            ]
        })
        .collect();
    write_csv(path, &APPROX_HEADER, &rows)
}

pub fn apply_overrides(
    cfg: &mut RunConfig,
    eps: Option<&str>,
    variant: Option<&str>,
    simplified: bool,
    seed: Option<u64>,
) -> Result<()> {
    if let Some(e) = eps {
        cfg.eps = crate::config::parse_number(e).ok_or_else(|| CliError::Usage(format!("--eps: cannot read '{e}'")))?;
    }
    if let Some(v) = variant {
        cfg.variants = crate::config::parse_variants(v)
            .ok_or_else(|| CliError::Usage(format!("--variant: expected replace, discard or both, got '{v}'")))?;
    }
    cfg.simplified |= simplified;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(())
}
