//! Command implementations: build inputs from the config, run the core
//! pipelines, write JSON-lines/CSV/JSON outputs with the config hash in
//! every metadata header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use manifold_roller_core::connection::ConnectionRuleKind;
use manifold_roller_core::frame::{Frame, OrthogonalMatrix};
use manifold_roller_core::integrals::{
    ito_integral, quadratic_variation, stratonovich_integral, OneFormProcess, TwoTensorProcess,
};
use manifold_roller_core::io as pathio;
use manifold_roller_core::manifold::{
    exp_map, log_map, CutLocusPolicy, ManifoldKind, Point,
};
use manifold_roller_core::martingale::{MonteCarloConfig, SphereMartingaleExperiment};
use manifold_roller_core::path::{
    gen_brownian_with, gen_compound_poisson_with, refine_bridge, superpose, uniform_grid,
    DriverPath, RngConfig, RolledPath,
};
use manifold_roller_core::frame::transport_frame;
use manifold_roller_core::rolling::{
    antidevelop, convergence_study, develop, driver_sup_gap, horizontal_lift, SchemeConfig,
};

use crate::config::RunConfig;

pub struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out)
            .with_context(|| format!("cannot create output directory {}", out.display()))?;
        let hash = cfg.hash();
        Ok(Ctx { cfg, out, hash })
    }

    fn meta(&self, command: &str) -> Value {
        json!({
            "command": command,
            "config_hash": self.hash,
            "config": self.cfg.as_json(),
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    fn manifold(&self) -> ManifoldKind {
        self.cfg.manifold_kind().expect("validated")
    }

    fn rule(&self) -> ConnectionRuleKind {
        self.cfg.rule_kind().expect("validated")
    }

    fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            scheme: self.cfg.scheme_kind().expect("validated"),
        }
    }

    /// Origin on flat space, north pole on the sphere.
    fn start_point(&self) -> Point {
        let m = self.manifold();
        let mut coords = vec![0.0; m.ambient_dim()];
        if m.is_sphere() {
            coords[m.ambient_dim() - 1] = 1.0;
        }
        Point::new(m, coords).expect("start point satisfies the constraint")
    }

    fn standard_frame(&self, x: &Point) -> Result<Frame> {
        Ok(Frame::standard_at(x)?)
    }

    /// Build the configured driver: Poisson jumps define the grid first,
    /// then Brownian increments are drawn on that grid, so no
    /// interpolation is involved.
    fn build_driver(&self) -> Result<DriverPath> {
        let dim = self.manifold().dim();
        let grid = uniform_grid(self.cfg.horizon, self.cfg.steps);
        let mut rng = RngConfig::new(self.cfg.seed, 0).rng();
        let spec = &self.cfg.driver;
        let driver = match spec.kind.as_str() {
            "brownian" => gen_brownian_with(&grid, dim, &mut rng),
            "poisson" => gen_compound_poisson_with(
                &grid,
                dim,
                spec.poisson.rate,
                &spec.poisson.law,
                &mut rng,
            ),
            "superposition" => {
                let jumps = gen_compound_poisson_with(
                    &grid,
                    dim,
                    spec.poisson.rate,
                    &spec.poisson.law,
                    &mut rng,
                );
                let brownian = gen_brownian_with(jumps.times(), dim, &mut rng);
                superpose(&jumps, &brownian)?
            }
            "file" => {
                let path = spec.file.as_ref().expect("validated");
                return read_driver(Path::new(path));
            }
            _ => unreachable!("validated"),
        };
        Ok(driver)
    }

    fn write_driver_files(&self, name: &str, driver: &DriverPath, command: &str) -> Result<()> {
        let meta = self.meta(command);
        let jsonl = self.out.join(format!("{name}.jsonl"));
        let mut w = BufWriter::new(File::create(&jsonl)?);
        pathio::write_driver_jsonl(driver, &mut w, Some(&meta))?;
        w.flush()?;
        let csv = self.out.join(format!("{name}.csv"));
        let mut w = BufWriter::new(File::create(&csv)?);
        pathio::write_driver_csv(driver, &mut w, Some(&meta))?;
        w.flush()?;
        println!(
            "wrote {} and {} ({} grid points, {} jumps)",
            jsonl.display(),
            csv.display(),
            driver.n_points(),
            driver.jumps().len()
        );
        Ok(())
    }

    fn write_rolled_files(&self, name: &str, rolled: &RolledPath, command: &str) -> Result<()> {
        let meta = self.meta(command);
        let jsonl = self.out.join(format!("{name}.jsonl"));
        let mut w = BufWriter::new(File::create(&jsonl)?);
        pathio::write_rolled_jsonl(rolled, &mut w, Some(&meta))?;
        w.flush()?;
        let csv = self.out.join(format!("{name}.csv"));
        let mut w = BufWriter::new(File::create(&csv)?);
        pathio::write_rolled_csv(rolled, &mut w, Some(&meta))?;
        w.flush()?;
        println!(
            "wrote {} and {} ({} grid points, {} jumps)",
            jsonl.display(),
            csv.display(),
            rolled.n_points(),
            rolled.jumps.len()
        );
        Ok(())
    }

    fn write_report(&self, name: &str, command: &str, results: Value) -> Result<()> {
        let body = json!({
            "command": command,
            "config_hash": self.hash,
            "config": self.cfg.as_json(),
            "version": env!("CARGO_PKG_VERSION"),
            "results": results,
        });
        let path = self.out.join(format!("{name}.json"));
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &body)?;
        writeln!(w)?;
        w.flush()?;
        println!("wrote {}", path.display());
        Ok(())
    }

    // -----------------------------------------------------------------
    // commands
    // -----------------------------------------------------------------

    pub fn gen_driver(&self) -> Result<()> {
        if self.cfg.driver.kind == "file" {
            bail!("gen-driver needs a generative driver kind, not \"file\"");
        }
        let driver = self.build_driver()?;
        self.write_driver_files("driver", &driver, "gen-driver")
    }

    pub fn develop(&self, input: Option<&Path>) -> Result<()> {
        let driver = match input {
            Some(path) => read_driver(path)?,
            None => self.build_driver()?,
        };
        let x0 = self.start_point();
        let u0 = self.standard_frame(&x0)?;
        let rolled = develop(&driver, &x0, &u0, &self.scheme())?;
        self.write_driver_files("driver", &driver, "develop")?;
        self.write_rolled_files("rolled", &rolled, "develop")
    }

    pub fn lift(&self, input: &Path) -> Result<()> {
        let path = read_rolled(input)?;
        let u0 = self.standard_frame(&path.points[0])?;
        let lifted = horizontal_lift(&path.without_frames(), &u0, self.rule())?;
        self.write_rolled_files("lifted", &lifted, "lift")
    }

    pub fn antidevelop(&self, input: &Path) -> Result<()> {
        let path = read_rolled(input)?;
        let driver = antidevelop(&path, self.rule())?;
        self.write_driver_files("antidriver", &driver, "antidevelop")
    }

    pub fn roundtrip(&self, levels: usize, tol: Option<f64>) -> Result<bool> {
        if levels == 0 {
            bail!("roundtrip needs at least one level");
        }
        let tol = tol.unwrap_or(1e-2);
        let x0 = self.start_point();
        let u0 = self.standard_frame(&x0)?;
        let rule = self.rule();
        let scheme = self.scheme();

        let mut driver = self.build_driver()?;
        let mut bridge_rng = RngConfig::new(self.cfg.seed, 0xB51D6E).rng();
        let mut rows = Vec::new();
        let mut errors = Vec::new();
        for level in 0..levels {
            if level > 0 {
                driver = refine_bridge(&driver, &mut bridge_rng);
            }
            let h = driver
                .times()
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0, f64::max);
            let rolled = develop(&driver, &x0, &u0, &scheme)?;
            let back = antidevelop(&rolled, rule)?;
            let gap = driver_sup_gap(&driver, &back)?;
            rows.push(json!({ "level": level, "h": h, "sup_error": gap }));
            errors.push((h, gap));
            println!("level {level}: h = {h:.3e}, sup error = {gap:.3e}");
        }
        let orders: Vec<f64> = errors
            .windows(2)
            .map(|w| (w[0].1 / w[1].1.max(f64::MIN_POSITIVE)).log2())
            .collect();
        let fitted = fit_order(&errors);
        let final_error = errors.last().unwrap().1;
        let pass = final_error <= tol;
        self.write_report(
            "roundtrip",
            "roundtrip",
            json!({
                "levels": rows,
                "orders": orders,
                "fitted_order": fitted,
                "final_sup_error": final_error,
                "tolerance": tol,
                "pass": pass,
            }),
        )?;
        println!(
            "roundtrip: final sup error {final_error:.3e} (tol {tol:.1e}) -> {}",
            if pass { "pass" } else { "FAIL" }
        );
        Ok(pass)
    }

    pub fn holonomy(&self, loop_steps: usize, tol: Option<f64>) -> Result<bool> {
        let m = self.manifold();
        if m != ManifoldKind::sphere(2) {
            bail!("the holonomy preset runs on sphere:2, got {m}");
        }
        let tol = tol.unwrap_or(if loop_steps <= 1 { 1e-6 } else { 2e-3 });
        let north = Point::new(m, vec![0.0, 0.0, 1.0])?;
        let a = Point::new(m, vec![1.0, 0.0, 0.0])?;
        let b = Point::new(m, vec![0.0, 1.0, 0.0])?;
        let policy = CutLocusPolicy::default();

        let u0 = self.standard_frame(&north)?;
        let mut u = u0.clone();
        for (from, to) in [(&north, &a), (&a, &b), (&b, &north)] {
            let leg = log_map(from, to, policy)?;
            if loop_steps <= 1 {
                u = transport_frame(&u, &leg)?;
            } else {
                let mut here = from.clone();
                for i in 1..=loop_steps {
                    let target = exp_map(&leg.scaled(i as f64 / loop_steps as f64));
                    let step = log_map(&here, &target, policy)?;
                    u = transport_frame(&u, &step)?;
                    here = target;
                }
            }
        }
        let rotation = OrthogonalMatrix::between_frames(&u0, &u)?;
        let angle = rotation.entry(1, 0).atan2(rotation.entry(0, 0));
        let expected = std::f64::consts::FRAC_PI_2;
        let deviation = (angle - expected).abs();
        let pass = deviation <= tol;
        self.write_report(
            "holonomy",
            "holonomy",
            json!({
                "loop": "octant",
                "loop_steps": loop_steps,
                "angle": angle,
                "expected": expected,
                "deviation": deviation,
                "tolerance": tol,
                "pass": pass,
            }),
        )?;
        println!(
            "holonomy angle {angle:.9} vs {expected:.9} (deviation {deviation:.3e}) -> {}",
            if pass { "pass" } else { "FAIL" }
        );
        Ok(pass)
    }

    pub fn convergence(&self, levels: usize) -> Result<()> {
        if levels < 2 {
            bail!("convergence needs at least two levels");
        }
        let driver = self.build_driver()?;
        let mut drivers = vec![driver];
        let mut bridge_rng = RngConfig::new(self.cfg.seed, 0xC0A5CE).rng();
        for _ in 1..levels {
            drivers.push(refine_bridge(drivers.last().unwrap(), &mut bridge_rng));
        }
        let x0 = self.start_point();
        let u0 = self.standard_frame(&x0)?;
        let table = convergence_study(&drivers, &x0, &u0, &self.scheme())?;

        let csv_path = self.out.join("convergence.csv");
        let mut w = BufWriter::new(File::create(&csv_path)?);
        writeln!(w, "# {}", self.meta("convergence"))?;
        writeln!(w, "h,sup_point_error,terminal_frame_error,order_to_next")?;
        for (i, row) in table.rows.iter().enumerate() {
            let order = table
                .orders
                .get(i)
                .map(|o| pathio::fmt_f64(*o))
                .unwrap_or_else(|| "".into());
            writeln!(
                w,
                "{},{},{},{}",
                pathio::fmt_f64(row.h),
                pathio::fmt_f64(row.sup_point_error),
                pathio::fmt_f64(row.terminal_frame_error),
                order
            )?;
        }
        w.flush()?;
        println!("wrote {}", csv_path.display());

        let rows: Vec<Value> = table
            .rows
            .iter()
            .map(|r| {
                json!({
                    "h": r.h,
                    "sup_point_error": r.sup_point_error,
                    "terminal_frame_error": r.terminal_frame_error,
                })
            })
            .collect();
        self.write_report(
            "convergence",
            "convergence",
            json!({
                "rows": rows,
                "orders": table.orders,
                "fitted_order": table.fitted_order(),
            }),
        )
    }

    pub fn integrate(&self, input: Option<&Path>) -> Result<()> {
        let rolled = match input {
            Some(path) => read_rolled(path)?,
            None => {
                let driver = self.build_driver()?;
                let x0 = self.start_point();
                let u0 = self.standard_frame(&x0)?;
                develop(&driver, &x0, &u0, &self.scheme())?
            }
        };
        let m = rolled.manifold;
        let last = m.ambient_dim() - 1;
        // integrand: differential of the height coordinate, with its exact
        // covariant derivative (zero on flat space, -z g on the sphere)
        let height = OneFormProcess::from_dual_field(move |p: &Point| {
            let mut g = vec![0.0; m.ambient_dim()];
            g[last] = 1.0;
            p.tangent_from_ambient(&g).expect("ambient gradient")
        })
        .with_grad(move |_i, p, v, w| {
            if m.is_sphere() {
                -p.coords()[last]
                    * v.vec().iter().zip(w.vec()).map(|(a, b)| a * b).sum::<f64>()
            } else {
                0.0
            }
        });
        let rule = self.rule();
        let ito = ito_integral(&height, &rolled, rule)?;
        let strat = stratonovich_integral(&height, &rolled, rule)?;
        let qv = quadratic_variation(&TwoTensorProcess::metric_tensor(), &rolled, rule)?;

        self.write_driver_files("ito", &ito, "integrate")?;
        self.write_driver_files("stratonovich", &strat, "integrate")?;
        self.write_driver_files("qv_full", &qv.full, "integrate")?;
        self.write_driver_files("qv_continuous", &qv.continuous, "integrate")?;
        self.write_driver_files("qv_jump", &qv.jump, "integrate")?;
        self.write_report(
            "integrate",
            "integrate",
            json!({
                "integrand": format!("d(x{last})"),
                "rule": rule.name(),
                "ito_terminal": ito.terminal_value()[0],
                "stratonovich_terminal": strat.terminal_value()[0],
                "qv_terminal": qv.full.terminal_value()[0],
                "qv_continuous_terminal": qv.continuous.terminal_value()[0],
                "qv_jump_terminal": qv.jump.terminal_value()[0],
            }),
        )
    }

    pub fn martingale_test(&self, no_compensate: bool) -> Result<bool> {
        let spec = &self.cfg.driver;
        let (brownian, rate) = match spec.kind.as_str() {
            "brownian" => (true, 0.0),
            "poisson" => (false, spec.poisson.rate),
            "superposition" => (true, spec.poisson.rate),
            other => bail!("martingale-test needs a generative driver kind, got {other:?}"),
        };
        let experiment = SphereMartingaleExperiment {
            manifold: self.manifold(),
            horizon: self.cfg.horizon,
            steps: self.cfg.steps,
            brownian,
            poisson_rate: rate,
            jump_law: spec.poisson.law.clone(),
            compensate: !no_compensate,
            rule: self.rule(),
            scheme: self.scheme(),
        };
        let mc = MonteCarloConfig {
            n_paths: self.cfg.paths,
            seed: self.cfg.seed,
            z_threshold: self.cfg.z_threshold,
            checkpoints: [0.2, 0.4, 0.6, 0.8, 1.0]
                .iter()
                .map(|f| f * self.cfg.horizon)
                .collect(),
        };
        let report = experiment.run(&mc)?;
        print!("{}", report.render_table());
        let passed = report.passed;
        self.write_report(
            "martingale",
            "martingale-test",
            json!({
                "compensated": !no_compensate,
                "report": serde_json::to_value(&report)?,
            }),
        )?;
        Ok(passed)
    }
}

fn read_driver(path: &Path) -> Result<DriverPath> {
    let file =
        File::open(path).with_context(|| format!("cannot open driver file {}", path.display()))?;
    pathio::read_driver_jsonl(&mut BufReader::new(file))
        .with_context(|| format!("cannot parse driver file {}", path.display()))
}

fn read_rolled(path: &Path) -> Result<RolledPath> {
    let file =
        File::open(path).with_context(|| format!("cannot open path file {}", path.display()))?;
    pathio::read_rolled_jsonl(&mut BufReader::new(file))
        .with_context(|| format!("cannot parse path file {}", path.display()))
}

fn fit_order(errors: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(h, e)| (h.log2(), e.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
