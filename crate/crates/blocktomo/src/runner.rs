//! Experiment driver.
//!
//! Turns one parsed config into a reconstruction run: build the geometry,
//! partition, and block system, synthesize measurements from the phantom,
//! solve with the configured method, and log a fixed-schema CSV of metrics
//! and simulated cluster costs.  The least-squares reference needed for
//! the distance metric is solved once and cached on disk, keyed by a
//! fingerprint of everything it depends on.

use crate::arrayio::write_array;
use crate::baselines::{
    classical_init, classical_step, prox_init, prox_step, sag_epoch, sag_init, svrg_epoch,
    svrg_init, ClassicalMethod,
};
use crate::config::{ExperimentConfig, MethodKind};
use crate::error::{Error, Result};
use crate::importance::ImportanceSampler;
use crate::ledger::CostLedger;
use crate::lsqr::lsqr_solve;
use crate::metrics::{add_noise, compute_metrics, effective_epochs, Metrics};
use crate::partition::SamplingFractions;
use crate::phantom::{labeled_cube, shepp_logan, Phantom};
use crate::solver::{
    bsgd_epoch, bsgd_im_epoch, bsgd_tv_epoch, init_state, maybe_tune, TileMode, TuningConstants,
};
use crate::system::{BlockSystem, StorageMode};
use std::path::{Path, PathBuf};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "BLOCKTOMO_OUTPUT_DIR";

const LSQ_TOL: f64 = 1e-12;
const LSQ_MAX_ITERS: usize = 8000;

/// One CSV line of a run log.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub epoch: usize,
    pub effective_epoch: f64,
    pub block_mults: u64,
    pub ds: f64,
    pub snr: f64,
    pub gap: f64,
    pub mu: f64,
    pub master_storage: u64,
    pub node_storage_peak: u64,
    pub bytes_moved: u64,
}

/// Everything a finished run leaves behind, in memory and on disk.
#[derive(Debug)]
pub struct RunLog {
    pub rows: Vec<MetricRow>,
    pub csv_path: PathBuf,
    pub recon_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
    pub x_rec: Vec<f64>,
    pub x_lsq: Vec<f64>,
    pub final_metrics: Metrics,
}

/// The assembled problem a config describes: system, ground truth, and
/// (possibly noisy) measurements.
pub struct Instance {
    pub system: BlockSystem,
    pub x_true: Vec<f64>,
    pub y: Vec<f64>,
}

/// Resolve the output directory, letting the environment win.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.run.output_dir.clone(),
    }
}

/// File stem for a run's artifacts: the explicit label, or the method name.
pub fn run_stem(cfg: &ExperimentConfig) -> String {
    cfg.run
        .label
        .clone()
        .unwrap_or_else(|| cfg.method.name().to_string())
}

/// Build the system and measurements a config describes.
pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let geom = cfg.build_geometry()?;
    let partition = cfg.build_partition(&geom)?;
    let phantom: Phantom = match geom.dim() {
        3 => labeled_cube(geom.volume_side),
        _ => shepp_logan(geom.volume_side, geom.dim()),
    };
    let system = BlockSystem::build(geom, partition, StorageMode::Explicit)?;
    let clean = system.full_forward(&phantom.values);
    let y = match &cfg.noise {
        Some(n) => add_noise(&clean, n.snr_db, n.seed)?,
        None => clean,
    };
    Ok(Instance { system, x_true: phantom.values, y })
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Stable fingerprint of everything the least-squares solution depends
/// on: geometry, partition (it fixes the summation order), and noise.
pub fn lsq_fingerprint(cfg: &ExperimentConfig) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    let g = &cfg.geometry;
    h = fnv1a(&[g.mode as u8], h);
    for v in [g.source_to_center, g.center_to_detector, g.detector_pitch, g.voxel_size] {
        h = fnv1a(&v.to_bits().to_le_bytes(), h);
    }
    for v in [g.detector_elements, g.volume_side] {
        h = fnv1a(&(v as u64).to_le_bytes(), h);
    }
    for a in &g.angles_deg {
        h = fnv1a(&a.to_bits().to_le_bytes(), h);
    }
    let p = &cfg.partition;
    for v in [p.row_blocks, p.col_blocks, p.tiles_per_angle] {
        h = fnv1a(&(v as u64).to_le_bytes(), h);
    }
    match &cfg.noise {
        None => h = fnv1a(b"clean", h),
        Some(n) => {
            h = fnv1a(&n.snr_db.to_bits().to_le_bytes(), h);
            h = fnv1a(&n.seed.to_le_bytes(), h);
        }
    }
    h
}

/// Where the cached least-squares solution for this config lives.
pub fn lsq_cache_path(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    dir.join(format!("x_lsq_{:016x}.f32", lsq_fingerprint(cfg)))
}

/// Load the cached least-squares solution or solve and cache it.
pub fn oracle_solution(cfg: &ExperimentConfig, inst: &Instance) -> Result<(PathBuf, Vec<f64>)> {
    let dir = output_dir(cfg);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = lsq_cache_path(&dir, cfg);
    if path.exists() {
        let (dims, vals) = crate::arrayio::read_array(&path)?;
        let n: usize = dims.iter().product();
        if n == inst.system.cols() {
            return Ok((path, vals.iter().map(|&v| v as f64).collect()));
        }
    }
    let sol = lsqr_solve(&inst.system, &inst.y, LSQ_TOL, LSQ_MAX_ITERS);
    let k = inst.system.geom().volume_side;
    let dims = vec![k; inst.system.geom().dim()];
    let f32s: Vec<f32> = sol.x.iter().map(|&v| v as f32).collect();
    write_array(&path, &dims, &f32s)?;
    // Hand back the rounded values the cache holds, so runs that solve and
    // runs that reload see bit-identical references.
    Ok((path, f32s.iter().map(|&v| v as f64).collect()))
}

fn render_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(
        "epoch,effective_epoch,block_mults,ds,snr,gap,mu,master_storage,node_storage_peak,bytes_moved\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{:.12e},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}\n",
            r.epoch,
            r.effective_epoch,
            r.block_mults,
            r.ds,
            r.snr,
            r.gap,
            r.mu,
            r.master_storage,
            r.node_storage_peak,
            r.bytes_moved
        ));
    }
    out
}

/// Minimal SVG line chart of one metric against block multiplications.
fn render_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            "<text x=\"{xm}\" y=\"{yb}\" text-anchor=\"middle\" font-size=\"13\">{xl}</text>\n",
            "<text x=\"14\" y=\"{ym}\" font-size=\"13\" transform=\"rotate(-90 14 {ym})\" text-anchor=\"middle\">{yl}</text>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        pts = path.join(" "),
        xm = w / 2.0,
        yb = h - 12.0,
        xl = x_label,
        ym = h / 2.0,
        yl = y_label,
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

struct Logger<'a> {
    cfg: &'a ExperimentConfig,
    inst: &'a Instance,
    x_lsq: &'a [f64],
    ledger: &'a CostLedger,
    fractions: SamplingFractions,
    rows: Vec<MetricRow>,
}

impl Logger<'_> {
    fn due(&self, epoch: usize) -> bool {
        epoch == 0 || epoch == self.cfg.run.epochs || epoch % self.cfg.run.metric_period == 0
    }

    fn log(&mut self, epoch: usize, x: &[f64], mu: f64) {
        let met = compute_metrics(x, &self.inst.x_true, Some(self.x_lsq), &self.inst.system, &self.inst.y);
        let snap = self.ledger.snapshot();
        self.rows.push(MetricRow {
            epoch,
            effective_epoch: effective_epochs(epoch, &self.fractions),
            block_mults: snap.block_mults,
            ds: met.ds.unwrap_or(f64::NAN),
            snr: met.snr_db,
            gap: met.gap,
            mu,
            master_storage: snap.master_storage,
            node_storage_peak: snap.node_storage_peak,
            bytes_moved: snap.bytes_moved(),
        });
    }
}

fn tuning_constants(cfg: &ExperimentConfig) -> Result<TuningConstants> {
    let mut c = TuningConstants::defaults(cfg.partition.row_blocks);
    if let Some(v) = cfg.tuning.epsilon {
        c.epsilon = v;
    }
    if let Some(v) = cfg.tuning.delta {
        c.delta = v;
    }
    if let Some(v) = cfg.tuning.t1 {
        c.t1 = v;
    }
    if let Some(v) = cfg.tuning.t2 {
        c.t2 = v;
    }
    if let Some(v) = cfg.tuning.period {
        c.period = v;
    }
    c.direction_gate = cfg.tuning.direction_gate;
    c.validate()?;
    Ok(c)
}

/// Run one configured experiment end to end, writing CSV, reconstruction,
/// and optional plots into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunLog> {
    let stem = run_stem(cfg);
    run_experiment_inner(cfg, &stem)
        .map_err(|e| Error::Config(format!("run `{stem}` ({}): {e}", cfg.method.name())))
}

fn run_experiment_inner(cfg: &ExperimentConfig, stem: &str) -> Result<RunLog> {
    let inst = build_instance(cfg)?;
    let system = &inst.system;
    let fractions = cfg.sampling_fractions()?;
    if cfg.method == MethodKind::Sag && fractions.gamma != 1.0 {
        return Err(Error::InvalidParameter(
            "sag refreshes full columns; set gamma = 1".into(),
        ));
    }
    if cfg.tuning.enabled && !cfg.method.is_block_method() {
        return Err(Error::InvalidParameter(format!(
            "automatic step tuning drives the block solver, not `{}`",
            cfg.method.name()
        )));
    }

    // A servant must hold its largest task: one image tile plus one
    // projection slab.  Refuse up front when the budget cannot fit it.
    if let Some(budget) = cfg.run.node_budget {
        let part = system.partition();
        let rpv = system.geom().rays_per_view();
        let max_rows = part
            .row_block_angles
            .iter()
            .map(|a| a.len() * rpv)
            .max()
            .unwrap_or(0);
        let max_cols = part.col_blocks.iter().map(Vec::len).max().unwrap_or(0);
        let need = (max_rows + max_cols) as u64;
        if need > budget {
            return Err(Error::InvalidParameter(format!(
                "largest task needs {need} floats on a node, budget is {budget}"
            )));
        }
    }

    let (_, x_lsq) = oracle_solution(cfg, &inst)?;
    let ledger = CostLedger::with_budget(
        system.row_blocks(),
        system.col_blocks(),
        system.rows(),
        system.cols(),
        cfg.run.node_budget,
    );

    let block_fractions = if cfg.method.is_block_method() || cfg.method == MethodKind::Svrg {
        fractions
    } else {
        SamplingFractions { alpha: 1.0, gamma: 1.0 }
    };
    let mut logger = Logger {
        cfg,
        inst: &inst,
        x_lsq: &x_lsq,
        ledger: &ledger,
        fractions: block_fractions,
        rows: Vec::new(),
    };

    let epochs = cfg.run.epochs;
    let mu0 = cfg.tuning.mu0;
    let seed = cfg.run.seed;
    let tv = cfg.tv.clone();
    // Importance-sampled runs fall back to plain epochs for the last
    // stretch so the final iterates are unbiased.
    let tail_start = epochs - (cfg.plain_tail * epochs as f64).floor() as usize;

    match cfg.method {
        MethodKind::Bsgd | MethodKind::BsgdIm | MethodKind::BsgdRan | MethodKind::BsgdTv => {
            let sampler = match cfg.method {
                MethodKind::BsgdIm => {
                    Some(ImportanceSampler::build(system.geom(), system.partition()))
                }
                _ => None,
            };
            let constants = tuning_constants(cfg)?;
            let mut state = init_state(system, &inst.y, mu0, seed)?;
            logger.log(0, &state.x_est, state.mu);
            for e in 1..=epochs {
                match cfg.method {
                    MethodKind::Bsgd => bsgd_epoch(&mut state, system, &fractions, &ledger)?,
                    MethodKind::BsgdTv => {
                        let spec = tv.as_ref().expect("validated at parse time");
                        bsgd_tv_epoch(
                            &mut state,
                            system,
                            &fractions,
                            spec.lambda,
                            &spec.params,
                            &ledger,
                        )?
                    }
                    MethodKind::BsgdIm | MethodKind::BsgdRan => {
                        if e > tail_start {
                            bsgd_epoch(&mut state, system, &fractions, &ledger)?
                        } else {
                            let tiles = match &sampler {
                                Some(s) => TileMode::Importance(s),
                                None => TileMode::Uniform,
                            };
                            bsgd_im_epoch(&mut state, system, &fractions, tiles, &ledger)?
                        }
                    }
                    _ => unreachable!(),
                }
                if cfg.tuning.enabled {
                    maybe_tune(&mut state, &constants)?;
                }
                if logger.due(e) {
                    logger.log(e, &state.x_est, state.mu);
                }
            }
            finish(cfg, stem, logger, state.x_est)
        }
        MethodKind::Sirt | MethodKind::Cav | MethodKind::Gd | MethodKind::GdBb => {
            let (kind, step) = match cfg.method {
                MethodKind::Sirt => (ClassicalMethod::Sirt, cfg.relaxation),
                MethodKind::Cav => (ClassicalMethod::Cav, cfg.relaxation),
                MethodKind::Gd => (ClassicalMethod::Gd, mu0),
                _ => (ClassicalMethod::GdBb, mu0),
            };
            let mut state = classical_init(kind, system, step)?;
            logger.log(0, &state.x, state.last_step);
            for e in 1..=epochs {
                classical_step(&mut state, system, &inst.y, &ledger)?;
                if logger.due(e) {
                    logger.log(e, &state.x, state.last_step);
                }
            }
            finish(cfg, stem, logger, state.x)
        }
        MethodKind::Sag => {
            let mut state = sag_init(system, mu0, seed)?;
            logger.log(0, &state.x, state.mu);
            for e in 1..=epochs {
                sag_epoch(&mut state, system, &inst.y, &fractions, &ledger)?;
                if logger.due(e) {
                    logger.log(e, &state.x, state.mu);
                }
            }
            finish(cfg, stem, logger, state.x)
        }
        MethodKind::Svrg => {
            let mut state = svrg_init(system, mu0, seed)?;
            logger.log(0, &state.x, state.mu);
            for e in 1..=epochs {
                svrg_epoch(&mut state, system, &inst.y, &ledger)?;
                if logger.due(e) {
                    logger.log(e, &state.x, state.mu);
                }
            }
            finish(cfg, stem, logger, state.x)
        }
        MethodKind::Ista | MethodKind::Fista => {
            let spec = tv.as_ref().expect("validated at parse time");
            let accelerated = cfg.method == MethodKind::Fista;
            let mut state = prox_init(system, mu0, spec.lambda, accelerated, spec.params)?;
            logger.log(0, &state.x, state.mu);
            for e in 1..=epochs {
                prox_step(&mut state, system, &inst.y, &ledger)?;
                if logger.due(e) {
                    logger.log(e, &state.x, state.mu);
                }
            }
            finish(cfg, stem, logger, state.x)
        }
    }
}

fn finish(
    cfg: &ExperimentConfig,
    stem: &str,
    logger: Logger<'_>,
    x_rec: Vec<f64>,
) -> Result<RunLog> {
    let inst = logger.inst;
    let x_lsq = logger.x_lsq.to_vec();
    if logger.ledger.budget_exceeded() {
        return Err(Error::InvalidParameter(
            "a task exceeded the configured node budget".into(),
        ));
    }
    let dir = output_dir(cfg);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_text(&csv_path, &render_csv(&logger.rows))?;

    let k = inst.system.geom().volume_side;
    let dims = vec![k; inst.system.geom().dim()];
    let recon_path = dir.join(format!("{stem}_recon.f32"));
    let f32s: Vec<f32> = x_rec.iter().map(|&v| v as f32).collect();
    write_array(&recon_path, &dims, &f32s)?;

    let mut plot_paths = Vec::new();
    if cfg.run.plots {
        for (name, pick) in [
            ("ds", 0usize),
            ("snr", 1),
            ("gap", 2),
        ] {
            let pts: Vec<(f64, f64)> = logger
                .rows
                .iter()
                .map(|r| {
                    let y = match pick {
                        0 => r.ds,
                        1 => r.snr,
                        _ => r.gap,
                    };
                    (r.block_mults as f64, y)
                })
                .collect();
            let path = dir.join(format!("{stem}_{name}.svg"));
            write_text(&path, &render_svg(&pts, "block multiplications", name))?;
            plot_paths.push(path);
        }
    }

    let final_metrics =
        compute_metrics(&x_rec, &inst.x_true, Some(&x_lsq), &inst.system, &inst.y);
    Ok(RunLog {
        rows: logger.rows,
        csv_path,
        recon_path,
        plot_paths,
        x_rec,
        x_lsq,
        final_metrics,
    })
}
