//! Experiment configuration files.
//!
//! The format is deliberately small: `[section]` headers, `key = value`
//! lines, and `#` comments.  Angle lists accept either a comma-separated
//! list of degrees or an inclusive `start:step:stop` sweep.  Every key is
//! checked against the schema; unknown keys, missing keys, and malformed
//! values are reported with their line number so presets stay honest.

use crate::error::{Error, Result};
use crate::geometry::{build_geometry, Geometry, Mode};
use crate::partition::{make_partition, select_alpha_gamma, BlockPartition, SamplingFractions};
use crate::tv::TvParams;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Which reconstruction loop an experiment drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Bsgd,
    BsgdIm,
    BsgdRan,
    BsgdTv,
    Sirt,
    Cav,
    Gd,
    GdBb,
    Sag,
    Svrg,
    Ista,
    Fista,
}

impl MethodKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "bsgd" => MethodKind::Bsgd,
            "bsgd_im" => MethodKind::BsgdIm,
            "bsgd_ran" => MethodKind::BsgdRan,
            "bsgd_tv" => MethodKind::BsgdTv,
            "sirt" => MethodKind::Sirt,
            "cav" => MethodKind::Cav,
            "gd" => MethodKind::Gd,
            "gd_bb" => MethodKind::GdBb,
            "sag" => MethodKind::Sag,
            "svrg" => MethodKind::Svrg,
            "ista" => MethodKind::Ista,
            "fista" => MethodKind::Fista,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Bsgd => "bsgd",
            MethodKind::BsgdIm => "bsgd_im",
            MethodKind::BsgdRan => "bsgd_ran",
            MethodKind::BsgdTv => "bsgd_tv",
            MethodKind::Sirt => "sirt",
            MethodKind::Cav => "cav",
            MethodKind::Gd => "gd",
            MethodKind::GdBb => "gd_bb",
            MethodKind::Sag => "sag",
            MethodKind::Svrg => "svrg",
            MethodKind::Ista => "ista",
            MethodKind::Fista => "fista",
        }
    }

    /// Methods whose step size comes from the tuning block.
    pub fn needs_step(self) -> bool {
        !matches!(self, MethodKind::Sirt | MethodKind::Cav)
    }

    /// Methods that smooth with the total-variation proximal map.
    pub fn needs_tv(self) -> bool {
        matches!(self, MethodKind::BsgdTv | MethodKind::Ista | MethodKind::Fista)
    }

    /// Methods that sample blocks each epoch.
    pub fn is_block_method(self) -> bool {
        matches!(
            self,
            MethodKind::Bsgd
                | MethodKind::BsgdIm
                | MethodKind::BsgdRan
                | MethodKind::BsgdTv
                | MethodKind::Sag
        )
    }
}

#[derive(Debug, Clone)]
pub struct GeometrySpec {
    pub mode: Mode,
    pub source_to_center: f64,
    pub center_to_detector: f64,
    pub detector_elements: usize,
    pub detector_pitch: f64,
    pub angles_deg: Vec<f64>,
    pub volume_side: usize,
    pub voxel_size: f64,
}

#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub row_blocks: usize,
    pub col_blocks: usize,
    pub tiles_per_angle: usize,
}

#[derive(Debug, Clone)]
pub struct FractionSpec {
    pub node_num: Option<usize>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TuningSpec {
    pub enabled: bool,
    pub mu0: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub period: Option<usize>,
    pub direction_gate: bool,
}

#[derive(Debug, Clone)]
pub struct TvSpec {
    pub lambda: f64,
    pub params: TvParams,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub epochs: usize,
    pub metric_period: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub label: Option<String>,
    /// Emit SVG line plots next to the CSV.
    pub plots: bool,
    /// Per-servant storage budget in floats; runs whose largest task would
    /// not fit are refused.
    pub node_budget: Option<u64>,
}

/// Everything one experiment needs, straight from a preset file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub geometry: GeometrySpec,
    pub partition: PartitionSpec,
    pub method: MethodKind,
    /// SIRT and CAV relaxation factor.
    pub relaxation: f64,
    /// Fraction of trailing epochs the importance variants run unmasked.
    pub plain_tail: f64,
    pub fractions: FractionSpec,
    pub tuning: TuningSpec,
    pub tv: Option<TvSpec>,
    pub noise: Option<NoiseSpec>,
    pub run: RunSpec,
}

impl ExperimentConfig {
    pub fn build_geometry(&self) -> Result<Geometry> {
        build_geometry(
            self.geometry.mode,
            self.geometry.source_to_center,
            self.geometry.center_to_detector,
            self.geometry.detector_elements,
            self.geometry.detector_pitch,
            self.geometry.angles_deg.clone(),
            self.geometry.volume_side,
            self.geometry.voxel_size,
        )
    }

    pub fn build_partition(&self, geom: &Geometry) -> Result<BlockPartition> {
        make_partition(
            geom,
            self.partition.row_blocks,
            self.partition.col_blocks,
            self.partition.tiles_per_angle,
        )
    }

    /// Resolve the sampling fractions against the block grid, either from
    /// an explicit pair or from a node budget.
    pub fn sampling_fractions(&self) -> Result<SamplingFractions> {
        let (m, n) = (self.partition.row_blocks, self.partition.col_blocks);
        if let Some(nodes) = self.fractions.node_num {
            return Ok(select_alpha_gamma(nodes, m, n));
        }
        let alpha = self.fractions.alpha.unwrap_or(1.0);
        let gamma = self.fractions.gamma.unwrap_or(1.0);
        SamplingFractions::new(alpha, gamma, m, n)
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        if let Some(name) = stripped.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| {
                Error::Config(format!("line {line}: unterminated section header"))
            })?;
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                return Err(Error::Config(format!(
                    "line {line}: section [{name}] appears twice"
                )));
            }
            sections.insert(name.clone(), Section { line, entries: BTreeMap::new() });
            current = Some(name);
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {line}: expected `key = value`, got `{stripped}`"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let section_name = current.clone().ok_or_else(|| {
            Error::Config(format!("line {line}: `{key}` appears before any [section]"))
        })?;
        let section = sections.get_mut(&section_name).unwrap();
        if section.entries.contains_key(&key) {
            return Err(Error::Config(format!(
                "line {line}: key `{key}` repeated in [{section_name}]"
            )));
        }
        section.entries.insert(key, Entry { value, line, used: false });
    }
    Ok(sections)
}

/// Cursor over one section that remembers which keys were consumed so the
/// leftovers can be reported as unknown.
struct SectionReader<'a> {
    name: &'a str,
    section: &'a mut Section,
}

impl<'a> SectionReader<'a> {
    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.section.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn require(&mut self, key: &str) -> Result<(String, usize)> {
        self.raw(key).ok_or_else(|| {
            Error::Config(format!(
                "section [{}] (line {}): missing required key `{key}`",
                self.name, self.section.line
            ))
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, value: &str, line: usize, kind: &str) -> Result<T> {
        value.parse::<T>().map_err(|_| {
            Error::Config(format!(
                "line {line}: `{key} = {value}` is not a valid {kind}"
            ))
        })
    }

    fn f64_req(&mut self, key: &str) -> Result<f64> {
        let (v, line) = self.require(key)?;
        self.parse(key, &v, line, "number")
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => self.parse(key, &v, line, "number").map(Some),
        }
    }

    fn usize_req(&mut self, key: &str) -> Result<usize> {
        let (v, line) = self.require(key)?;
        self.parse(key, &v, line, "whole number")
    }

    fn usize_opt(&mut self, key: &str) -> Result<Option<usize>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => self.parse(key, &v, line, "whole number").map(Some),
        }
    }

    fn u64_req(&mut self, key: &str) -> Result<u64> {
        let (v, line) = self.require(key)?;
        self.parse(key, &v, line, "whole number")
    }

    fn bool_opt(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Config(format!(
                    "line {line}: `{key} = {v}` must be true or false"
                ))),
            },
        }
    }

    fn string_req(&mut self, key: &str) -> Result<(String, usize)> {
        self.require(key)
    }

    fn string_opt(&mut self, key: &str) -> Option<String> {
        self.raw(key).map(|(v, _)| v)
    }

    fn finish(self) -> Result<()> {
        for (key, entry) in &self.section.entries {
            if !entry.used {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{key}` in [{}]",
                    entry.line, self.name
                )));
            }
        }
        Ok(())
    }
}

/// Expand an angle specification: either `a, b, c` degrees or an
/// inclusive `start:step:stop` sweep.
pub fn parse_angles(spec: &str, line: usize) -> Result<Vec<f64>> {
    let bad = |msg: &str| Error::Config(format!("line {line}: angle spec `{spec}`: {msg}"));
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("sweeps use start:step:stop"));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("sweep bounds must be numbers"))?;
        let (start, step, stop) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1.0 + 1e-9).floor() as usize;
        return Ok((0..count).map(|i| start + step * i as f64).collect());
    }
    let angles: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("list entries must be numbers"))?;
    if angles.is_empty() {
        return Err(bad("need at least one angle"));
    }
    Ok(angles)
}

/// Parse and validate one experiment file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut sections = parse_sections(text)?;
    let required = ["geometry", "partition", "method", "run"];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|name| !sections.contains_key(*name))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing required sections: {}",
            missing.join(", ")
        )));
    }
    let known = ["geometry", "partition", "method", "fractions", "tuning", "tv", "noise", "run"];
    for (name, section) in &sections {
        if !known.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "line {}: unknown section [{name}]",
                section.line
            )));
        }
    }

    let geometry = {
        let section = sections.get_mut("geometry").unwrap();
        let mut r = SectionReader { name: "geometry", section };
        let (mode_str, mode_line) = r.string_req("mode")?;
        let mode = match mode_str.as_str() {
            "fan2d" => Mode::Fan2d,
            "cone3d" => Mode::Cone3d,
            _ => {
                return Err(Error::Config(format!(
                    "line {mode_line}: mode must be fan2d or cone3d, got `{mode_str}`"
                )))
            }
        };
        let source_to_center = r.f64_req("op")?;
        let center_to_detector = r.f64_req("od")?;
        let detector_elements = r.usize_req("detector")?;
        let detector_pitch = r.f64_opt("pitch")?.unwrap_or(1.0);
        let (angle_spec, angle_line) = r.string_req("angles")?;
        let angles_deg = parse_angles(&angle_spec, angle_line)?;
        let volume_side = r.usize_req("k")?;
        let voxel_size = r
            .f64_opt("voxel_size")?
            .unwrap_or(16.0 / volume_side as f64);
        r.finish()?;
        GeometrySpec {
            mode,
            source_to_center,
            center_to_detector,
            detector_elements,
            detector_pitch,
            angles_deg,
            volume_side,
            voxel_size,
        }
    };

    let partition = {
        let section = sections.get_mut("partition").unwrap();
        let mut r = SectionReader { name: "partition", section };
        let spec = PartitionSpec {
            row_blocks: r.usize_req("m")?,
            col_blocks: r.usize_req("n")?,
            tiles_per_angle: r.usize_opt("tiles_per_angle")?.unwrap_or(4),
        };
        r.finish()?;
        spec
    };

    let (method, relaxation, plain_tail) = {
        let section = sections.get_mut("method").unwrap();
        let mut r = SectionReader { name: "method", section };
        let (name, line) = r.string_req("name")?;
        let method = MethodKind::parse(&name).ok_or_else(|| {
            Error::Config(format!("line {line}: unknown method `{name}`"))
        })?;
        let relaxation = r.f64_opt("relaxation")?.unwrap_or(1.0);
        let plain_tail = r.f64_opt("plain_tail")?.unwrap_or(0.1);
        if !(0.0..=1.0).contains(&plain_tail) {
            return Err(Error::Config(format!(
                "plain_tail must lie in [0, 1], got {plain_tail}"
            )));
        }
        r.finish()?;
        (method, relaxation, plain_tail)
    };

    let fractions = match sections.get_mut("fractions") {
        None => FractionSpec { node_num: None, alpha: None, gamma: None },
        Some(section) => {
            let mut r = SectionReader { name: "fractions", section };
            let spec = FractionSpec {
                node_num: r.usize_opt("node_num")?,
                alpha: r.f64_opt("alpha")?,
                gamma: r.f64_opt("gamma")?,
            };
            r.finish()?;
            if spec.node_num.is_some() && (spec.alpha.is_some() || spec.gamma.is_some()) {
                return Err(Error::Config(
                    "[fractions] takes node_num or an explicit alpha/gamma pair, not both"
                        .into(),
                ));
            }
            if spec.node_num.is_none() && spec.alpha.is_some() != spec.gamma.is_some() {
                return Err(Error::Config(
                    "[fractions] explicit form needs both alpha and gamma".into(),
                ));
            }
            spec
        }
    };

    let tuning = match sections.get_mut("tuning") {
        None => {
            if method.needs_step() {
                return Err(Error::Config(format!(
                    "method `{}` needs a [tuning] section with mu0",
                    method.name()
                )));
            }
            TuningSpec {
                enabled: false,
                mu0: 0.0,
                epsilon: None,
                delta: None,
                t1: None,
                t2: None,
                period: None,
                direction_gate: true,
            }
        }
        Some(section) => {
            let mut r = SectionReader { name: "tuning", section };
            let spec = TuningSpec {
                enabled: r.bool_opt("enabled", false)?,
                mu0: r.f64_req("mu0")?,
                epsilon: r.f64_opt("epsilon")?,
                delta: r.f64_opt("delta")?,
                t1: r.f64_opt("t1")?,
                t2: r.f64_opt("t2")?,
                period: r.usize_opt("period")?,
                direction_gate: r.bool_opt("direction_gate", true)?,
            };
            r.finish()?;
            if !(spec.mu0 > 0.0 && spec.mu0.is_finite()) {
                return Err(Error::Config(format!(
                    "mu0 must be positive and finite, got {}",
                    spec.mu0
                )));
            }
            spec
        }
    };

    let tv = match sections.get_mut("tv") {
        None => {
            if method.needs_tv() {
                return Err(Error::Config(format!(
                    "method `{}` needs a [tv] section with lambda",
                    method.name()
                )));
            }
            None
        }
        Some(section) => {
            let mut r = SectionReader { name: "tv", section };
            let lambda = r.f64_req("lambda")?;
            let defaults = TvParams::default();
            let params = TvParams {
                iterations: r.usize_opt("iterations")?.unwrap_or(defaults.iterations),
                tolerance: r.f64_opt("tolerance")?.unwrap_or(defaults.tolerance),
            };
            r.finish()?;
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::Config(format!(
                    "lambda must be finite and nonnegative, got {lambda}"
                )));
            }
            Some(TvSpec { lambda, params })
        }
    };

    let noise = match sections.get_mut("noise") {
        None => None,
        Some(section) => {
            let mut r = SectionReader { name: "noise", section };
            let spec = NoiseSpec { snr_db: r.f64_req("snr_db")?, seed: r.u64_req("seed")? };
            r.finish()?;
            Some(spec)
        }
    };

    let run = {
        let section = sections.get_mut("run").unwrap();
        let mut r = SectionReader { name: "run", section };
        let spec = RunSpec {
            epochs: r.usize_req("epochs")?,
            metric_period: r.usize_opt("metric_period")?.unwrap_or(1),
            output_dir: PathBuf::from(r.string_req("output_dir")?.0),
            seed: r.u64_req("seed")?,
            label: r.string_opt("label"),
            plots: r.bool_opt("plots", false)?,
            node_budget: r.usize_opt("node_budget")?.map(|b| b as u64),
        };
        r.finish()?;
        if spec.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if spec.metric_period == 0 {
            return Err(Error::Config("metric_period must be at least 1".into()));
        }
        spec
    };

    Ok(ExperimentConfig {
        geometry,
        partition,
        method,
        relaxation,
        plain_tail,
        fractions,
        tuning,
        tv,
        noise,
        run,
    })
}

/// Read and parse a preset file, tagging errors with the path.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_preset() -> String {
        "\
# desk-scale block run
[geometry]
mode = fan2d
op = 50.0
od = 50.0
detector = 30
pitch = 1.0
angles = 0:10:350
k = 16

[partition]
m = 4
n = 2
tiles_per_angle = 4

[method]
name = bsgd

[fractions]
alpha = 1.0
gamma = 1.0

[tuning]
enabled = true
mu0 = 0.0004
delta = 0.4
direction_gate = false

[tv]
lambda = 0.1

[noise]
snr_db = 17.5
seed = 11

[run]
epochs = 200
metric_period = 5
output_dir = out
seed = 3
label = demo
"
        .to_string()
    }

    #[test]
    fn full_preset_round_trips_every_section() {
        let cfg = parse_config(&block_preset()).unwrap();
        assert_eq!(cfg.method, MethodKind::Bsgd);
        assert_eq!(cfg.geometry.angles_deg.len(), 36);
        assert_eq!(cfg.geometry.angles_deg[1], 10.0);
        assert_eq!(cfg.geometry.volume_side, 16);
        assert_eq!(cfg.geometry.voxel_size, 1.0, "default spans 16 units");
        assert_eq!(cfg.partition.row_blocks, 4);
        assert_eq!(cfg.partition.col_blocks, 2);
        let fr = cfg.sampling_fractions().unwrap();
        assert_eq!((fr.alpha, fr.gamma), (1.0, 1.0));
        assert!(cfg.tuning.enabled && !cfg.tuning.direction_gate);
        assert_eq!(cfg.tuning.mu0, 4e-4);
        assert_eq!(cfg.tuning.delta, Some(0.4));
        assert_eq!(cfg.tv.as_ref().unwrap().lambda, 0.1);
        assert_eq!(cfg.noise.as_ref().unwrap().snr_db, 17.5);
        assert_eq!(cfg.run.metric_period, 5);
        assert_eq!(cfg.run.label.as_deref(), Some("demo"));
        let geom = cfg.build_geometry().unwrap();
        assert_eq!(geom.num_rays(), 36 * 30);
        let part = cfg.build_partition(&geom).unwrap();
        assert_eq!(part.num_row_blocks(), 4);
    }

    #[test]
    fn node_budget_resolves_fractions() {
        let text = block_preset().replace(
            "[fractions]\nalpha = 1.0\ngamma = 1.0",
            "[fractions]\nnode_num = 4",
        );
        let cfg = parse_config(&text).unwrap();
        let fr = cfg.sampling_fractions().unwrap();
        // 4 nodes on a 4x2 grid: all column blocks, half the row blocks.
        assert_eq!((fr.alpha, fr.gamma), (0.5, 1.0));
    }

    #[test]
    fn angle_lists_and_sweeps_expand() {
        assert_eq!(parse_angles("0, 45, 90", 1).unwrap(), vec![0.0, 45.0, 90.0]);
        assert_eq!(parse_angles("0:45:315", 1).unwrap().len(), 8);
        assert_eq!(parse_angles("12.5", 1).unwrap(), vec![12.5]);
        let err = parse_angles("0:-5:90", 7).unwrap_err().to_string();
        assert!(err.contains("line 7"), "sweep error names the line: {err}");
    }

    #[test]
    fn unknown_keys_sections_and_types_name_their_line() {
        let text = block_preset().replace("pitch = 1.0", "pitch = 1.0\nbanana = 2");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("banana") && err.contains("geometry"), "{err}");
        assert!(err.contains("line"), "{err}");

        let text = block_preset() + "\n[extras]\nfoo = 1\n";
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("[extras]") || err.contains("extras"), "{err}");

        let text = block_preset().replace("k = 16", "k = sixteen");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("sixteen") && err.contains("whole number"), "{err}");
    }

    #[test]
    fn empty_files_list_the_missing_sections() {
        let err = parse_config("# nothing here\n").unwrap_err().to_string();
        for name in ["geometry", "partition", "method", "run"] {
            assert!(err.contains(name), "missing `{name}` in: {err}");
        }
    }

    #[test]
    fn method_specific_requirements_are_enforced() {
        // A TV method without a [tv] section is refused.
        let text = block_preset()
            .replace("name = bsgd", "name = bsgd_tv")
            .replace("[tv]\nlambda = 0.1\n", "");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("tv") && err.contains("lambda"), "{err}");

        // A gradient method without a step is refused.
        let text = block_preset()
            .replace(
                "[tuning]\nenabled = true\nmu0 = 0.0004\ndelta = 0.4\ndirection_gate = false\n",
                "",
            )
            .replace("name = bsgd", "name = gd");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("mu0"), "{err}");

        // SIRT runs on relaxation alone.
        let text = block_preset()
            .replace(
                "[tuning]\nenabled = true\nmu0 = 0.0004\ndelta = 0.4\ndirection_gate = false\n",
                "",
            )
            .replace("name = bsgd", "name = sirt");
        assert!(parse_config(&text).is_ok());

        // Mixing the two fraction forms is refused.
        let text = block_preset().replace(
            "[fractions]\nalpha = 1.0\ngamma = 1.0",
            "[fractions]\nnode_num = 2\nalpha = 0.5\ngamma = 0.5",
        );
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("node_num"), "{err}");
    }
}
