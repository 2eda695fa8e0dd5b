//! Declarative run configuration with strict schema validation.
//!
//! Every field has a default taken from the reference parameter set, so an
//! empty JSON object `{}` resolves to the full default configuration.
//! Unknown keys are rejected. The fully resolved config serializes back to
//! JSON and re-parses to an identical value, which is what run directories
//! store for provenance.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Default absorption rates per oscillator level, units of κ.
pub const DEFAULT_ABSORPTION: [f64; 4] = [1.83e-12, 4.21e-12, 10.3e-12, 25.6e-12];
/// Default emission rates per oscillator level, units of κ.
pub const DEFAULT_EMISSION: [f64; 4] = [4.81e-10, 5.69e-10, 6.97e-10, 8.31e-10];
/// Default grid spacing in l_ho. With the default 2D density of 1e13/l_ho²
/// this puts exactly 1e12 molecules in each group.
pub const DEFAULT_SPACING: f64 = 0.316_227_766_016_837_94; // sqrt(0.1)
/// Default 2D molecular density per l_ho².
pub const DEFAULT_DENSITY: f64 = 1e13;
/// Default non-radiative molecular decay, κ/4.
pub const DEFAULT_GAMMA_DOWN: f64 = 0.25;
/// Quench protocol pump powers (κ).
pub const DEFAULT_QUENCH_INITIAL: f64 = 6.58e-6;
pub const DEFAULT_QUENCH_FINAL: f64 = 2e-5;
/// Pulsed protocol: average power 10^-3.2 κ, duty 0.01, period 40/κ.
pub const DEFAULT_PULSED_AVG: f64 = 6.309_573_444_801_93e-4;
/// Benchmark pump-power grid endpoints (κ): 10^-3.5 .. 10.
pub const DEFAULT_BENCH_MIN: f64 = 3.162_277_660_168_379_5e-4;
pub const DEFAULT_BENCH_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub hierarchy: HierarchyConfig,
    pub integrator: IntegratorConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Spatial dimensionality of the cavity, 1 or 2.
    pub dimensions: u8,
    /// Highest oscillator energy level; 2D mode count is Σ(level+1).
    pub max_level: u32,
    #[serde(rename = "A_per_level")]
    pub a_per_level: Vec<f64>,
    #[serde(rename = "E_per_level")]
    pub e_per_level: Vec<f64>,
    pub grid: GridConfig,
    /// Molecules per l_ho² (2D) or per l_ho (1D).
    pub density: f64,
    #[serde(rename = "Gamma_down")]
    pub gamma_down: f64,
    pub pump: PumpConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dimensions: 2,
            max_level: 3,
            a_per_level: DEFAULT_ABSORPTION.to_vec(),
            e_per_level: DEFAULT_EMISSION.to_vec(),
            grid: GridConfig::default(),
            density: DEFAULT_DENSITY,
            gamma_down: DEFAULT_GAMMA_DOWN,
            pump: PumpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub points_per_axis: usize,
    /// Lattice spacing in l_ho. Mutually exclusive with `extent`.
    pub spacing: Option<f64>,
    /// Half-width of the grid in l_ho; spacing = 2·extent/(points−1).
    pub extent: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points_per_axis: 39,
            spacing: Some(DEFAULT_SPACING),
            extent: None,
        }
    }
}

impl GridConfig {
    pub fn resolve_spacing(&self) -> Result<f64> {
        match (self.spacing, self.extent) {
            (Some(_), Some(_)) => Err(Error::config(
                "model.grid: `spacing` and `extent` are mutually exclusive",
            )),
            (Some(h), None) => Ok(h),
            (None, Some(l)) => {
                if self.points_per_axis < 2 {
                    return Err(Error::config(
                        "model.grid.extent requires points_per_axis >= 2",
                    ));
                }
                Ok(2.0 * l / (self.points_per_axis - 1) as f64)
            }
            (None, None) => Ok(DEFAULT_SPACING),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PumpConfig {
    Constant {
        #[serde(rename = "P")]
        power: f64,
    },
    Quench {
        #[serde(rename = "P_initial")]
        p_initial: f64,
        #[serde(rename = "P_final")]
        p_final: f64,
        #[serde(default)]
        t_switch: f64,
    },
    Pulsed {
        #[serde(rename = "P_avg")]
        p_avg: f64,
        duty: f64,
        period: f64,
    },
}

impl Default for PumpConfig {
    fn default() -> Self {
        PumpConfig::Quench {
            p_initial: DEFAULT_QUENCH_INITIAL,
            p_final: DEFAULT_QUENCH_FINAL,
            t_switch: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    /// Deepest level J to construct.
    pub max_level: usize,
    /// Relative singular-value cutoff separating numerical rank from noise.
    pub rank_tol: f64,
    /// Optional coarser per-level truncation threshold; defaults to
    /// `rank_tol` (keep everything above the noise floor).
    pub trunc_tol: Option<f64>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            max_level: 3,
            rank_tol: 1e-10,
            trunc_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Optional cap on the step size, 1/κ.
    pub max_step: Option<f64>,
    /// Trajectory sampling interval, 1/κ.
    pub sample_interval: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_step: None,
            sample_interval: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExperimentConfig {
    Quench {
        #[serde(rename = "P_initial")]
        p_initial: f64,
        #[serde(rename = "P_final")]
        p_final: f64,
        /// Duration of the post-quench integration, 1/κ.
        t_final: f64,
        /// Truncation levels to compare against the exact run.
        levels: Vec<usize>,
        include_exact: bool,
    },
    Pulsed {
        duty: f64,
        period: f64,
        #[serde(rename = "P_avg")]
        p_avg: f64,
        num_periods: usize,
        warmup_periods: usize,
        /// Truncation level; absent means the exact method.
        level: Option<usize>,
    },
    Benchmark {
        #[serde(rename = "P_min")]
        p_min: f64,
        #[serde(rename = "P_max")]
        p_max: f64,
        /// Number of geometrically spaced pump powers.
        count: usize,
        levels: Vec<usize>,
        /// Per-run integration cap, 1/κ.
        t_cap: f64,
    },
    Profiles {
        /// How many excitation profiles to tabulate; absent means all modes.
        count: Option<usize>,
    },
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::Quench {
            p_initial: DEFAULT_QUENCH_INITIAL,
            p_final: DEFAULT_QUENCH_FINAL,
            t_final: 200.0,
            levels: vec![0, 1, 2],
            include_exact: true,
        }
    }
}

impl ExperimentConfig {
    pub fn default_pulsed() -> Self {
        ExperimentConfig::Pulsed {
            duty: 0.01,
            period: 40.0,
            p_avg: DEFAULT_PULSED_AVG,
            num_periods: 10,
            warmup_periods: 5,
            level: None,
        }
    }

    pub fn default_benchmark() -> Self {
        ExperimentConfig::Benchmark {
            p_min: DEFAULT_BENCH_MIN,
            p_max: DEFAULT_BENCH_MAX,
            count: 33,
            levels: vec![0, 1, 2, 3],
            t_cap: 1e6,
        }
    }

    pub fn default_profiles() -> Self {
        ExperimentConfig::Profiles { count: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Quench { .. } => "quench",
            ExperimentConfig::Pulsed { .. } => "pulsed",
            ExperimentConfig::Benchmark { .. } => "benchmark",
            ExperimentConfig::Profiles { .. } => "profiles",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    /// Also write molecular-excitation snapshots into trajectory CSVs.
    pub dump_f: bool,
    /// Write hierarchy basis vectors as CSV next to the dimension report.
    pub dump_bases: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            dump_f: false,
            dump_bases: false,
        }
    }
}

impl RunConfig {
    /// Parse and validate a config file. An empty object resolves to the
    /// full default configuration.
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("invalid config at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Semantic checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.dimensions != 1 && m.dimensions != 2 {
            return Err(Error::config("model.dimensions must be 1 or 2"));
        }
        let need = m.max_level as usize + 1;
        if m.a_per_level.len() < need {
            return Err(Error::config(format!(
                "model.A_per_level needs {need} entries for max_level {}",
                m.max_level
            )));
        }
        if m.e_per_level.len() < need {
            return Err(Error::config(format!(
                "model.E_per_level needs {need} entries for max_level {}",
                m.max_level
            )));
        }
        if m.a_per_level.iter().chain(&m.e_per_level).any(|r| *r < 0.0 || !r.is_finite()) {
            return Err(Error::config("rates in A_per_level/E_per_level must be finite and >= 0"));
        }
        if m.grid.points_per_axis == 0 {
            return Err(Error::config("model.grid.points_per_axis must be positive"));
        }
        let h = m.grid.resolve_spacing()?;
        if h <= 0.0 || !h.is_finite() {
            return Err(Error::config("model.grid spacing must be positive"));
        }
        if m.density <= 0.0 || !m.density.is_finite() {
            return Err(Error::config("model.density must be positive"));
        }
        if m.gamma_down < 0.0 {
            return Err(Error::config("model.Gamma_down must be >= 0"));
        }
        validate_pump(&m.pump)?;
        let hc = &self.hierarchy;
        if !(hc.rank_tol > 0.0 && hc.rank_tol < 1.0) {
            return Err(Error::config("hierarchy.rank_tol must lie in (0, 1)"));
        }
        if let Some(t) = hc.trunc_tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config("hierarchy.trunc_tol must lie in (0, 1)"));
            }
        }
        let ic = &self.integrator;
        if ic.rel_tol <= 0.0 || ic.abs_tol <= 0.0 {
            return Err(Error::config("integrator tolerances must be positive"));
        }
        if ic.sample_interval <= 0.0 {
            return Err(Error::config("integrator.sample_interval must be positive"));
        }
        if let Some(s) = ic.max_step {
            if s <= 0.0 {
                return Err(Error::config("integrator.max_step must be positive"));
            }
        }
        self.validate_experiment()?;
        Ok(())
    }

    fn validate_experiment(&self) -> Result<()> {
        match &self.experiment {
            ExperimentConfig::Quench { p_initial, p_final, t_final, levels, .. } => {
                if p_initial == p_final {
                    return Err(Error::config(
                        "experiment.quench: P_initial and P_final must differ",
                    ));
                }
                if *p_initial < 0.0 || *p_final < 0.0 {
                    return Err(Error::config("experiment.quench: powers must be >= 0"));
                }
                if *t_final <= 0.0 {
                    return Err(Error::config("experiment.quench: t_final must be positive"));
                }
                if levels.iter().any(|l| *l > self.hierarchy.max_level) {
                    return Err(Error::config(
                        "experiment.quench: requested level exceeds hierarchy.max_level",
                    ));
                }
            }
            ExperimentConfig::Pulsed { duty, period, p_avg, num_periods, level, .. } => {
                if !(*duty > 0.0 && *duty <= 1.0) {
                    return Err(Error::config("experiment.pulsed: duty must lie in (0, 1]"));
                }
                if *period <= 0.0 {
                    return Err(Error::config("experiment.pulsed: period must be positive"));
                }
                if *p_avg < 0.0 {
                    return Err(Error::config("experiment.pulsed: P_avg must be >= 0"));
                }
                if *num_periods == 0 {
                    return Err(Error::config("experiment.pulsed: num_periods must be >= 1"));
                }
                if let Some(l) = level {
                    if *l > self.hierarchy.max_level {
                        return Err(Error::config(
                            "experiment.pulsed: level exceeds hierarchy.max_level",
                        ));
                    }
                }
            }
            ExperimentConfig::Benchmark { p_min, p_max, count, levels, t_cap } => {
                if *count < 2 {
                    return Err(Error::config("experiment.benchmark: count must be >= 2"));
                }
                if !(*p_min > 0.0 && *p_max > *p_min) {
                    return Err(Error::config(
                        "experiment.benchmark: need 0 < P_min < P_max",
                    ));
                }
                if *t_cap <= 0.0 {
                    return Err(Error::config("experiment.benchmark: t_cap must be positive"));
                }
                if levels.iter().any(|l| *l > self.hierarchy.max_level) {
                    return Err(Error::config(
                        "experiment.benchmark: requested level exceeds hierarchy.max_level",
                    ));
                }
            }
            ExperimentConfig::Profiles { .. } => {
                if self.model.dimensions != 1 {
                    return Err(Error::config(
                        "experiment.profiles requires a 1D model (model.dimensions = 1)",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form; identifies a run's exact inputs.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for b in &digest[..8] {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

fn validate_pump(pump: &PumpConfig) -> Result<()> {
    match pump {
        PumpConfig::Constant { power } => {
            if *power < 0.0 {
                return Err(Error::config("pump.constant: P must be >= 0"));
            }
        }
        PumpConfig::Quench { p_initial, p_final, .. } => {
            if *p_initial < 0.0 || *p_final < 0.0 {
                return Err(Error::config("pump.quench: powers must be >= 0"));
            }
        }
        PumpConfig::Pulsed { p_avg, duty, period } => {
            if *p_avg < 0.0 {
                return Err(Error::config("pump.pulsed: P_avg must be >= 0"));
            }
            if !(*duty > 0.0 && *duty <= 1.0) {
                return Err(Error::config("pump.pulsed: duty must lie in (0, 1]"));
            }
            if *period <= 0.0 {
                return Err(Error::config("pump.pulsed: period must be positive"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_resolves_to_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.max_level, 3);
        assert_eq!(cfg.model.a_per_level[0], 1.83e-12);
        assert_eq!(cfg.model.e_per_level[3], 8.31e-10);
        assert_eq!(cfg.model.gamma_down, 0.25);
        assert_eq!(cfg.model.grid.points_per_axis, 39);
        match cfg.experiment {
            ExperimentConfig::Quench { p_initial, p_final, .. } => {
                assert_eq!(p_initial, 6.58e-6);
                assert_eq!(p_final, 2e-5);
            }
            _ => panic!("default experiment should be the quench protocol"),
        }
    }

    #[test]
    fn negative_hierarchy_level_names_the_field() {
        let err = RunConfig::from_json(r#"{"hierarchy":{"max_level":-1}}"#).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("hierarchy.max_level"), "got: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"modle": {}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg = RunConfig::from_json(r#"{"model":{"dimensions":1,"max_level":2}}"#).unwrap();
        let echo = cfg.to_pretty_json();
        let back = RunConfig::from_json(&echo).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn quench_equal_powers_rejected() {
        let err = RunConfig::from_json(
            r#"{"experiment":{"type":"quench","P_initial":1e-5,"P_final":1e-5,
                "t_final":10.0,"levels":[0],"include_exact":true}}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("must differ"));
    }

    #[test]
    fn spacing_and_extent_are_exclusive() {
        let err = RunConfig::from_json(
            r#"{"model":{"grid":{"points_per_axis":39,"spacing":0.3,"extent":6.0}}}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("mutually exclusive"));
    }

    #[test]
    fn default_spacing_gives_1e12_molecules_per_group() {
        let cfg = RunConfig::default();
        let h = cfg.model.grid.resolve_spacing().unwrap();
        let per_group = cfg.model.density * h * h;
        assert!((per_group - 1e12).abs() < 1.0, "N_j = {per_group}");
    }
}
