//! The JSON run configuration.
//!
//! One file drives every subcommand; each command reads only the sections it
//! needs, and every semantic complaint names the offending field so a bad
//! config can be fixed without reading source code.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gradgibbs::lattice::Torus;
use gradgibbs::potential::{self, Atom, MixtureMeasure};
use gradgibbs::sampler::{ChainConfig, PhiUpdate};
use gradgibbs::scaling::TestFunctionSpec;

use crate::{CliError, CliResult};

pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream in a run derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub torus: Option<TorusConfig>,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub walk: WalkSection,
    #[serde(default)]
    pub corrector: CorrectorSection,
    #[serde(default)]
    pub decay: DecaySection,
    #[serde(default)]
    pub gff: GffSection,
}

impl RunConfig {
    pub fn measure(&self) -> CliResult<MixtureMeasure> {
        self.model
            .as_ref()
            .ok_or_else(|| bad("model", "section is required by this subcommand"))?
            .measure()
    }

    pub fn torus(&self) -> CliResult<Torus> {
        let t = self
            .torus
            .as_ref()
            .ok_or_else(|| bad("torus", "section is required by this subcommand"))?;
        Torus::new(t.d, t.l).map_err(|e| bad("torus", e))
    }

    /// Config echo stored in manifests and reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run configuration serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Mixture atoms; weights need not be normalized.
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    /// Two-atom mixture placed on its self-dual line, instead of explicit
    /// weights.  Mutually exclusive with `atoms`.
    #[serde(default)]
    pub self_dual: Option<SelfDualConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub kappa: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfDualConfig {
    pub kappa1: f64,
    pub kappa2: f64,
}

impl ModelConfig {
    pub fn measure(&self) -> CliResult<MixtureMeasure> {
        match (&self.atoms[..], &self.self_dual) {
            ([], Some(sd)) => {
                let p = potential::self_dual_p(sd.kappa1, sd.kappa2)
                    .map_err(|e| bad("model.self_dual", e))?;
                MixtureMeasure::two_atom(sd.kappa1, sd.kappa2, p)
                    .map_err(|e| bad("model.self_dual", e))
            }
            (atoms, None) if !atoms.is_empty() => MixtureMeasure::new(
                atoms
                    .iter()
                    .map(|a| Atom {
                        kappa: a.kappa,
                        weight: a.weight,
                    })
                    .collect(),
            )
            .map_err(|e| bad("model.atoms", e)),
            ([], None) => Err(bad("model", "give `atoms` or `self_dual`")),
            _ => Err(bad("model", "`atoms` and `self_dual` are mutually exclusive")),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Sweeps between emitted samples.
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    /// Number of emitted samples.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub phi_update: PhiUpdateConfig,
    /// Which fields each emitted sample archives.
    #[serde(default)]
    pub record: RecordKinds,
}

fn default_burn_in() -> usize {
    500
}
fn default_thinning() -> usize {
    4
}
fn default_samples() -> usize {
    1000
}

impl Default for ChainSection {
    fn default() -> Self {
        ChainSection {
            burn_in: default_burn_in(),
            thinning: default_thinning(),
            samples: default_samples(),
            phi_update: PhiUpdateConfig::default(),
            record: RecordKinds::default(),
        }
    }
}

impl ChainSection {
    /// Chain parameters with the obvious stall modes rejected.
    pub fn checked(&self, seed: u64) -> CliResult<ChainConfig> {
        if self.thinning == 0 {
            return Err(bad("chain.thinning", "must be at least 1"));
        }
        if let PhiUpdateConfig::HeatBath { sweeps: 0 } = self.phi_update {
            return Err(bad("chain.phi_update.heat_bath.sweeps", "must be at least 1"));
        }
        Ok(ChainConfig {
            seed,
            burn_in: self.burn_in,
            thinning: self.thinning,
            phi_update: self.phi_update.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiUpdateConfig {
    /// One exact conditional draw per sweep.
    #[default]
    Exact,
    /// Checkerboard heat-bath passes per sweep.
    HeatBath { sweeps: usize },
}

impl From<PhiUpdateConfig> for PhiUpdate {
    fn from(c: PhiUpdateConfig) -> PhiUpdate {
        match c {
            PhiUpdateConfig::Exact => PhiUpdate::Exact,
            PhiUpdateConfig::HeatBath { sweeps } => PhiUpdate::HeatBath { sweeps },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKinds {
    Heights,
    Conductances,
    #[default]
    Both,
}

impl RecordKinds {
    pub fn heights(self) -> bool {
        self != RecordKinds::Conductances
    }
    pub fn conductances(self) -> bool {
        self != RecordKinds::Heights
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default)]
    pub source: EnvSource,
    /// Number of environments.
    #[serde(default = "default_env_count")]
    pub count: usize,
    /// Conductance archive read when `source` is `"archive"`.
    #[serde(default)]
    pub archive: Option<PathBuf>,
}

fn default_env_count() -> usize {
    8
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            source: EnvSource::default(),
            count: default_env_count(),
            archive: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSource {
    /// Edge conductances drawn iid from the mixture prior.
    #[default]
    Iid,
    /// Thinned conductance marginals of a joint Gibbs chain.
    Chain,
    /// Conductance records from a `sample` archive.
    Archive,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSection {
    /// Walk horizon per path.
    #[serde(default = "default_walk_t")]
    pub t: f64,
    #[serde(default = "default_paths")]
    pub paths_per_env: usize,
}

fn default_walk_t() -> f64 {
    100.0
}
fn default_paths() -> usize {
    1024
}

impl Default for WalkSection {
    fn default() -> Self {
        WalkSection {
            t: default_walk_t(),
            paths_per_env: default_paths(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorSection {
    #[serde(default = "default_corr_tol")]
    pub tol: f64,
    /// Also archive the corrector components as site records.
    #[serde(default)]
    pub write_fields: bool,
}

fn default_corr_tol() -> f64 {
    1e-8
}

impl Default for CorrectorSection {
    fn default() -> Self {
        CorrectorSection {
            tol: default_corr_tol(),
            write_fields: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_decay_points")]
    pub points: usize,
}

fn default_t_min() -> f64 {
    10.0
}
fn default_t_max() -> f64 {
    200.0
}
fn default_decay_points() -> usize {
    8
}

impl Default for DecaySection {
    fn default() -> Self {
        DecaySection {
            t_min: default_t_min(),
            t_max: default_t_max(),
            points: default_decay_points(),
        }
    }
}

impl DecaySection {
    /// Log-spaced sampling times.
    pub fn times(&self) -> CliResult<Vec<f64>> {
        if !(self.t_min > 0.0 && self.t_max > self.t_min) {
            return Err(bad("decay", "need 0 < t_min < t_max"));
        }
        if self.points < 3 {
            return Err(bad("decay.points", "need at least 3 for a slope fit"));
        }
        let n = self.points;
        Ok((0..n)
            .map(|i| {
                let frac = i as f64 / (n - 1) as f64;
                self.t_min * (self.t_max / self.t_min).powf(frac)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GffSection {
    /// Lattice spacing of the rescaled test functions.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_test_functions")]
    pub test_functions: Vec<TestFunctionConfig>,
    /// Batch count for batch-mean standard errors.
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Absolute slack added to 3 SE in the real-part comparison.
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Height archive read when not running end-to-end.
    #[serde(default)]
    pub archive: Option<PathBuf>,
    /// Effective matrix used for the prediction when not running
    /// end-to-end.
    #[serde(default)]
    pub qhat: Option<QhatConfig>,
    /// Multiplies the effective matrix before predicting; leave at 1 except
    /// for negative controls.
    #[serde(default = "default_qhat_scale")]
    pub qhat_scale: f64,
    /// Extra scales for the quadratic-form scan table (empty = skip).
    #[serde(default)]
    pub scan_epsilons: Vec<f64>,
}

fn default_epsilon() -> f64 {
    0.0625
}
fn default_batches() -> usize {
    40
}
fn default_slack() -> f64 {
    0.05
}
fn default_qhat_scale() -> f64 {
    1.0
}
fn default_test_functions() -> Vec<TestFunctionConfig> {
    vec![TestFunctionConfig {
        name: None,
        amplitude: 1.0,
        radii: vec![0.45, 0.45],
        angle: 0.0,
    }]
}

impl Default for GffSection {
    fn default() -> Self {
        GffSection {
            epsilon: default_epsilon(),
            test_functions: default_test_functions(),
            batches: default_batches(),
            slack: default_slack(),
            archive: None,
            qhat: None,
            qhat_scale: default_qhat_scale(),
            scan_epsilons: Vec::new(),
        }
    }
}

impl GffSection {
    /// Named test functions, validated.
    pub fn specs(&self) -> CliResult<Vec<(String, TestFunctionSpec)>> {
        if self.test_functions.is_empty() {
            return Err(bad("gff.test_functions", "need at least one"));
        }
        self.test_functions
            .iter()
            .enumerate()
            .map(|(i, tf)| {
                let name = tf.name.clone().unwrap_or_else(|| format!("f{i}"));
                let spec = TestFunctionSpec::new(tf.amplitude, tf.radii.clone(), tf.angle)
                    .map_err(|e| bad(&format!("gff.test_functions[{i}]"), e))?;
                Ok((name, spec))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    pub radii: Vec<f64>,
    #[serde(default)]
    pub angle: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

/// Where the effective matrix for the prediction comes from: an inline
/// row-major matrix or the JSON report of a `homogenize` run (exactly one).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QhatConfig {
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub report: Option<PathBuf>,
}
