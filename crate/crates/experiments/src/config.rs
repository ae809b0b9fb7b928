//! Experiment configuration: one JSON file per run.
//!
//! Unknown keys are rejected, parse errors carry the offending key path and
//! line/column, and every omitted field falls back to a documented default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stopflow::model::DEFAULT_GBM_CAP;
use stopflow::{GbmParams, LagSpec};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Equivalence,
    Convergence,
    GbmDelay,
    ViAudit,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::Equivalence,
        ExperimentKind::Convergence,
        ExperimentKind::GbmDelay,
        ExperimentKind::ViAudit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Equivalence => "equivalence",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::GbmDelay => "gbm-delay",
            ExperimentKind::ViAudit => "vi-audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBlock {
    pub seed: u64,
    pub max_depth: usize,
    pub max_branching: usize,
}

impl Default for RandomBlock {
    fn default() -> Self {
        Self {
            seed: 0,
            max_depth: 4,
            max_branching: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gbm: Option<GbmParams<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag: Option<LagSpec>,
    #[serde(default)]
    pub random: RandomBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Caps {
    /// At most 64.
    pub max_leaves: usize,
    /// Horizon limit for exhaustive enumeration.
    pub max_periods: usize,
    /// Random trees with more stopping times are redrawn; enumeration
    /// refuses beyond this.
    pub max_stopping_times: f64,
    /// Number of branching steps on a GBM lattice.
    pub max_gbm_shocks: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_leaves: 64,
            max_periods: 6,
            max_stopping_times: 1.0e5,
            max_gbm_shocks: 12,
        }
    }
}

/// Control audited by `vi-audit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Candidate {
    /// The optimizer's output.
    #[default]
    Optimal,
    /// Half the mass spent at time 0, the rest at the optimal time.
    Suboptimal,
    /// `xi = 0`, an extended-class control.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub n_values: Vec<u32>,
    pub delta_values: Vec<usize>,
    /// Random instances, seeded `seed, seed + 1, ...`.
    pub instances: usize,
    /// Random controls tried against each optimum.
    pub control_samples: usize,
    /// Random perturbations per audited instance.
    pub perturbations: usize,
    /// Finite-difference steps, largest first.
    pub fd_steps: Vec<f64>,
    /// Added to random rewards in `vi-audit`.
    pub reward_shift: f64,
    pub candidate: Candidate,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            n_values: vec![1, 4, 16, 64, 256, 1024],
            delta_values: vec![0, 1, 2, 3, 4, 5],
            instances: 200,
            control_samples: 20,
            perturbations: 50,
            fd_steps: vec![1e-3, 1e-4, 1e-5],
            reward_shift: 10.0,
            candidate: Candidate::Optimal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Directory for `record.json`, the CSV tables and `timing.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub csv: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Lattice used by `convergence` when no `model.gbm` is given.
pub fn default_convergence_gbm() -> GbmParams<f64> {
    GbmParams {
        x0: 1.0,
        mu: 0.0,
        sigma: 0.3,
        rho: 1.0,
        a: 1.0,
        horizon: 1.0,
        periods: 20,
        shock_every: 5,
    }
}

/// Lattice used by `gbm-delay` when no `model.gbm` is given.
pub fn default_delay_gbm() -> GbmParams<f64> {
    GbmParams {
        x0: 1.0,
        mu: 0.05,
        sigma: 0.3,
        rho: 0.5,
        a: 1.0,
        horizon: 1.0,
        periods: 20,
        shock_every: 2,
    }
}

/// Extra lattice instance audited by `vi-audit` when no `model.gbm` is given.
pub fn default_audit_gbm() -> GbmParams<f64> {
    GbmParams {
        x0: 1.0,
        mu: 0.1,
        sigma: 0.5,
        rho: 0.3,
        a: 0.25,
        horizon: 1.0,
        periods: 8,
        shock_every: 1,
    }
}

impl ExperimentConfig {
    /// The configuration a subcommand runs when no file is given; same as a
    /// file holding only `kind`.
    pub fn default_for(kind: ExperimentKind) -> Self {
        Self {
            kind,
            model: ModelBlock::default(),
            caps: Caps::default(),
            sweep: Sweep::default(),
            output: OutputSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            RunError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            RunError::Config(msg) => RunError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the compact JSON form with model defaults filled in, hex
    /// encoded. Output paths are not part of the experiment and are left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.model.gbm = Some(self.gbm());
        canonical.model.lag = Some(self.lag());
        canonical.output.dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// GBM parameters for kinds that use a lattice.
    pub fn gbm(&self) -> GbmParams<f64> {
        self.model.gbm.unwrap_or_else(|| match self.kind {
            ExperimentKind::Convergence => default_convergence_gbm(),
            ExperimentKind::GbmDelay => default_delay_gbm(),
            _ => default_audit_gbm(),
        })
    }

    /// Information lag; `vi-audit` defaults to a two-step delay, the others
    /// to full information.
    pub fn lag(&self) -> LagSpec {
        self.model.lag.unwrap_or(match self.kind {
            ExperimentKind::ViAudit => LagSpec::delayed(2),
            _ => LagSpec::delayed(0),
        })
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Config(msg));
        let caps = &self.caps;
        if caps.max_leaves == 0 || caps.max_leaves > 64 {
            return bad(format!("caps.max_leaves = {} must be in 1..=64", caps.max_leaves));
        }
        if caps.max_periods == 0 || caps.max_periods > 6 {
            return bad(format!("caps.max_periods = {} must be in 1..=6", caps.max_periods));
        }
        if !(caps.max_stopping_times >= 1.0 && caps.max_stopping_times <= 5.0e6) {
            return bad(format!(
                "caps.max_stopping_times = {} must be in [1, 5e6]",
                caps.max_stopping_times
            ));
        }
        if caps.max_gbm_shocks == 0 || caps.max_gbm_shocks > DEFAULT_GBM_CAP {
            return bad(format!(
                "caps.max_gbm_shocks = {} must be in 1..={DEFAULT_GBM_CAP}",
                caps.max_gbm_shocks
            ));
        }
        let r = &self.model.random;
        if r.max_depth == 0 || r.max_depth > caps.max_periods {
            return bad(format!(
                "model.random.max_depth = {} must be in 1..={}",
                r.max_depth, caps.max_periods
            ));
        }
        if r.max_branching == 0 || r.max_branching > 3 {
            return bad(format!(
                "model.random.max_branching = {} must be in 1..=3",
                r.max_branching
            ));
        }
        if let Some(g) = &self.model.gbm {
            g.validate().map_err(|e| RunError::Config(format!("model.gbm: {e}")))?;
            if g.periods.div_ceil(g.shock_every) > caps.max_gbm_shocks {
                return bad(format!(
                    "model.gbm: {} shocks exceed caps.max_gbm_shocks = {}",
                    g.periods.div_ceil(g.shock_every),
                    caps.max_gbm_shocks
                ));
            }
        }
        if let Some(lag) = &self.model.lag {
            if lag.delta_steps > self.gbm().periods {
                return bad(format!(
                    "model.lag.delta_steps = {} exceeds model.gbm.N = {}",
                    lag.delta_steps,
                    self.gbm().periods
                ));
            }
        }
        let s = &self.sweep;
        match self.kind {
            ExperimentKind::Equivalence => {
                if s.instances == 0 {
                    return bad("sweep.instances must be >= 1".into());
                }
            }
            ExperimentKind::Convergence => {
                if s.n_values.is_empty() {
                    return bad("sweep.n_values must be nonempty".into());
                }
                if s.n_values.contains(&0) {
                    return bad("sweep.n_values entries must be >= 1".into());
                }
            }
            ExperimentKind::GbmDelay => {
                if s.delta_values.is_empty() {
                    return bad("sweep.delta_values must be nonempty".into());
                }
                if self.model.lag.is_some() {
                    return bad("model.lag is not used by gbm-delay; list delays in sweep.delta_values".into());
                }
                let n = self.gbm().periods;
                if let Some(d) = s.delta_values.iter().find(|&&d| d > n) {
                    return bad(format!("sweep.delta_values entry {d} exceeds model.gbm.N = {n}"));
                }
            }
            ExperimentKind::ViAudit => {
                if s.perturbations == 0 {
                    return bad("sweep.perturbations must be >= 1".into());
                }
                if s.fd_steps.len() < 2 {
                    return bad("sweep.fd_steps needs at least two steps".into());
                }
                if s.fd_steps.iter().any(|&y| !(y > 0.0 && y <= 0.5)) {
                    return bad("sweep.fd_steps entries must be in (0, 0.5]".into());
                }
                if s.fd_steps.windows(2).any(|w| w[0] <= w[1]) {
                    return bad("sweep.fd_steps must be strictly decreasing".into());
                }
                if !s.reward_shift.is_finite() {
                    return bad("sweep.reward_shift must be finite".into());
                }
            }
        }
        Ok(())
    }
}

/// Text printed by `--print-schema`.
pub const SCHEMA: &str = r#"Experiment configuration (JSON). Unknown keys are rejected.

{
  "kind": "equivalence" | "convergence" | "gbm-delay" | "vi-audit",   required
  "model": {
    "gbm": {                       binomial lattice, reward exp(-rho t) (X(t) - a)
      "x0": number > 0,
      "mu": number,
      "sigma": number > 0,
      "rho": number >= 0,
      "a": number >= 0,
      "T": number > 0,            horizon
      "N": integer >= 1,          number of periods
      "shock_every": integer >= 1 (default 1): branch every this many periods
    },                             default depends on kind; unused by equivalence
    "lag": {                       information given to the stopper (default: none)
      "delta_steps": integer <= N,
      "direction": "delayed" | "advanced"
    },                             convergence and vi-audit; vi-audit defaults to 2 steps delayed
    "random": {                    random scenario trees
      "seed": integer (default 0), instance i uses seed + i
      "max_depth": integer in 1..=caps.max_periods (default 4),
      "max_branching": integer in 1..=3 (default 3)
    }
  },
  "caps": {
    "max_leaves": integer in 1..=64 (default 64),
    "max_periods": integer in 1..=6 (default 6),
    "max_stopping_times": number in [1, 5e6] (default 1e5),
    "max_gbm_shocks": integer in 1..=25 (default 12)
  },
  "sweep": {
    "n_values": [integer >= 1] (default [1, 4, 16, 64, 256, 1024]),   convergence
    "delta_values": [integer <= N] (default [0, 1, 2, 3, 4, 5]),        gbm-delay
    "instances": integer >= 1 (default 200): random trees
    "control_samples": integer (default 20): random controls per instance, equivalence
    "perturbations": integer >= 1 (default 50): per instance, vi-audit
    "fd_steps": [number] decreasing, in (0, 0.5] (default [1e-3, 1e-4, 1e-5])
    "reward_shift": number (default 10): added to random rewards in vi-audit
    "candidate": "optimal" | "suboptimal" | "idle" (default "optimal"): vi-audit
  },
  "output": {
    "dir": path (default: none, record printed to stdout),
    "csv": boolean (default true)
  }
}

Randomness: ChaCha8 seeded with the 64-bit seed (rand_chacha `seed_from_u64`).
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "equivalence"}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::default_for(ExperimentKind::Equivalence));
        assert_eq!(cfg.sweep.instances, 200);
        assert_eq!(cfg.lag(), LagSpec::delayed(0));
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::default_for(kind);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn errors_name_the_key() {
        let err = ExperimentConfig::from_json(r#"{"kind": "convergence", "model": {"gbm": {"x0": "one"}}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("model.gbm.x0"), "{err}");
        assert!(err.contains("line 1"), "{err}");

        let err = ExperimentConfig::from_json(r#"{"kind": "equivalence", "sweep": {"seeds": 3}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("sweep"), "{err}");
        assert!(err.contains("seeds"), "{err}");
    }

    #[test]
    fn invariants_are_enforced() {
        let cases = [
            r#"{"kind": "convergence", "sweep": {"n_values": []}}"#,
            r#"{"kind": "gbm-delay", "sweep": {"delta_values": []}}"#,
            r#"{"kind": "gbm-delay", "sweep": {"delta_values": [30]}}"#,
            r#"{"kind": "equivalence", "caps": {"max_leaves": 65}}"#,
            r#"{"kind": "equivalence", "model": {"random": {"seed": 1, "max_depth": 7, "max_branching": 2}}}"#,
            r#"{"kind": "vi-audit", "sweep": {"fd_steps": [1e-4, 1e-3]}}"#,
            r#"{"kind": "convergence", "model": {"gbm": {"x0": 1, "mu": 0, "sigma": 0.3, "rho": 0, "a": 1, "T": 1, "N": 20}}}"#,
        ];
        for text in cases {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(RunError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default_for(ExperimentKind::Convergence);
        let mut b = a.clone();
        b.output.dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.model.gbm = Some(default_convergence_gbm());
        assert_eq!(a.hash(), b.hash());
        b.sweep.n_values.push(4096);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
