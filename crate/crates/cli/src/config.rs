use std::path::{Path, PathBuf};

use hopfkit::continuation::{CorrectorOptions, MatchWindow};
use hopfkit::verify::{ProblemKind, VerifyConfig};
use hopfkit::{ex1_build, ex2_build, EvolutionProblem, Example1Config, Example2Config, HopfError, Result};
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Corrector tolerance relative to `max(|α|, 1)·‖A u★‖_Y`.
    pub newton: Option<f64>,
    /// Allowed distance between a candidate orbit and its branch point.
    #[serde(rename = "match")]
    pub matching: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Window {
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub norm_x: Option<f64>,
}

/// Contents of `--config`; every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub problem: Option<ProblemKind>,
    pub example1: Example1Config,
    pub example2: Example2Config,
    pub nt: Option<usize>,
    pub tolerances: Tolerances,
    pub window: Window,
    pub k_max: Option<u32>,
    pub n_max: Option<u32>,
    pub alpha_max: Option<f64>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HopfError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HopfError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: Option<ProblemKind>,
    pub example1: Example1Config,
    pub example2: Example2Config,
    pub nt: usize,
    pub corrector: CorrectorOptions,
    pub window: MatchWindow,
    pub k_max: u32,
    pub n_max: u32,
    pub alpha_max: f64,
    pub steps: usize,
    pub out: Option<PathBuf>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(HopfError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn resolve(file: FileConfig, problem: Option<&str>, out: Option<PathBuf>) -> Result<Self> {
        let problem = match problem {
            Some(s) => Some(s.parse()?),
            None => file.problem,
        };
        file.example1.validate()?;
        file.example2.validate()?;
        let nt = file.nt.unwrap_or(8);
        if !(1..=64).contains(&nt) {
            return Err(HopfError::Config(format!("nt must be in 1..=64, got {nt}")));
        }
        let mut corrector = CorrectorOptions::default();
        if let Some(t) = file.tolerances.newton {
            corrector.tol = positive("tolerances.newton", t)?;
        }
        let mut window = MatchWindow::default();
        if let Some(t) = file.tolerances.matching {
            window.tol = positive("tolerances.match", t)?;
        }
        if let Some(v) = file.window.lambda {
            window.lambda = positive("window.lambda", v)?;
        }
        if let Some(v) = file.window.sigma {
            window.sigma = positive("window.sigma", v)?;
        }
        if let Some(v) = file.window.norm_x {
            window.norm_x = positive("window.norm_x", v)?;
        }
        Ok(RunConfig {
            problem,
            example1: file.example1,
            example2: file.example2,
            nt,
            corrector,
            window,
            k_max: file.k_max.unwrap_or(8),
            n_max: file.n_max.unwrap_or(64),
            alpha_max: file.alpha_max.unwrap_or(0.5),
            steps: file.steps.unwrap_or(50),
            out: out.or(file.out),
        })
    }

    pub fn require_problem(&self) -> Result<ProblemKind> {
        self.problem
            .ok_or_else(|| HopfError::Config("no problem selected (use --problem example1|example2)".into()))
    }

    pub fn build(&self, kind: ProblemKind) -> Result<EvolutionProblem> {
        match kind {
            ProblemKind::Example1 => ex1_build(&self.example1, self.nt),
            ProblemKind::Example2 => ex2_build(&self.example2, self.nt),
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            ex1: self.example1.clone(),
            ex2: self.example2.clone(),
            nt: self.nt,
            n_max: self.n_max,
            ..VerifyConfig::default()
        }
    }
}
