//! Terminal-set synthesis pipeline and its JSON artifact.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shipsafe_core::terminal::{
    build_polytope, compute_equilibrium, linearize, synthesize, verify_nonlinear, TerminalError,
    TerminalSet, TerminalSetSpec,
};
use shipsafe_core::vessel::VesselModel;
use thiserror::Error;

use crate::config::{read_json, ConfigError};

pub const ARTIFACT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStep {
    Model,
    Equilibrium,
    Polytope,
    Lqr,
    Verification,
}

impl fmt::Display for SynthStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Model => "model",
            Self::Equilibrium => "equilibrium",
            Self::Polytope => "polytope",
            Self::Lqr => "lqr",
            Self::Verification => "verification",
        })
    }
}

#[derive(Debug, Error)]
#[error("terminal-set synthesis failed at step '{step}': {source}")]
pub struct SynthError {
    pub step: SynthStep,
    pub source: TerminalError,
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synthesis(#[from] SynthError),
    #[error("{0}: artifact was synthesized for different parameters (hash mismatch)")]
    Mismatch(PathBuf),
    #[error("{0}: artifact is not verified")]
    Unverified(PathBuf),
    #[error("{0}: unsupported artifact format {1}")]
    Format(PathBuf, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSetArtifact {
    pub format: u32,
    /// SHA-256 of the serialized synthesis spec.
    pub params_hash: String,
    pub spec: TerminalSetSpec,
    pub set: TerminalSet,
}

pub fn spec_hash(spec: &TerminalSetSpec) -> String {
    let json = serde_json::to_vec(spec).expect("spec serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the pipeline step by step so failures name their step.
pub fn synthesize_artifact(spec: &TerminalSetSpec) -> Result<TerminalSetArtifact, SynthError> {
    let at = |step| move |source| SynthError { step, source };
    let model = VesselModel::new(spec.params).map_err(|e| at(SynthStep::Model)(e.into()))?;
    let eq = compute_equilibrium(&spec.params, spec.equilibrium_surge_force).map_err(at(SynthStep::Equilibrium))?;
    if eq.state[3] != 0.0 {
        return Err(at(SynthStep::Equilibrium)(TerminalError::InvalidConfig(
            "a moving equilibrium has unbounded travel; use zero equilibrium thrust",
        )));
    }
    let bounds = spec.state_bounds().map_err(at(SynthStep::Polytope))?;
    let poly = build_polytope(spec.d_f, &bounds, &spec.inputs, &eq).map_err(at(SynthStep::Polytope))?;
    let lin = linearize(&model, &eq);
    let set = synthesize(&lin, &poly, &eq, spec.d_f, &spec.synthesis).map_err(at(SynthStep::Lqr))?;
    let set = verify_nonlinear(set, &model, &spec.inputs, &spec.verify).map_err(at(SynthStep::Verification))?;
    Ok(TerminalSetArtifact {
        format: ARTIFACT_FORMAT,
        params_hash: spec_hash(spec),
        spec: *spec,
        set,
    })
}

pub fn write_artifact(path: &Path, artifact: &TerminalSetArtifact) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(artifact).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text)
}

pub fn read_artifact(path: &Path) -> Result<TerminalSetArtifact, ArtifactError> {
    let a: TerminalSetArtifact = read_json(path)?;
    if a.format != ARTIFACT_FORMAT {
        return Err(ArtifactError::Format(path.to_owned(), a.format));
    }
    Ok(a)
}

/// Loads the artifact when given and checks it matches `spec`; synthesizes
/// otherwise.
pub fn load_or_synthesize(path: Option<&Path>, spec: &TerminalSetSpec) -> Result<TerminalSet, ArtifactError> {
    let Some(path) = path else {
        return Ok(synthesize_artifact(spec)?.set);
    };
    let a = read_artifact(path)?;
    if a.params_hash != spec_hash(spec) || a.spec != *spec {
        return Err(ArtifactError::Mismatch(path.to_owned()));
    }
    if !a.set.verified {
        return Err(ArtifactError::Unverified(path.to_owned()));
    }
    Ok(a.set)
}
