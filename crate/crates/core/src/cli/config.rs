//! Run configuration files and shared argument parsers.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::Failure;

/// Every key a run file may set. Command-line flags take precedence; keys a
/// command does not use are ignored by it, unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // paths
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train_vol: Option<PathBuf>,
    pub op: Option<PathBuf>,
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub mask: Option<PathBuf>,

    // volumes and seeds
    pub dims: Option<[usize; 3]>,
    pub seed: Option<u64>,
    pub noise_seed: Option<u64>,

    // training set and operator shapes
    pub patch: Option<[usize; 3]>,
    pub shape: Option<Vec<[usize; 2]>>,
    pub train_count: Option<usize>,
    pub flat_tol: Option<f64>,

    // learning
    pub nu: Option<f64>,
    pub kappa: Option<f64>,
    pub mu: Option<f64>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub ls_history_decay: Option<f64>,
    pub ls_sufficient_decrease: Option<f64>,
    pub ls_backtrack: Option<f64>,
    pub ls_max_trials: Option<usize>,

    // reconstruction
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub rate: Option<f64>,
    pub stride: Option<usize>,
    pub recon_nu: Option<f64>,
    pub recon_max_iters: Option<usize>,
    pub recon_grad_tol: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::validation(format!("config {}: {e}", path.display())))
    }
}

/// `32,32,32` → `[32, 32, 32]`.
pub fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let out = parse_index(s)?;
    if out.contains(&0) {
        return Err(format!("sizes must be positive, got {s:?}"));
    }
    Ok(out)
}

/// Like [`parse_dims`] but zero is allowed.
pub fn parse_index(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated sizes, got {s:?}"));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("{p:?} is not a non-negative integer"))?;
    }
    Ok(out)
}

/// Factor shapes given as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeList(pub Vec<[usize; 2]>);

/// `6x5,6x5,6x5` → `[[6, 5], [6, 5], [6, 5]]`.
pub fn parse_shapes(s: &str) -> Result<ShapeList, String> {
    s.split(',')
        .map(|part| {
            let (k, n) = part
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| format!("expected KxN, got {part:?}"))?;
            let k = k.trim().parse().map_err(|_| format!("{k:?} is not an integer"))?;
            let n = n.trim().parse().map_err(|_| format!("{n:?} is not an integer"))?;
            Ok([k, n])
        })
        .collect::<Result<_, String>>()
        .map(ShapeList)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_shapes_parse() {
        assert_eq!(parse_dims("32, 16,8").unwrap(), [32, 16, 8]);
        assert!(parse_dims("32,16").is_err());
        assert!(parse_dims("32,0,8").is_err());
        assert!(parse_dims("a,b,c").is_err());
        assert_eq!(parse_index("0,3,0").unwrap(), [0, 3, 0]);
        assert_eq!(parse_shapes("6x5,7X5").unwrap().0, vec![[6, 5], [7, 5]]);
        assert!(parse_shapes("6-5").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("nu = 10.0\nlambda = 2.0").is_ok());
        let err = toml::from_str::<RunConfig>("nu = 10.0\nlamda = 2.0").unwrap_err();
        assert!(err.to_string().contains("lamda"));
    }
}
