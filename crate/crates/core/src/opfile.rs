//! Text format for learned operators.
//!
//! ```text
//! maol-operator 1
//! nu 1000.0
//! kappa 500.0
//! mu 0.5
//! patch 5,5,5
//! train_count 20000
//! seed 7
//! modes 3
//! mode 1 6 5
//! <6 lines of 5 space-separated coefficients>
//! mode 2 6 5
//! …
//! ```
//!
//! Header keys other than `modes` are optional and may appear in any order;
//! unknown keys are rejected. Coefficients are written with Rust's shortest
//! round-trip formatting, so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifold::{OperatorFactor, ProductPoint};
use crate::objective::LearningParams;
use crate::tensor::RealMatrix;

const MAGIC: &str = "maol-operator 1";

/// Provenance stored alongside the factors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperatorMeta {
    pub params: Option<LearningParams>,
    pub patch_dims: Option<Vec<usize>>,
    pub train_count: Option<usize>,
    pub seed: Option<u64>,
    pub flat_tol: Option<f64>,
    pub iterations: Option<usize>,
    pub termination: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFile {
    pub point: ProductPoint,
    pub meta: OperatorMeta,
}

impl OperatorFile {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        writeln!(s, "{MAGIC}").unwrap();
        if let Some(p) = &m.params {
            writeln!(s, "nu {:?}\nkappa {:?}\nmu {:?}", p.nu, p.kappa, p.mu).unwrap();
        }
        if let Some(d) = &m.patch_dims {
            let d: Vec<String> = d.iter().map(ToString::to_string).collect();
            writeln!(s, "patch {}", d.join(",")).unwrap();
        }
        if let Some(t) = m.train_count {
            writeln!(s, "train_count {t}").unwrap();
        }
        if let Some(v) = m.seed {
            writeln!(s, "seed {v}").unwrap();
        }
        if let Some(v) = m.flat_tol {
            writeln!(s, "flat_tol {v:?}").unwrap();
        }
        if let Some(v) = m.iterations {
            writeln!(s, "iterations {v}").unwrap();
        }
        if let Some(v) = &m.termination {
            writeln!(s, "termination {v}").unwrap();
        }
        writeln!(s, "modes {}", self.point.order()).unwrap();
        for (i, f) in self.point.factors().iter().enumerate() {
            let (k, n) = f.shape();
            writeln!(s, "mode {} {k} {n}", i + 1).unwrap();
            for r in 0..k {
                let row: Vec<String> = f.matrix().row(r).iter().map(|v| format!("{v:?}")).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let err = |line: usize, msg: String| Error::format(origin, format!("line {line}: {msg}"));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(err(n, format!("expected {MAGIC:?}, found {other:?}"))),
            None => return Err(err(1, "empty operator file".into())),
        }
        let mut meta = OperatorMeta::default();
        let (mut nu, mut kappa, mut mu) = (None, None, None);
        let modes: usize;
        loop {
            let (n, line) = lines.next().ok_or_else(|| err(0, "missing `modes` line".into()))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| err(n, format!("expected `key value`, found {line:?}")))?;
            let value = value.trim();
            let float = |v: &str| v.parse::<f64>().map_err(|e| err(n, format!("{key}: {e}")));
            let int = |v: &str| v.parse::<usize>().map_err(|e| err(n, format!("{key}: {e}")));
            match key {
                "nu" => nu = Some(float(value)?),
                "kappa" => kappa = Some(float(value)?),
                "mu" => mu = Some(float(value)?),
                "patch" => meta.patch_dims = Some(value.split(',').map(|d| int(d.trim())).collect::<Result<_>>()?),
                "train_count" => meta.train_count = Some(int(value)?),
                "seed" => meta.seed = Some(value.parse().map_err(|e| err(n, format!("seed: {e}")))?),
                "flat_tol" => meta.flat_tol = Some(float(value)?),
                "iterations" => meta.iterations = Some(int(value)?),
                "termination" => meta.termination = Some(value.to_string()),
                "modes" => {
                    modes = int(value)?;
                    break;
                }
                other => return Err(err(n, format!("unknown key {other:?}"))),
            }
        }
        meta.params = match (nu, kappa, mu) {
            (Some(nu), Some(kappa), Some(mu)) => Some(LearningParams::new(nu, kappa, mu)?),
            (None, None, None) => None,
            _ => return Err(err(0, "nu, kappa and mu must be given together".into())),
        };
        if modes == 0 {
            return Err(err(0, "modes must be positive".into()));
        }
        let mut factors = Vec::with_capacity(modes);
        for m in 1..=modes {
            let (n, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing header for mode {m}")))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (k, cols) = match parts.as_slice() {
                ["mode", idx, k, c] if idx.parse::<usize>().ok() == Some(m) => (
                    k.parse::<usize>().map_err(|e| err(n, e.to_string()))?,
                    c.parse::<usize>().map_err(|e| err(n, e.to_string()))?,
                ),
                _ => return Err(err(n, format!("expected `mode {m} <k> <n>`, found {line:?}"))),
            };
            if k == 0 || cols == 0 {
                return Err(err(n, format!("mode {m} has empty shape {k}x{cols}")));
            }
            let mut data = Vec::with_capacity(k * cols);
            for _ in 0..k {
                let (n, line) = lines
                    .next()
                    .ok_or_else(|| err(0, format!("mode {m}: truncated coefficients")))?;
                let row = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|e| err(n, format!("{v:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if row.len() != cols {
                    return Err(err(n, format!("expected {cols} coefficients, found {}", row.len())));
                }
                data.extend(row);
            }
            let matrix = RealMatrix::new(k, cols, data)?;
            factors.push(OperatorFactor::new(matrix).map_err(|e| err(n, format!("mode {m}: {e}")))?);
        }
        if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(n, format!("trailing content {extra:?}")));
        }
        Ok(Self {
            point: ProductPoint::new(factors)?,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
