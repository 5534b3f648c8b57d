//! Flat `key = value` pipeline configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::DsgaConfig;
use crate::graphs::OrientationRates;

/// Everything the batch pipeline needs, with defaults matching the
/// documented analysis setup. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    /// Marginal threshold quantile.
    pub threshold_q: f64,
    /// Number of pooled nearest neighbors for marginal fits.
    pub n_neighbors: usize,
    /// Dependence threshold on the unit-Pareto scale.
    pub pareto_u: f64,
    /// Number of spatial clusters.
    pub k_clusters: usize,
    /// Window width and step, in seasons.
    pub window_width: usize,
    pub window_step: usize,
    /// Include diagonal lattice edges.
    pub diagonals: bool,
    /// Raw random-tree draws per cluster ensemble.
    pub ensemble_size: usize,
    /// Exponential rates for the orientation-specific edge draws.
    pub rate_h: f64,
    pub rate_v: f64,
    pub rate_d1: f64,
    pub rate_d2: f64,
    /// DSGA constants.
    pub dsga_a1: f64,
    pub dsga_rho0: f64,
    pub dsga_kappa: f64,
    pub dsga_batch: usize,
    pub dsga_max_iter: usize,
    pub dsga_tol: f64,
    pub dsga_patience: usize,
    /// Quantile level of the empirical chi estimates.
    pub chi_q: f64,
    /// Graph-distance cap of the pair set in the bias-scale loss.
    pub chi_max_hops: usize,
    /// Mixture samples per risk aggregate.
    pub risk_samples: usize,
    /// Top-level seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Worker threads for cluster-window fits.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let dsga = DsgaConfig::default();
        Self {
            threshold_q: 0.95,
            n_neighbors: 4,
            pareto_u: 20.0,
            k_clusters: 50,
            window_width: 10,
            window_step: 1,
            diagonals: true,
            ensemble_size: 100,
            rate_h: 1.0,
            rate_v: 1.0,
            rate_d1: 1.0,
            rate_d2: 1.0,
            dsga_a1: dsga.a1,
            dsga_rho0: dsga.rho0,
            dsga_kappa: dsga.kappa,
            dsga_batch: dsga.batch,
            dsga_max_iter: dsga.max_iter,
            dsga_tol: dsga.tol,
            dsga_patience: dsga.patience,
            chi_q: 0.95,
            chi_max_hops: 3,
            risk_samples: 2000,
            seed: 1,
            threads: 1,
        }
    }
}

impl PipelineConfig {
    pub fn dsga(&self) -> DsgaConfig {
        DsgaConfig {
            a1: self.dsga_a1,
            rho0: self.dsga_rho0,
            kappa: self.dsga_kappa,
            batch: self.dsga_batch,
            max_iter: self.dsga_max_iter,
            tol: self.dsga_tol,
            patience: self.dsga_patience,
        }
    }

    pub fn rates(&self) -> OrientationRates {
        OrientationRates {
            horizontal: self.rate_h,
            vertical: self.rate_v,
            diag_nw_se: self.rate_d1,
            diag_sw_ne: self.rate_d2,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Parse the flat `key = value` format; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                lineno + 1
            )))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| e.with_context(format!("config line {}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "threshold_q" => self.threshold_q = parse(key, value)?,
            "n_neighbors" => self.n_neighbors = parse(key, value)?,
            "pareto_u" => self.pareto_u = parse(key, value)?,
            "k_clusters" => self.k_clusters = parse(key, value)?,
            "window_width" => self.window_width = parse(key, value)?,
            "window_step" => self.window_step = parse(key, value)?,
            "diagonals" => self.diagonals = parse(key, value)?,
            "ensemble_size" => self.ensemble_size = parse(key, value)?,
            "rate_h" => self.rate_h = parse(key, value)?,
            "rate_v" => self.rate_v = parse(key, value)?,
            "rate_d1" => self.rate_d1 = parse(key, value)?,
            "rate_d2" => self.rate_d2 = parse(key, value)?,
            "dsga_a1" => self.dsga_a1 = parse(key, value)?,
            "dsga_rho0" => self.dsga_rho0 = parse(key, value)?,
            "dsga_kappa" => self.dsga_kappa = parse(key, value)?,
            "dsga_batch" => self.dsga_batch = parse(key, value)?,
            "dsga_max_iter" => self.dsga_max_iter = parse(key, value)?,
            "dsga_tol" => self.dsga_tol = parse(key, value)?,
            "dsga_patience" => self.dsga_patience = parse(key, value)?,
            "chi_q" => self.chi_q = parse(key, value)?,
            "chi_max_hops" => self.chi_max_hops = parse(key, value)?,
            "risk_samples" => self.risk_samples = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_q > 0.0 && self.threshold_q < 1.0) {
            return Err(Error::Config(format!(
                "threshold_q must lie in (0,1), got {}",
                self.threshold_q
            )));
        }
        if !(self.pareto_u > 1.0) {
            return Err(Error::Config(format!(
                "pareto_u must exceed 1, got {}",
                self.pareto_u
            )));
        }
        if !(self.chi_q > 0.0 && self.chi_q < 1.0) {
            return Err(Error::Config(format!(
                "chi_q must lie in (0,1), got {}",
                self.chi_q
            )));
        }
        if self.k_clusters == 0 || self.ensemble_size == 0 || self.risk_samples == 0 {
            return Err(Error::Config(
                "k_clusters, ensemble_size and risk_samples must be >= 1".into(),
            ));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.dsga().validate()
    }

    /// Canonical text form (sorted keys), the hashed config fingerprint.
    pub fn canonical_text(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let map: BTreeMap<String, serde_json::Value> =
            serde_json::from_value(json).expect("config is a flat map");
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// FNV-1a hash of the canonical text, the manifest fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in self.canonical_text().bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let cfg = PipelineConfig::from_text("").unwrap();
        assert_eq!(cfg.k_clusters, 50);
        let cfg = PipelineConfig::from_text(
            "k_clusters = 2\nwindow_width = 4 # comment\n\n# full-line comment\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.k_clusters, 2);
        assert_eq!(cfg.window_width, 4);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_text("no_such_key = 1").is_err());
        assert!(PipelineConfig::from_text("k_clusters = many").is_err());
        assert!(PipelineConfig::from_text("threshold_q = 1.5").is_err());
        assert!(PipelineConfig::from_text("just a line").is_err());
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = PipelineConfig::default();
        let mut b = PipelineConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 2;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
