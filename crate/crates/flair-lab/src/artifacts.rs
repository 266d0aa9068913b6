//! Artifact emission: results/trace/calibration CSVs, PGM images for raster
//! tasks, and a manifest with content hashes.
//!
//! Every emitted byte is a pure function of (config, seeds) except the
//! wall-clock field in the manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use flair_core::pgm;
use flair_core::solver::StepTrace;

use crate::config::ShapeSpec;
use crate::experiment::{RunRecord, VariantOutcome};
use crate::HarnessError;

/// One manifest entry.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Manifest of all emitted files.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub wall_ms: u128,
    pub failures: Vec<(String, String)>,
    pub files: Vec<ManifestEntry>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders results.csv: one row per successful run.
pub fn render_results_csv(variants: &[VariantOutcome]) -> String {
    let mut out = String::from("variant,seed,mse,psnr_db,data_residual,posterior_w1\n");
    for v in variants {
        for r in &v.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant,
                r.seed,
                r.mse,
                r.psnr_db,
                r.data_residual,
                fmt_opt(r.posterior_w1)
            ));
        }
    }
    out
}

/// Renders one per-step trace CSV.
pub fn render_trace_csv(trace: &[StepTrace]) -> String {
    let mut out = String::from("step,t,lambda,reg_grad_norm,data_residual,hdc_iters\n");
    for s in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.step, s.t, s.lambda, s.reg_grad_norm, s.data_residual, s.hdc_iters
        ));
    }
    out
}

struct Emitter {
    outdir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Emitter {
    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.outdir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.entries.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_pgm(
        &mut self,
        rel: &str,
        signal: &[f64],
        height: usize,
        width: usize,
    ) -> Result<(), HarnessError> {
        let (body, sidecar) = pgm::encode(signal, height, width)?;
        self.write_bytes(rel, body.as_bytes())?;
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        self.write_bytes(&format!("{rel}.json"), json.as_bytes())?;
        Ok(())
    }
}

/// Writes every artifact of a run record under `outdir` and returns the
/// manifest (also written as `manifest.json`).
pub fn emit_artifacts(record: &RunRecord, outdir: &Path) -> Result<Manifest, HarnessError> {
    let mut em = Emitter {
        outdir: outdir.to_path_buf(),
        entries: Vec::new(),
    };
    std::fs::create_dir_all(outdir)?;

    if let Some(table) = &record.calibration {
        em.write_bytes("calibration.csv", table.to_csv().as_bytes())?;
    }

    if !record.variants.is_empty() {
        em.write_bytes(
            "results.csv",
            render_results_csv(&record.variants).as_bytes(),
        )?;
    }

    let single = record.variants.len() == 1;
    let raster = match record.shape {
        ShapeSpec::Raster { height, width } => Some((height, width)),
        ShapeSpec::Flat { .. } => None,
    };

    if let Some((h, w)) = raster {
        em.write_pgm("truth.pgm", &record.truth_signal, h, w)?;
        em.write_pgm("observation.pgm", &record.observation_embedding, h, w)?;
    }

    for v in &record.variants {
        let prefix = if single {
            String::new()
        } else {
            format!("{}/", v.label)
        };
        for (seed, trace) in &v.traces {
            em.write_bytes(
                &format!("{prefix}trace_{seed}.csv"),
                render_trace_csv(trace).as_bytes(),
            )?;
        }
        if let Some((h, w)) = raster {
            for (seed, recon) in &v.reconstructions {
                em.write_pgm(&format!("{prefix}recon_{seed}.pgm"), recon, h, w)?;
            }
            if let Some(var) = &v.ensemble_variance {
                em.write_pgm(&format!("{prefix}variance.pgm"), var, h, w)?;
            }
        }
    }

    let mut entries = em.entries;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let mut failures: Vec<(String, String)> = record
        .failures
        .iter()
        .cloned()
        .chain(record.variants.iter().flat_map(|v| {
            v.failures
                .iter()
                .map(|(seed, msg)| (format!("{}/seed_{seed}", v.label), msg.clone()))
        }))
        .collect();
    failures.sort();

    let manifest = Manifest {
        config_hash: record.config_hash.clone(),
        wall_ms: record.wall_ms,
        failures,
        files: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    std::fs::write(outdir.join("manifest.json"), json)?;
    Ok(manifest)
}
