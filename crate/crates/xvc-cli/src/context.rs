//! Experiment configuration and output plumbing.
//!
//! Every experiment runs off one effective [`ConfigDoc`]: the experiment's
//! built-in defaults, overlaid section-by-section with the user's `--config`
//! file, then patched by the `--seed/--out/--sweep` flags. The document's
//! hash is stamped into every CSV so results name their configuration, and
//! identical documents yield byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use xvc_core::camera::CameraIntrinsics;
use xvc_core::config::{ConfigDoc, Section};
use xvc_core::error::{Error, Result};
use xvc_core::rng::SplitMix64;
use xvc_core::scene::{scene_from_config, SyntheticScene};
use xvc_core::voxel::VoxelGrid;

/// Total-loss weighting (Lph, Lsm, Ldfa, Lvda).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 0.01, gamma: 0.05, eta: 0.05 }
    }
}

/// Weighted total of the four loss terms (photometric, smoothness,
/// feature alignment, voxel density).
pub fn total_from_terms(terms: [f64; 4], w: &LossWeights) -> f64 {
    w.alpha * terms[0] + w.beta * terms[1] + w.gamma * terms[2] + w.eta * terms[3]
}

/// Flag-level overrides collected by the CLI.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sweep: Option<String>,
    /// Extra key = value pairs merged into a named section (used by the
    /// metrics subcommand's file flags).
    pub extra: Vec<(String, String, String)>,
}

pub struct Context {
    pub experiment: String,
    pub doc: ConfigDoc,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

fn merge_docs(mut base: ConfigDoc, user: &ConfigDoc) -> ConfigDoc {
    use std::collections::BTreeSet;
    let user_names: BTreeSet<&str> = user.sections.iter().map(|s| s.name.as_str()).collect();
    base.sections.retain(|s| !user_names.contains(s.name.as_str()));
    base.sections.extend(user.sections.iter().cloned());
    base
}

fn set_key(doc: &mut ConfigDoc, section: &str, key: &str, value: String) {
    for s in doc.sections.iter_mut() {
        if s.name == section {
            s.entries.retain(|(k, _)| k != key);
            s.entries.push((key.to_string(), value));
            return;
        }
    }
    let mut s = Section::new(section);
    s.entries.push((key.to_string(), value));
    doc.sections.push(s);
}

impl Context {
    /// Build the effective context for an experiment from its built-in
    /// defaults plus user overrides. Creates the output directory.
    pub fn build(experiment: &str, default_config: &str, overrides: &CliOverrides) -> Result<Context> {
        let mut doc = ConfigDoc::parse(default_config)?;
        if let Some(path) = &overrides.config {
            let user = ConfigDoc::load(path)?;
            doc = merge_docs(doc, &user);
        }
        // A scene file referenced from the config replaces the scene sections.
        if let Some(scene_path) = doc.section("experiment").and_then(|s| s.get("scene")).map(PathBuf::from) {
            let scene_doc = ConfigDoc::load(&scene_path)?;
            doc.sections.retain(|s| !matches!(s.name.as_str(), "scene" | "plane" | "box"));
            doc.sections.extend(scene_doc.sections);
        }
        if let Some(seed) = overrides.seed {
            set_key(&mut doc, "experiment", "seed", seed.to_string());
        }
        if let Some(out) = &overrides.out {
            set_key(&mut doc, "experiment", "out", out.display().to_string());
        }
        if let Some(sweep) = &overrides.sweep {
            let (key, value) = sweep.split_once('=').ok_or_else(|| {
                Error::Config(format!("--sweep must look like key=v1,v2,..., got {sweep:?}"))
            })?;
            set_key(&mut doc, "sweep", key.trim(), value.trim().to_string());
        }
        for (section, key, value) in &overrides.extra {
            set_key(&mut doc, section, key, value.clone());
        }
        Context::from_doc(experiment, doc)
    }

    /// Build directly from an effective document (the test entry point).
    pub fn from_doc(experiment: &str, doc: ConfigDoc) -> Result<Context> {
        let exp = doc
            .section("experiment")
            .ok_or_else(|| Error::Config("missing [experiment] section".into()))?;
        let seed = exp.u64_or("seed", 7)?;
        let out_dir = PathBuf::from(exp.str_or("out", &format!("out/{experiment}")));
        std::fs::create_dir_all(&out_dir)?;
        Ok(Context {
            experiment: experiment.to_string(),
            doc,
            out_dir,
            seed,
            threads: crate::parallel::thread_count(),
        })
    }

    pub fn rng(&self) -> SplitMix64 {
        SplitMix64::new(self.seed)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.doc.section(name)
    }

    /// Hash of the semantic configuration: the output directory is where
    /// results land, not what they mean, so it is excluded.
    pub fn hash_hex(&self) -> String {
        let mut doc = self.doc.clone();
        for s in doc.sections.iter_mut() {
            if s.name == "experiment" {
                s.entries.retain(|(k, _)| k != "out");
            }
        }
        format!("{:016x}", doc.hash())
    }

    /// Write a CSV (UTF-8, LF) with the config hash as a comment line.
    pub fn write_csv(&self, filename: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
        let mut text = String::new();
        let _ = writeln!(text, "# config_hash={}", self.hash_hex());
        let _ = writeln!(text, "{header}");
        for row in rows {
            let _ = writeln!(text, "{row}");
        }
        let path = self.out_dir.join(filename);
        std::fs::write(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Write a gnuplot script next to a sweep CSV so the figures are plain
    /// reviewable artifacts; no plotting engine is embedded.
    pub fn write_gnuplot(&self, filename: &str, script: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(filename);
        std::fs::write(&path, script.as_bytes())?;
        Ok(path)
    }

    pub fn camera(&self) -> Result<(CameraIntrinsics, usize, usize)> {
        let cam = self
            .section("camera")
            .ok_or_else(|| Error::Config("missing [camera] section".into()))?;
        let k = CameraIntrinsics::from_config(cam)?;
        let width = cam.usize_or("width", 64)?;
        let height = cam.usize_or("height", 48)?;
        Ok((k, height, width))
    }

    pub fn scene(&self) -> Result<SyntheticScene> {
        scene_from_config(&self.doc)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        let defaults = LossWeights::default();
        match self.section("weights") {
            None => Ok(defaults),
            Some(s) => Ok(LossWeights {
                alpha: s.f64_or("alpha", defaults.alpha)?,
                beta: s.f64_or("beta", defaults.beta)?,
                gamma: s.f64_or("gamma", defaults.gamma)?,
                eta: s.f64_or("eta", defaults.eta)?,
            }),
        }
    }

    pub fn grid(&self) -> Result<VoxelGrid> {
        let section = self
            .section("grid")
            .ok_or_else(|| Error::Config("missing [grid] section".into()))?;
        VoxelGrid::from_config(section)
    }

    /// Sweep list under `[sweep] key`: items separated by commas, vector
    /// components by whitespace. Every item must have `components` entries
    /// (scalars are accepted for multi-component sweeps and padded with
    /// zeros, so `dx=0,0.1` reads as displacements along the first axis).
    pub fn sweep_vectors(&self, key: &str, components: usize) -> Result<Vec<Vec<f64>>> {
        let section = self
            .section("sweep")
            .ok_or_else(|| Error::Config("missing [sweep] section".into()))?;
        let raw = section
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing sweep key {key:?}")))?;
        let mut out = Vec::new();
        for item in raw.split(',') {
            let vals = xvc_core::config::parse_f64_list(item)
                .map_err(|e| Error::Config(format!("sweep {key}: {e}")))?;
            if vals.len() == components {
                out.push(vals);
            } else if vals.len() == 1 && components > 1 {
                let mut padded = vec![0.0; components];
                padded[0] = vals[0];
                out.push(padded);
            } else {
                return Err(Error::Config(format!(
                    "sweep {key}: item {item:?} needs {components} numbers"
                )));
            }
        }
        if out.is_empty() {
            return Err(Error::Config(format!("sweep {key} is empty")));
        }
        Ok(out)
    }
}

/// Deterministic float formatting for CSV cells (shortest round-trip form).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Join already-formatted cells into one CSV row.
pub fn csv_row(cells: &[String]) -> String {
    cells.join(",")
}

pub fn path_str(p: &Path) -> String {
    p.display().to_string()
}
