//! Depth-metric evaluation over tensor files: a single prediction/ground
//! truth pair, or a manifest of pairs labelled motion/static for the split
//! protocol.

use std::path::{Path, PathBuf};

use crate::context::{csv_row, Context};
use crate::experiments::{Assertion, Experiment, ExperimentReport};
use xvc_core::error::{Error, Result};
use xvc_core::io::read_depth;
use xvc_core::metrics::{evaluate_depth, evaluate_split, MetricReport, SplitLabel};

pub struct MetricsRunner;

fn split_csv_row(split: &str, r: &MetricReport) -> String {
    csv_row(&[split.to_string(), r.csv_row()])
}

impl Experiment for MetricsRunner {
    fn name(&self) -> &'static str {
        "metrics"
    }

    fn summary(&self) -> &'static str {
        "depth metric suite over tensor-file pairs, with optional motion/static split"
    }

    fn default_config(&self) -> &'static str {
        "[experiment]\nname = metrics\nseed = 7\n\n[metrics]\ncap = 80\nmedian_scale = true\n"
    }

    fn run(&self, ctx: &Context) -> Result<ExperimentReport> {
        let section = ctx
            .section("metrics")
            .ok_or_else(|| Error::Config("missing [metrics] section".into()))?;
        let cap = section.f64_or("cap", 80.0)?;
        let median_scale = section.bool_or("median_scale", true)?;
        let mut report = ExperimentReport::new(self.name());

        if let Some(manifest) = section.get("manifest").map(PathBuf::from) {
            let text = std::fs::read_to_string(&manifest)?;
            let mut pairs = Vec::new();
            let mut labels = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!(
                        "{}:{}: expected `pred gt motion|static`",
                        manifest.display(),
                        lineno + 1
                    )));
                }
                pairs.push((read_depth(Path::new(parts[0]))?, read_depth(Path::new(parts[1]))?));
                labels.push(parts[2].parse::<SplitLabel>()?);
            }
            let split = evaluate_split(&pairs, &labels, cap, median_scale)?;
            for warning in &split.warnings {
                println!("warning: {warning}");
            }
            let mut rows = Vec::new();
            if let Some(m) = &split.motion {
                rows.push(split_csv_row("motion", m));
            }
            if let Some(s) = &split.static_set {
                rows.push(split_csv_row("static", s));
            }
            let csv = ctx.write_csv(
                "metrics_split.csv",
                &format!("split,{}", MetricReport::CSV_HEADER),
                &rows,
            )?;
            report.outputs.push(csv);
            report.assertions.push(Assertion::check(
                "metrics/split_evaluated",
                !rows.is_empty(),
                format!("{} pairs across {} populated splits", pairs.len(), rows.len()),
            ));
            return Ok(report);
        }

        let pred_path = section
            .get("pred")
            .ok_or_else(|| Error::Config("metrics needs pred = <path> (or a manifest)".into()))?;
        let gt_path = section
            .get("gt")
            .ok_or_else(|| Error::Config("metrics needs gt = <path> (or a manifest)".into()))?;
        let pred = read_depth(Path::new(pred_path))?;
        let gt = read_depth(Path::new(gt_path))?;
        let r = evaluate_depth(&pred, &gt, cap, median_scale)?;
        let csv = ctx.write_csv("metrics.csv", MetricReport::CSV_HEADER, &[r.csv_row()])?;
        report.outputs.push(csv);
        println!(
            "abs_rel {} | sq_rel {} | rmse {} | rmse_log {} | δ1 {} | δ2 {} | δ3 {} | log10 {} | {} px",
            r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta1, r.delta2, r.delta3, r.log10, r.n_pixels
        );
        report.assertions.push(Assertion::check(
            "metrics/evaluated",
            true,
            format!("{} valid pixels", r.n_pixels),
        ));
        Ok(report)
    }
}
