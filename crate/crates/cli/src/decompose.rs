use std::path::Path;

use dr_decomp::analysis::{AnalysisSpec, PreparedAnalysis};
use dr_decomp::distreg::GridSpec;
use dr_decomp::functionals::{format_report_table, write_curves_csv, write_report_csv};
use dr_decomp::inference::{attach_bands, bootstrap_pipeline, summarize_se, write_draws_csv, BootstrapConfig};
use serde::{Deserialize, Serialize};

use crate::config::{self, check_file, DataConfig, OutputConfig, Problems, SchemaConfig};
use crate::manifest::Manifest;
use crate::Common;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    pub data: DataConfig,
    pub schema: SchemaConfig,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    /// `replications = 0` skips inference.
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl DecomposeConfig {
    fn apply(&mut self, c: &Common) -> anyhow::Result<()> {
        if let Some(s) = c.seed {
            self.bootstrap.seed = s;
        }
        if let Some(r) = c.reps {
            self.bootstrap.replications = r;
        }
        if let Some(l) = &c.link {
            self.analysis.counterfactual.link = config::parse_link(l)?;
        }
        if let Some(g) = &c.grid {
            self.analysis.grid = config::parse_grid(g)?;
        }
        Ok(())
    }

    fn validate(&self, base: &Path) -> anyhow::Result<()> {
        let mut p = Problems::default();
        check_file(&mut p, "dataset", &config::resolve(base, &self.data.path));
        if let Some(schema) = p.check(self.schema.build()) {
            if let Some(seq) = &self.analysis.sequence {
                p.check(schema.reordered(seq));
            }
        }
        if let GridSpec::QuantileSpaced { points, trim } = self.analysis.grid {
            if points < 2 {
                p.push(format!("grid needs at least 2 points, got {points}"));
            }
            if let Some(t) = trim {
                if !(0.0..0.5).contains(&t) {
                    p.push(format!("grid trim must lie in [0, 0.5), got {t}"));
                }
            }
        }
        if self.analysis.de_points < 2 {
            p.push("de_points must be at least 2");
        }
        if let (Some(r), Some(c)) = (&self.analysis.reference, &self.analysis.comparison) {
            if r == c {
                p.push("reference and comparison periods must differ");
            }
        }
        if self.bootstrap.replications > 0 {
            p.check(self.bootstrap.validate());
        }
        p.finish()
    }
}

pub fn run(common: &Common) -> anyhow::Result<bool> {
    let (mut cfg, base): (DecomposeConfig, _) = config::load(&common.config)?;
    cfg.apply(common)?;
    cfg.validate(&base)?;
    let schema = cfg.schema.build()?;
    let (data, drops) = config::read_dataset(&cfg.data, &base, &schema)?;
    let dir = config::out_dir(common, &base, &cfg.output)?;
    let seed = (cfg.bootstrap.replications > 0).then_some(cfg.bootstrap.seed);
    let mut manifest = Manifest::new("decompose", seed, &cfg, &dir)?;
    manifest.input(&config::resolve(&base, &cfg.data.path))?;
    manifest.note("dropped_rows", drops.total())?;

    let prep = PreparedAnalysis::new(&data, cfg.analysis.clone())?;
    let out = prep.run(&data.sample())?;
    let mut report = out.report;
    let mut curves = out.curves;
    let pooled: usize = out.chain.iter().map(|c| c.pooled_nodes).sum();
    manifest.note("pooled_nodes", pooled)?;
    manifest.note("telescoping_error", report.telescoping_error())?;

    if cfg.bootstrap.replications > 0 {
        let draws = bootstrap_pipeline(&data, &prep, &cfg.bootstrap)?;
        report = summarize_se(&report, &draws.reports, cfg.bootstrap.se)?;
        attach_bands(&mut curves, &draws.curves, cfg.bootstrap.coverage, cfg.bootstrap.se)?;
        manifest.note("bootstrap_failures", draws.failures.len())?;
        if cfg.output.draws {
            let mut buf = Vec::new();
            write_draws_csv(&draws, &mut buf)?;
            manifest.emit("draws.csv", &buf)?;
        }
    }
    let mut buf = Vec::new();
    write_report_csv(&report, &mut buf)?;
    manifest.emit("report.csv", &buf)?;
    let table = format_report_table(&report, cfg.output.decimals);
    manifest.emit("report.txt", table.as_bytes())?;
    let mut buf = Vec::new();
    write_curves_csv(&curves, &mut buf)?;
    manifest.emit("curves.csv", &buf)?;
    manifest.finish()?;
    print!("{table}");
    Ok(true)
}
