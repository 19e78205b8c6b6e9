use std::path::Path;

use dr_decomp::functionals::{format_report_table, write_report_csv};
use dr_decomp::melly::{fit_qr_path, melly_decompose, tau_grid, QrControl};
use serde::{Deserialize, Serialize};

use crate::config::{self, check_file, DataConfig, OutputConfig, Problems, SchemaConfig};
use crate::manifest::Manifest;
use crate::Common;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MellySettings {
    /// Interior quantile levels `j/(levels+1)`.
    pub levels: usize,
    pub reference: Option<String>,
    pub comparison: Option<String>,
    pub control: QrControl,
}

impl Default for MellySettings {
    fn default() -> Self {
        Self { levels: 99, reference: None, comparison: None, control: QrControl::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MellyConfig {
    pub data: DataConfig,
    pub schema: SchemaConfig,
    #[serde(default)]
    pub melly: MellySettings,
    #[serde(default)]
    pub output: OutputConfig,
}

impl MellyConfig {
    fn validate(&self, base: &Path) -> anyhow::Result<()> {
        let mut p = Problems::default();
        check_file(&mut p, "dataset", &config::resolve(base, &self.data.path));
        p.check(self.schema.build());
        if self.melly.levels < 3 {
            p.push(format!("melly.levels must be at least 3, got {}", self.melly.levels));
        }
        if self.melly.control.tol <= 0.0 {
            p.push("melly.control.tol must be positive");
        }
        p.finish()
    }
}

pub fn run(common: &Common) -> anyhow::Result<bool> {
    let (cfg, base): (MellyConfig, _) = config::load(&common.config)?;
    for (flag, set) in [("--reps", common.reps.is_some()), ("--link", common.link.is_some()), ("--grid", common.grid.is_some()), ("--seed", common.seed.is_some())] {
        if set {
            log::warn!("{flag} has no effect on the quantile-regression decomposition");
        }
    }
    cfg.validate(&base)?;
    let schema = cfg.schema.build()?;
    let (data, drops) = config::read_dataset(&cfg.data, &base, &schema)?;
    let dir = config::out_dir(common, &base, &cfg.output)?;
    let mut manifest = Manifest::new("melly", None, &cfg, &dir)?;
    manifest.input(&config::resolve(&base, &cfg.data.path))?;
    manifest.note("dropped_rows", drops.total())?;

    let [first, second] = data.periods().clone();
    let reference = cfg.melly.reference.clone().unwrap_or(first.clone());
    let comparison = cfg.melly.comparison.clone().unwrap_or(if reference == first { second } else { first });
    let design = schema.full_design()?;
    let taus = tau_grid(cfg.melly.levels);
    let (vr, vc) = (data.view(&reference)?, data.view(&comparison)?);
    let pr = fit_qr_path(&vr, &design, &taus, &cfg.melly.control)?;
    let pc = fit_qr_path(&vc, &design, &taus, &cfg.melly.control)?;
    let r = melly_decompose((&pr, &vr), (&pc, &vc))?;
    manifest.note("crossing_rate", r.crossing_rate)?;
    manifest.note("flagged_levels", r.flagged_levels)?;
    let report = r.as_report();
    let mut buf = Vec::new();
    write_report_csv(&report, &mut buf)?;
    manifest.emit("melly.csv", &buf)?;
    let table = format_report_table(&report, cfg.output.decimals);
    manifest.emit("melly.txt", table.as_bytes())?;
    manifest.finish()?;
    print!("{table}");
    Ok(true)
}
