use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dr_decomp::prep::{
    basket_cpi_ratio, equivalence_scale, impute_rental_equivalent, impute_vehicle_flow, iv_elasticity, Deflator, EquivalenceScale,
    HousingRecord, ImputationConfig, Retransformation, VehicleBranch, VehicleRecord,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, check_file, OutputConfig, Problems};
use crate::manifest::Manifest;
use crate::Common;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HouseholdFile {
    pub path: PathBuf,
    #[serde(default = "col_id")]
    pub id: String,
    #[serde(default = "col_period")]
    pub period: String,
    #[serde(default = "col_weight")]
    pub weight: String,
    /// Nominal quarterly consumption.
    #[serde(default = "col_consumption")]
    pub consumption: String,
    #[serde(default = "col_adults")]
    pub adults: String,
    #[serde(default = "col_children")]
    pub children: String,
    /// Columns copied into the prepared dataset.
    #[serde(default)]
    pub covariates: Vec<String>,
}

fn col_id() -> String {
    "id".into()
}
fn col_period() -> String {
    "period".into()
}
fn col_weight() -> String {
    "weight".into()
}
fn col_consumption() -> String {
    "consumption".into()
}
fn col_adults() -> String {
    "adults".into()
}
fn col_children() -> String {
    "children".into()
}

/// Vehicle file with columns `id`, `price` (blank if unknown),
/// `years_owned` and the listed characteristics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleFile {
    pub path: PathBuf,
    #[serde(default)]
    pub characteristics: Vec<String>,
    pub rate: f64,
    pub annual_depreciation: f64,
    #[serde(default)]
    pub retransformation: Retransformation,
}

/// Housing file with columns `id`, `reported_quarterly`, `monthly_rent`
/// (blank if absent) and the listed characteristics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HousingFile {
    pub path: PathBuf,
    #[serde(default)]
    pub characteristics: Vec<String>,
    #[serde(default)]
    pub retransformation: Retransformation,
}

/// Level columns of the household file used by the elasticity diagnostic.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvSettings {
    pub well_measured: String,
    pub total: String,
    pub income: String,
    #[serde(default = "five_percent")]
    pub trim: f64,
}

fn five_percent() -> f64 {
    0.05
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasketInput {
    pub period: String,
    pub all_items: f64,
    /// `[index, weight]` pairs.
    pub components: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepConfig {
    pub households: HouseholdFile,
    pub deflator: Deflator,
    #[serde(default)]
    pub scale: EquivalenceScale,
    #[serde(default)]
    pub vehicles: Option<VehicleFile>,
    #[serde(default)]
    pub housing: Option<HousingFile>,
    #[serde(default)]
    pub iv: Option<IvSettings>,
    #[serde(default)]
    pub basket: Vec<BasketInput>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl PrepConfig {
    fn validate(&self, base: &Path) -> anyhow::Result<()> {
        let mut p = Problems::default();
        check_file(&mut p, "household file", &config::resolve(base, &self.households.path));
        p.check(self.deflator.validate());
        if let Some(v) = &self.vehicles {
            check_file(&mut p, "vehicle file", &config::resolve(base, &v.path));
            p.check(ImputationConfig { rate: v.rate, annual_depreciation: v.annual_depreciation, retransformation: v.retransformation }.validate());
        }
        if let Some(h) = &self.housing {
            check_file(&mut p, "housing file", &config::resolve(base, &h.path));
        }
        if let Some(iv) = &self.iv {
            if !(0.0..0.25).contains(&iv.trim) {
                p.push(format!("iv.trim must lie in [0, 0.25), got {}", iv.trim));
            }
        }
        p.check(self.scale.factor(1, 0));
        p.finish()
    }
}

/// A CSV read into named string columns.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    path: PathBuf,
}

impl Table {
    fn read(path: &Path) -> anyhow::Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(Self { headers, rows, path: path.to_path_buf() })
    }

    fn col(&self, name: &str) -> anyhow::Result<usize> {
        match self.headers.iter().position(|h| h == name) {
            Some(i) => Ok(i),
            None => bail!("{} has no column `{name}`", self.path.display()),
        }
    }

    fn number(&self, row: usize, col: usize) -> anyhow::Result<Option<f64>> {
        let s = self.rows[row][col].as_str();
        if s.is_empty() || s == "NA" || s == "." {
            return Ok(None);
        }
        match s.parse::<f64>() {
            Ok(v) => Ok(Some(v)),
            Err(_) => bail!("{} row {}: `{s}` in column `{}` is not a number", self.path.display(), row + 1, self.headers[col]),
        }
    }

    fn required(&self, row: usize, col: usize) -> anyhow::Result<f64> {
        match self.number(row, col)? {
            Some(v) => Ok(v),
            None => bail!("{} row {}: column `{}` is empty", self.path.display(), row + 1, self.headers[col]),
        }
    }
}

fn count(n: f64, what: &str) -> anyhow::Result<u32> {
    if n < 0.0 || n.fract() != 0.0 || n > f64::from(u32::MAX) {
        bail!("{what} must be a nonnegative whole number, got {n}");
    }
    Ok(n as u32)
}

pub fn run(common: &Common) -> anyhow::Result<bool> {
    let (cfg, base): (PrepConfig, _) = config::load(&common.config)?;
    cfg.validate(&base)?;
    let dir = config::out_dir(common, &base, &cfg.output)?;
    let mut manifest = Manifest::new("prep", None, &cfg, &dir)?;
    let mut audit = String::new();

    let hh_path = config::resolve(&base, &cfg.households.path);
    manifest.input(&hh_path)?;
    let hh = Table::read(&hh_path)?;
    let h = &cfg.households;
    let (c_id, c_period, c_weight, c_cons) = (hh.col(&h.id)?, hh.col(&h.period)?, hh.col(&h.weight)?, hh.col(&h.consumption)?);
    let (c_adults, c_children) = (hh.col(&h.adults)?, hh.col(&h.children)?);
    let c_covs: Vec<usize> = h.covariates.iter().map(|c| hh.col(c)).collect::<anyhow::Result<_>>()?;
    let mut row_of: HashMap<String, usize> = HashMap::new();
    for (i, r) in hh.rows.iter().enumerate() {
        if row_of.insert(r[c_id].clone(), i).is_some() {
            bail!("household id `{}` appears twice", r[c_id]);
        }
    }
    let mut consumption: Vec<f64> = (0..hh.rows.len()).map(|i| hh.number(i, c_cons).map(|v| v.unwrap_or(f64::NAN))).collect::<anyhow::Result<_>>()?;
    let period_of = |i: usize| hh.rows[i][c_period].clone();
    let weight_of = |i: usize| hh.number(i, c_weight).map(|w| w.unwrap_or(0.0));

    if let Some(v) = &cfg.vehicles {
        let path = config::resolve(&base, &v.path);
        manifest.input(&path)?;
        let t = Table::read(&path)?;
        let (vid, vprice, vyears) = (t.col("id")?, t.col("price")?, t.col("years_owned")?);
        let vchars: Vec<usize> = v.characteristics.iter().map(|c| t.col(c)).collect::<anyhow::Result<_>>()?;
        let mut groups: BTreeMap<String, Vec<(usize, VehicleRecord)>> = BTreeMap::new();
        for k in 0..t.rows.len() {
            let Some(&i) = row_of.get(&t.rows[k][vid]) else {
                bail!("{} row {}: unknown household `{}`", path.display(), k + 1, t.rows[k][vid]);
            };
            let rec = VehicleRecord {
                price: t.number(k, vprice)?,
                years_owned: t.required(k, vyears)?,
                characteristics: vchars.iter().map(|&c| t.required(k, c)).collect::<anyhow::Result<_>>()?,
                weight: weight_of(i)?,
            };
            groups.entry(period_of(i)).or_default().push((i, rec));
        }
        let icfg = ImputationConfig { rate: v.rate, annual_depreciation: v.annual_depreciation, retransformation: v.retransformation };
        for (period, recs) in &groups {
            let records: Vec<VehicleRecord> = recs.iter().map(|r| r.1.clone()).collect();
            let flows = impute_vehicle_flow(&records, &icfg).with_context(|| format!("vehicles in period `{period}`"))?;
            let mut branches = [0usize; 3];
            for ((i, _), f) in recs.iter().zip(&flows) {
                consumption[*i] += f.flow;
                branches[match f.branch {
                    VehicleBranch::RecentPrice => 0,
                    VehicleBranch::DepreciatedPrice => 1,
                    VehicleBranch::ImputedPrice => 2,
                }] += 1;
            }
            let _ = writeln!(audit, "vehicles {period}: {} recent price, {} depreciated price, {} imputed price", branches[0], branches[1], branches[2]);
            manifest.note(&format!("vehicle_branches_{period}"), branches)?;
        }
    }

    if let Some(hcfg) = &cfg.housing {
        let path = config::resolve(&base, &hcfg.path);
        manifest.input(&path)?;
        let t = Table::read(&path)?;
        let (hid, hrep, hrent) = (t.col("id")?, t.col("reported_quarterly")?, t.col("monthly_rent")?);
        let hchars: Vec<usize> = hcfg.characteristics.iter().map(|c| t.col(c)).collect::<anyhow::Result<_>>()?;
        let mut groups: BTreeMap<String, Vec<(usize, HousingRecord)>> = BTreeMap::new();
        for k in 0..t.rows.len() {
            let Some(&i) = row_of.get(&t.rows[k][hid]) else {
                bail!("{} row {}: unknown household `{}`", path.display(), k + 1, t.rows[k][hid]);
            };
            let rec = HousingRecord {
                reported_quarterly: t.number(k, hrep)?,
                monthly_rent: t.number(k, hrent)?,
                characteristics: hchars.iter().map(|&c| t.required(k, c)).collect::<anyhow::Result<_>>()?,
                weight: weight_of(i)?,
            };
            groups.entry(period_of(i)).or_default().push((i, rec));
        }
        for (period, recs) in &groups {
            let records: Vec<HousingRecord> = recs.iter().map(|r| r.1.clone()).collect();
            let q = impute_rental_equivalent(&records, hcfg.retransformation).with_context(|| format!("housing in period `{period}`"))?;
            let imputed = records.iter().filter(|r| r.reported_quarterly.is_none()).count();
            for ((i, _), v) in recs.iter().zip(&q) {
                consumption[*i] += v;
            }
            let _ = writeln!(audit, "housing {period}: {} reported, {imputed} imputed", records.len() - imputed);
        }
    }

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["outcome".to_string(), "weight".into(), "period".into()];
    header.extend(h.covariates.iter().cloned());
    wtr.write_record(&header)?;
    let mut dropped = 0usize;
    for i in 0..hh.rows.len() {
        let period = period_of(i);
        let adults = count(hh.required(i, c_adults)?, "adults")?;
        let children = count(hh.required(i, c_children)?, "children")?;
        let c = consumption[i];
        if !(c > 0.0) {
            dropped += 1;
            continue;
        }
        let real = cfg.deflator.deflate(equivalence_scale(c, adults, children, cfg.scale)?, &period)?;
        let mut rec = vec![real.ln().to_string(), hh.rows[i][c_weight].clone(), period];
        rec.extend(c_covs.iter().map(|&k| hh.rows[i][k].clone()));
        wtr.write_record(&rec)?;
    }
    let _ = writeln!(audit, "households: {} written, {dropped} dropped for nonpositive or missing consumption", hh.rows.len() - dropped);
    manifest.note("dropped_households", dropped)?;
    manifest.emit("dataset.csv", &wtr.into_inner()?)?;

    let mut diag = csv::Writer::from_writer(Vec::new());
    diag.write_record(["diagnostic", "period", "value", "se", "formatted"])?;
    if let Some(iv) = &cfg.iv {
        let (cy, cx, cz) = (hh.col(&iv.well_measured)?, hh.col(&iv.total)?, hh.col(&iv.income)?);
        let mut by_period: BTreeMap<String, [Vec<f64>; 4]> = BTreeMap::new();
        for i in 0..hh.rows.len() {
            let vals = (hh.number(i, cy)?, hh.number(i, cx)?, hh.number(i, cz)?);
            if let (Some(y), Some(x), Some(z)) = vals {
                if y > 0.0 && x > 0.0 && z > 0.0 {
                    let e = by_period.entry(period_of(i)).or_default();
                    e[0].push(y.ln());
                    e[1].push(x.ln());
                    e[2].push(z.ln());
                    e[3].push(weight_of(i)?);
                }
            }
        }
        for (period, [y, x, z, w]) in &by_period {
            let e = iv_elasticity(y, x, z, w, iv.trim).with_context(|| format!("elasticity in period `{period}`"))?;
            let formatted = e.formatted(3);
            let _ = writeln!(audit, "elasticity {period}: {formatted}, n = {}, first-stage F = {:.1}{}", e.n, e.first_stage_f, if e.weak_instrument { " (weak)" } else { "" });
            diag.write_record(["iv_elasticity", period, &e.coef.to_string(), &e.se.to_string(), &formatted])?;
        }
    }
    for b in &cfg.basket {
        let r = basket_cpi_ratio(&b.components, b.all_items)?;
        let _ = writeln!(audit, "basket ratio {}: {r:.3}", b.period);
        diag.write_record(["basket_cpi_ratio", &b.period, &r.to_string(), "", &format!("{r:.3}")])?;
    }
    manifest.emit("diagnostics.csv", &diag.into_inner()?)?;
    manifest.emit("prep_audit.txt", audit.as_bytes())?;
    manifest.finish()?;
    print!("{audit}");
    Ok(true)
}
