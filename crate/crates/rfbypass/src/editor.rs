//! Edit pipeline orchestration and ablation sweeps (`f64`).
//!
//! An edit is three steps: invert the input while caching the bypass
//! ingredients, compute the discrete bypass at the chosen grid node, then
//! reconstruct from `y_{t_B} = x_{t_B} + b*_{t_B}` under the reconstruction
//! guidance. Sweeps rerun edits over one varying axis (bypass index, CFG
//! scale, zeta, prompt combo, or the no-bypass baseline) on a seeded dataset.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bypass::compute_bypass;
use crate::field::{Condition, ConditionedFieldSpec, DerivativeMode, Guidance, VelocityField};
use crate::metrics;
use crate::timegrid::TimeGrid;
use crate::trajectory::{invert, reconstruct_trajectory, EvalCounts};
use crate::{Error, Result};

/// Role a prompt slot resolves to: the origin condition, the edit condition,
/// or the null condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptRole {
    Origin,
    Edit,
    Null,
}

impl PromptRole {
    fn code(self) -> char {
        match self {
            PromptRole::Origin => 'x',
            PromptRole::Edit => 'y',
            PromptRole::Null => 'e',
        }
    }

    fn from_code(c: char) -> Option<Self> {
        match c {
            'x' => Some(PromptRole::Origin),
            'y' => Some(PromptRole::Edit),
            'e' => Some(PromptRole::Null),
            _ => None,
        }
    }

    fn resolve(self, origin: &Condition, target: &Condition) -> Condition {
        match self {
            PromptRole::Origin => origin.clone(),
            PromptRole::Edit => target.clone(),
            PromptRole::Null => Condition::Null,
        }
    }
}

/// Positive/negative prompt roles for the inversion and reconstruction
/// guidances, written `"<inv_pos><inv_neg>/<rec_pos><rec_neg>"` with
/// `x` = origin, `y` = edit, `e` = null (e.g. the default `"ee/yx"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptCombo {
    pub inv_positive: PromptRole,
    pub inv_negative: PromptRole,
    pub rec_positive: PromptRole,
    pub rec_negative: PromptRole,
}

impl PromptCombo {
    pub fn new(
        inv_positive: PromptRole,
        inv_negative: PromptRole,
        rec_positive: PromptRole,
        rec_negative: PromptRole,
    ) -> Self {
        PromptCombo {
            inv_positive,
            inv_negative,
            rec_positive,
            rec_negative,
        }
    }

    pub fn notation(&self) -> String {
        format!(
            "{}{}/{}{}",
            self.inv_positive.code(),
            self.inv_negative.code(),
            self.rec_positive.code(),
            self.rec_negative.code()
        )
    }

    /// The twelve named preset combinations.
    pub fn presets() -> Vec<PromptCombo> {
        [
            "xy/yx", "xy/ye", "xy/yy", "xe/yx", "xe/ye", "xe/yy", "xx/yy", "xx/yx", "ey/yx",
            "ee/yy", "ee/ye", "ee/yx",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
    }

    /// Resolves the four roles against concrete origin/target conditions.
    pub fn resolve(
        &self,
        origin: &Condition,
        target: &Condition,
    ) -> (Condition, Condition, Condition, Condition) {
        (
            self.inv_positive.resolve(origin, target),
            self.inv_negative.resolve(origin, target),
            self.rec_positive.resolve(origin, target),
            self.rec_negative.resolve(origin, target),
        )
    }
}

impl Default for PromptCombo {
    /// Null-prompt inversion with edit-positive / origin-negative
    /// reconstruction (`"ee/yx"`).
    fn default() -> Self {
        "ee/yx".parse().unwrap()
    }
}

impl fmt::Display for PromptCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.notation())
    }
}

impl FromStr for PromptCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() == 5 && chars[2] == '/' {
            let roles: Option<Vec<PromptRole>> = [chars[0], chars[1], chars[3], chars[4]]
                .iter()
                .map(|c| PromptRole::from_code(*c))
                .collect();
            if let Some(r) = roles {
                return Ok(PromptCombo::new(r[0], r[1], r[2], r[3]));
            }
        }
        Err(Error::config(format!(
            "invalid prompt combo '{s}' (expected e.g. 'ee/yx' with chars x|y|e)"
        )))
    }
}

impl Serialize for PromptCombo {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.notation())
    }
}

impl<'de> Deserialize<'de> for PromptCombo {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Full configuration for one edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub n_steps: usize,
    pub shift: f64,
    /// CFG scale; applies to both guidances unless `cfg_scale_inv` overrides
    /// the inversion side.
    pub cfg_scale: f64,
    pub cfg_scale_inv: Option<f64>,
    pub bypass_index: usize,
    pub zeta: f64,
    pub combo: PromptCombo,
    pub derivative_mode: DerivativeMode,
    /// `false` forces `b* = 0` (the no-bypass baseline).
    pub use_bypass: bool,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            n_steps: 50,
            shift: 3.0,
            cfg_scale: 2.0,
            cfg_scale_inv: None,
            bypass_index: 30,
            zeta: 0.01,
            combo: PromptCombo::default(),
            derivative_mode: DerivativeMode::UniformOffset,
            use_bypass: true,
            seed: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bypass_index > self.n_steps {
            return Err(Error::config(format!(
                "bypass_index {} exceeds n_steps {}",
                self.bypass_index, self.n_steps
            )));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::config("zeta must be positive"));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::config("cfg_scale must be finite"));
        }
        TimeGrid::<f64>::new(self.n_steps, self.shift).map(|_| ())
    }

    /// The inversion/reconstruction guidances for concrete conditions.
    pub fn guidances(
        &self,
        origin: &Condition,
        target: &Condition,
    ) -> (Guidance<f64>, Guidance<f64>) {
        let (ip, in_, rp, rn) = self.combo.resolve(origin, target);
        let inv_scale = self.cfg_scale_inv.unwrap_or(self.cfg_scale);
        (
            Guidance::new(ip, in_, inv_scale),
            Guidance::new(rp, rn, self.cfg_scale),
        )
    }
}

/// Everything produced by one edit.
#[derive(Debug, Clone, Serialize)]
pub struct EditResult {
    pub x0: Vec<f64>,
    pub x_tb: Vec<f64>,
    pub b_star: Vec<f64>,
    pub y_tb: Vec<f64>,
    pub y0: Vec<f64>,
    /// Grid times `t_0 ..= t_N`.
    pub times: Vec<f64>,
    /// Inversion states at nodes `0 ..= N`.
    pub inversion_states: Vec<Vec<f64>>,
    /// Reconstruction states from node `B` down to `0`.
    pub reconstruction_states: Vec<Vec<f64>>,
    pub fidelity: f64,
    /// Log-density under the target data distribution, when the field has one.
    pub alignment: Option<f64>,
    pub eval_counts: EvalCounts,
}

/// Runs the three-step pipeline on any conditioned velocity field.
pub fn edit<F: VelocityField<f64> + ?Sized>(
    field: &F,
    x0: &[f64],
    origin: &Condition,
    target: &Condition,
    config: &EditConfig,
) -> Result<EditResult> {
    config.validate()?;
    let grid = TimeGrid::new(config.n_steps, config.shift)?;
    let (guidance_inv, guidance_rec) = config.guidances(origin, target);
    let b_index = config.bypass_index;

    let record = invert(
        field,
        x0,
        &grid,
        &guidance_inv,
        &guidance_rec,
        config.zeta,
        config.derivative_mode,
    )
    .map_err(|e| e.in_stage("inversion"))?;

    let b_star = if config.use_bypass {
        compute_bypass(&record, b_index)
            .map_err(|e| e.in_stage("bypass"))?
            .b_star
    } else {
        vec![0.0; x0.len()]
    };

    let x_tb = record.states[b_index].clone();
    let y_tb: Vec<f64> = x_tb.iter().zip(&b_star).map(|(x, b)| x + b).collect();

    let mut counts = record.eval_counts;
    let recon = reconstruct_trajectory(field, &y_tb, &grid, b_index, &guidance_rec, Some(&mut counts))
        .map_err(|e| e.in_stage("reconstruction"))?;
    let y0 = recon.last().unwrap().clone();

    let fidelity = metrics::fidelity(&y0, x0)?;
    let alignment = field.data_log_density(&y0, target);

    Ok(EditResult {
        x0: x0.to_vec(),
        x_tb,
        b_star,
        y_tb,
        y0,
        times: grid.times().to_vec(),
        inversion_states: record.states,
        reconstruction_states: recon,
        fidelity,
        alignment,
        eval_counts: counts,
    })
}

/// One dataset point for sweeps.
#[derive(Debug, Clone)]
pub struct DatasetPoint {
    pub x0: Vec<f64>,
    pub origin: Condition,
    pub target: Condition,
}

/// Samples `count` points from the origin-conditioned mixture with a
/// ChaCha12 generator seeded by `seed`.
pub fn sample_dataset(
    spec: &ConditionedFieldSpec<f64>,
    origin: &Condition,
    target: &Condition,
    count: usize,
    seed: u64,
) -> Result<Vec<DatasetPoint>> {
    let mixture = spec.mixture(origin)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let pick: f64 = rng.gen();
        let mut acc = 0.0;
        let mut comp = mixture.components().last().unwrap();
        for c in mixture.components() {
            acc += c.weight;
            if pick < acc {
                comp = c;
                break;
            }
        }
        let x0: Vec<f64> = comp
            .mean
            .iter()
            .map(|m| m + comp.stddev * rng.sample::<f64, _>(StandardNormal))
            .collect();
        out.push(DatasetPoint {
            x0,
            origin: origin.clone(),
            target: target.clone(),
        });
    }
    Ok(out)
}

/// The varying axis of a sweep; all other config fields stay at the base
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    BypassIndex(Vec<usize>),
    CfgScale(Vec<f64>),
    Zeta(Vec<f64>),
    Combo(Vec<PromptCombo>),
    /// Reconstruction-only baseline: `use_bypass = false` at each index.
    NoBypassIndex(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::BypassIndex(_) => "bypass_index",
            SweepAxis::CfgScale(_) => "cfg_scale",
            SweepAxis::Zeta(_) => "zeta",
            SweepAxis::Combo(_) => "combo",
            SweepAxis::NoBypassIndex(_) => "no_bypass_index",
        }
    }

    /// Per-setting `(label, config)` pairs derived from a base config.
    pub fn settings(&self, base: &EditConfig) -> Vec<(String, EditConfig)> {
        match self {
            SweepAxis::BypassIndex(vs) => vs
                .iter()
                .map(|b| {
                    let mut c = base.clone();
                    c.bypass_index = *b;
                    (format!("B={b}"), c)
                })
                .collect(),
            SweepAxis::CfgScale(vs) => vs
                .iter()
                .map(|w| {
                    let mut c = base.clone();
                    c.cfg_scale = *w;
                    (format!("omega={w}"), c)
                })
                .collect(),
            SweepAxis::Zeta(vs) => vs
                .iter()
                .map(|z| {
                    let mut c = base.clone();
                    c.zeta = *z;
                    (format!("zeta={z}"), c)
                })
                .collect(),
            SweepAxis::Combo(vs) => vs
                .iter()
                .map(|combo| {
                    let mut c = base.clone();
                    c.combo = *combo;
                    (format!("combo={combo}"), c)
                })
                .collect(),
            SweepAxis::NoBypassIndex(vs) => vs
                .iter()
                .map(|b| {
                    let mut c = base.clone();
                    c.bypass_index = *b;
                    c.use_bypass = false;
                    (format!("no_bypass_B={b}"), c)
                })
                .collect(),
        }
    }
}

/// Sweep request: a base config plus the varying axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: EditConfig,
    #[serde(flatten)]
    pub axis: SweepAxis,
}

/// Outcome of one dataset point under one setting.
#[derive(Debug, Clone, Serialize)]
pub struct PointOutcome {
    pub index: usize,
    pub fidelity: Option<f64>,
    pub alignment: Option<f64>,
    pub error: Option<String>,
}

/// Aggregates for one sweep setting.
#[derive(Debug, Clone, Serialize)]
pub struct SettingReport {
    pub label: String,
    pub config: EditConfig,
    pub points: Vec<PointOutcome>,
    pub mean_fidelity: f64,
    pub mean_alignment: f64,
    pub failures: usize,
}

/// Full sweep output, deterministically ordered by setting then point index.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: String,
    pub settings: Vec<SettingReport>,
}

/// Runs every `(setting, point)` edit. Points are independent and run on the
/// ambient rayon pool; results are assembled in order, so parallelism cannot
/// change output bytes.
pub fn run_sweep(
    spec: &ConditionedFieldSpec<f64>,
    dataset: &[DatasetPoint],
    sweep: &SweepSpec,
) -> Result<SweepReport> {
    if dataset.is_empty() {
        return Err(Error::config("sweep dataset must be nonempty"));
    }
    let settings = sweep.axis.settings(&sweep.base);
    let reports: Vec<SettingReport> = settings
        .into_iter()
        .map(|(label, config)| {
            let points: Vec<PointOutcome> = dataset
                .par_iter()
                .enumerate()
                .map(|(index, pt)| {
                    match edit(spec, &pt.x0, &pt.origin, &pt.target, &config) {
                        Ok(r) => PointOutcome {
                            index,
                            fidelity: Some(r.fidelity),
                            alignment: r.alignment,
                            error: None,
                        },
                        Err(e) => PointOutcome {
                            index,
                            fidelity: None,
                            alignment: None,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect();
            let ok: Vec<&PointOutcome> =
                points.iter().filter(|p| p.error.is_none()).collect();
            let n = ok.len().max(1) as f64;
            let mean_fidelity = ok.iter().filter_map(|p| p.fidelity).sum::<f64>() / n;
            let mean_alignment = ok.iter().filter_map(|p| p.alignment).sum::<f64>() / n;
            let failures = points.len() - ok.len();
            SettingReport {
                label,
                config,
                points,
                mean_fidelity,
                mean_alignment,
                failures,
            }
        })
        .collect();
    Ok(SweepReport {
        axis: sweep.axis.name().to_string(),
        settings: reports,
    })
}
