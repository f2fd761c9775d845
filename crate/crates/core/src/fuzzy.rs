//! Mamdani inference from (speed, acceleration) to a corrective action.
//!
//! Inputs are fuzzified with trapezoids, each rule fires at the minimum of
//! its two input degrees, the rule's output set is clipped at that strength
//! and the clipped sets are combined by pointwise maximum on a sampled
//! advice axis `[0, 100]`. The centroid of the result is mapped back to the
//! action whose output set is highest there.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples of the output axis.
pub const OUTPUT_SAMPLES: usize = 1001;
pub const OUTPUT_UNIVERSE: (f64, f64) = (0.0, 100.0);

#[derive(Debug, Error)]
pub enum FuzzyError {
    #[error("invalid fuzzy configuration: {0}")]
    Config(String),
    #[error("aggregated output has zero area")]
    ZeroArea,
    #[error("non-finite input")]
    NonFinite,
    #[error("reading fuzzy configuration: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fuzzy configuration: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Trapezoidal membership function; a triangle has `b == c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeSpec", into = "Vec<f64>")]
pub struct Trapezoid {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Accepted spellings of a membership function in config files.
#[derive(Deserialize)]
#[serde(untagged)]
enum ShapeSpec {
    Points(Vec<f64>),
    Triangle { center: f64, half_width: f64 },
}

impl TryFrom<ShapeSpec> for Trapezoid {
    type Error = String;

    fn try_from(spec: ShapeSpec) -> Result<Self, String> {
        match spec {
            ShapeSpec::Points(p) => match p[..] {
                [a, b, d] => Trapezoid::new(a, b, b, d),
                [a, b, c, d] => Trapezoid::new(a, b, c, d),
                _ => Err(format!("expected 3 or 4 breakpoints, got {}", p.len())),
            },
            ShapeSpec::Triangle { center, half_width } => {
                if half_width.is_nan() || half_width <= 0.0 {
                    return Err(format!("half_width must be positive, got {half_width}"));
                }
                Trapezoid::triangle(center, half_width)
            }
        }
    }
}

impl From<Trapezoid> for Vec<f64> {
    fn from(t: Trapezoid) -> Self {
        vec![t.a, t.b, t.c, t.d]
    }
}

impl Trapezoid {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, String> {
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err("breakpoints must be finite".into());
        }
        if !(a <= b && b <= c && c <= d) {
            return Err(format!(
                "breakpoints must be non-decreasing, got ({a}, {b}, {c}, {d})"
            ));
        }
        Ok(Trapezoid { a, b, c, d })
    }

    pub fn triangle(center: f64, half_width: f64) -> Result<Self, String> {
        Trapezoid::new(center - half_width, center, center, center + half_width)
    }

    pub fn degree(&self, x: f64) -> f64 {
        if x >= self.b && x <= self.c {
            1.0
        } else if x <= self.a || x >= self.d {
            0.0
        } else if x < self.b {
            (x - self.a) / (self.b - self.a)
        } else {
            (self.d - x) / (self.d - self.c)
        }
    }

    pub fn center(&self) -> f64 {
        (self.b + self.c) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeedTerm {
    #[serde(rename = "L")]
    Low,
    #[serde(rename = "O")]
    Optimum,
    #[serde(rename = "H")]
    High,
}

impl SpeedTerm {
    pub const ALL: [SpeedTerm; 3] = [SpeedTerm::Low, SpeedTerm::Optimum, SpeedTerm::High];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccelTerm {
    #[serde(rename = "HD")]
    HarshDeceleration,
    #[serde(rename = "A")]
    Acceptable,
    #[serde(rename = "HA")]
    HarshAcceleration,
}

impl AccelTerm {
    pub const ALL: [AccelTerm; 3] = [
        AccelTerm::HarshDeceleration,
        AccelTerm::Acceptable,
        AccelTerm::HarshAcceleration,
    ];
}

/// Advice given to the driver. Declaration order is the braking-to-
/// accelerating scale; `StopEngine` sits outside it and only comes from the
/// idling path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlAction {
    Break,
    BreakSmoothly,
    KeepTheSpeed,
    AccelerateSmoothly,
    Accelerate,
    StopEngine,
}

impl ControlAction {
    /// Actions fuzzy inference can produce.
    pub const SCALE: [ControlAction; 5] = [
        ControlAction::Break,
        ControlAction::BreakSmoothly,
        ControlAction::KeepTheSpeed,
        ControlAction::AccelerateSmoothly,
        ControlAction::Accelerate,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            ControlAction::Break => "brake",
            ControlAction::BreakSmoothly => "brake smoothly",
            ControlAction::KeepTheSpeed => "keep the speed",
            ControlAction::AccelerateSmoothly => "accelerate smoothly",
            ControlAction::Accelerate => "accelerate",
            ControlAction::StopEngine => "stop the engine",
        }
    }
}

impl fmt::Display for ControlAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ControlAction::Break => "Break",
            ControlAction::BreakSmoothly => "BreakSmoothly",
            ControlAction::KeepTheSpeed => "KeepTheSpeed",
            ControlAction::AccelerateSmoothly => "AccelerateSmoothly",
            ControlAction::Accelerate => "Accelerate",
            ControlAction::StopEngine => "StopEngine",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzyRule {
    pub speed: SpeedTerm,
    pub accel: AccelTerm,
    pub action: ControlAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVariable<T: Ord> {
    /// Inputs are clamped to this range before fuzzification.
    pub universe: (f64, f64),
    pub sets: BTreeMap<T, Trapezoid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyConfig {
    pub speed: InputVariable<SpeedTerm>,
    pub acceleration: InputVariable<AccelTerm>,
    pub output: BTreeMap<ControlAction, Trapezoid>,
    pub rules: Vec<FuzzyRule>,
}

fn trap(a: f64, b: f64, c: f64, d: f64) -> Trapezoid {
    Trapezoid { a, b, c, d }
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        use AccelTerm::*;
        use ControlAction::*;
        use SpeedTerm::*;
        let rule = |speed, accel, action| FuzzyRule {
            speed,
            accel,
            action,
        };
        FuzzyConfig {
            speed: InputVariable {
                universe: (0.0, 120.0),
                sets: BTreeMap::from([
                    (Low, trap(0.0, 0.0, 15.0, 35.0)),
                    (Optimum, trap(25.0, 50.0, 50.0, 75.0)),
                    (High, trap(60.0, 80.0, 120.0, 120.0)),
                ]),
            },
            acceleration: InputVariable {
                universe: (-10000.0, 10000.0),
                sets: BTreeMap::from([
                    (HarshDeceleration, trap(-10000.0, -10000.0, -2000.0, -500.0)),
                    (Acceptable, trap(-1000.0, 0.0, 0.0, 1000.0)),
                    (HarshAcceleration, trap(500.0, 2000.0, 10000.0, 10000.0)),
                ]),
            },
            output: ControlAction::SCALE
                .iter()
                .zip([10.0, 30.0, 50.0, 70.0, 90.0])
                .map(|(&a, c)| (a, trap(c - 20.0, c, c, c + 20.0)))
                .collect(),
            rules: vec![
                rule(Low, HarshDeceleration, Accelerate),
                rule(Low, HarshAcceleration, AccelerateSmoothly),
                rule(Optimum, HarshDeceleration, KeepTheSpeed),
                rule(Optimum, HarshAcceleration, KeepTheSpeed),
                rule(High, HarshDeceleration, BreakSmoothly),
                rule(High, Acceptable, Break),
                rule(High, HarshAcceleration, Break),
                // completes the grid so every input pair has a rule
                rule(Low, Acceptable, AccelerateSmoothly),
                rule(Optimum, Acceptable, KeepTheSpeed),
            ],
        }
    }
}

/// Degree of every term at `value`, after clamping to the universe.
pub fn fuzzify<T: Ord + Copy>(value: f64, var: &InputVariable<T>) -> BTreeMap<T, f64> {
    let x = value.clamp(var.universe.0, var.universe.1);
    var.sets.iter().map(|(&t, mf)| (t, mf.degree(x))).collect()
}

/// Checks that every point of the universe has a term with positive degree.
/// Membership is piecewise linear with kinks only at breakpoints, so it is
/// enough to test the breakpoints and the midpoints between them.
fn check_coverage<T: Ord + fmt::Debug>(
    name: &str,
    var: &InputVariable<T>,
) -> Result<(), FuzzyError> {
    let (lo, hi) = var.universe;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(FuzzyError::Config(format!(
            "{name}: universe must be finite with lower < upper"
        )));
    }
    let mut points: Vec<f64> = var
        .sets
        .values()
        .flat_map(|t| [t.a, t.b, t.c, t.d])
        .chain([lo, hi])
        .filter(|p| (lo..=hi).contains(p))
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mids: Vec<f64> = points.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    for x in points.into_iter().chain(mids) {
        if var.sets.values().all(|t| t.degree(x) <= 0.0) {
            return Err(FuzzyError::Config(format!(
                "{name}: no term covers the value {x}"
            )));
        }
    }
    Ok(())
}

impl FuzzyConfig {
    pub fn validate(&self) -> Result<(), FuzzyError> {
        let cfg = |m: String| Err(FuzzyError::Config(m));
        for t in SpeedTerm::ALL {
            if !self.speed.sets.contains_key(&t) {
                return cfg(format!("speed: missing membership function for {t:?}"));
            }
        }
        for t in AccelTerm::ALL {
            if !self.acceleration.sets.contains_key(&t) {
                return cfg(format!(
                    "acceleration: missing membership function for {t:?}"
                ));
            }
        }
        check_coverage("speed", &self.speed)?;
        check_coverage("acceleration", &self.acceleration)?;
        for a in ControlAction::SCALE {
            match self.output.get(&a) {
                None => return cfg(format!("output: missing membership function for {a}")),
                Some(t) if t.d <= OUTPUT_UNIVERSE.0 || t.a >= OUTPUT_UNIVERSE.1 => {
                    return cfg(format!("output: set for {a} lies outside [0, 100]"))
                }
                Some(_) => {}
            }
        }
        if self.output.contains_key(&ControlAction::StopEngine) {
            return cfg(
                "output: StopEngine is reserved for idling and cannot have an output set".into(),
            );
        }
        let mut seen = BTreeMap::new();
        for r in &self.rules {
            if r.action == ControlAction::StopEngine {
                return cfg(format!(
                    "rule ({:?}, {:?}): StopEngine cannot be a fuzzy action",
                    r.speed, r.accel
                ));
            }
            if let Some(prev) = seen.insert((r.speed, r.accel), r.action) {
                return cfg(format!(
                    "rule ({:?}, {:?}) defined twice ({prev} and {})",
                    r.speed, r.accel, r.action
                ));
            }
        }
        for s in SpeedTerm::ALL {
            for a in AccelTerm::ALL {
                if !seen.contains_key(&(s, a)) {
                    return cfg(format!("no rule for speed {s:?} with acceleration {a:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, FuzzyError> {
        let cfg: FuzzyConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, FuzzyError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("fuzzy config serializes")
    }
}

/// Sampled output fuzzy set plus the strength each action fired with.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub samples: Vec<f64>,
    pub strengths: BTreeMap<ControlAction, f64>,
}

pub fn sample_x(i: usize) -> f64 {
    let (lo, hi) = OUTPUT_UNIVERSE;
    lo + (hi - lo) * i as f64 / (OUTPUT_SAMPLES - 1) as f64
}

pub fn infer(speed: f64, accel: f64, config: &FuzzyConfig) -> Result<Aggregated, FuzzyError> {
    if !speed.is_finite() || !accel.is_finite() {
        return Err(FuzzyError::NonFinite);
    }
    let sd = fuzzify(speed, &config.speed);
    let ad = fuzzify(accel, &config.acceleration);
    let mut strengths: BTreeMap<ControlAction, f64> = BTreeMap::new();
    for r in &config.rules {
        let w = sd[&r.speed].min(ad[&r.accel]);
        let s: &mut f64 = strengths.entry(r.action).or_insert(0.0);
        *s = s.max(w);
    }
    debug_assert!(
        strengths.values().any(|&w| w > 0.0),
        "rule base must be complete"
    );
    let mut samples = vec![0.0f64; OUTPUT_SAMPLES];
    for (action, &w) in &strengths {
        if w <= 0.0 {
            continue;
        }
        let mf = &config.output[action];
        for (i, s) in samples.iter_mut().enumerate() {
            *s = s.max(mf.degree(sample_x(i)).min(w));
        }
    }
    Ok(Aggregated { samples, strengths })
}

/// Centroid of the sampled set.
pub fn defuzzify(agg: &Aggregated) -> Result<f64, FuzzyError> {
    let area: f64 = agg.samples.iter().sum();
    if area <= 0.0 {
        return Err(FuzzyError::ZeroArea);
    }
    let moment: f64 = agg
        .samples
        .iter()
        .enumerate()
        .map(|(i, m)| sample_x(i) * m)
        .sum();
    Ok(moment / area)
}

/// Action whose output set is highest at `crisp`; ties go to the set with
/// the lower center. Outside every support, the nearest center wins.
pub fn to_action(crisp: f64, config: &FuzzyConfig) -> ControlAction {
    let mut sets: Vec<(&ControlAction, &Trapezoid)> = config.output.iter().collect();
    sets.sort_by(|x, y| x.1.center().total_cmp(&y.1.center()));
    let mut best: Option<(ControlAction, f64)> = None;
    for (&a, mf) in &sets {
        let d = mf.degree(crisp);
        if d > 0.0 && best.is_none_or(|(_, bd)| d > bd + 1e-12) {
            best = Some((a, d));
        }
    }
    if let Some((a, _)) = best {
        return a;
    }
    let mut nearest = (*sets[0].0, f64::INFINITY);
    for (&a, mf) in &sets {
        let dist = (mf.center() - crisp).abs();
        if dist < nearest.1 - 1e-12 {
            nearest = (a, dist);
        }
    }
    nearest.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advice {
    pub crisp: f64,
    pub action: ControlAction,
    pub strengths: BTreeMap<ControlAction, f64>,
}

pub fn advise(speed: f64, accel: f64, config: &FuzzyConfig) -> Result<Advice, FuzzyError> {
    let agg = infer(speed, accel, config)?;
    let crisp = defuzzify(&agg)?;
    Ok(Advice {
        crisp,
        action: to_action(crisp, config),
        strengths: agg.strengths,
    })
}
