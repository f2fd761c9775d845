//! Synthetic tracker traces.
//!
//! A vehicle follows a polyline route, steering its speed toward a target
//! (cruise speed capped by the hour's traffic limit) with style-dependent
//! responsiveness and noise. Fuel per record comes from a small disclosed
//! model, with `dt` in hours:
//!
//! ```text
//! fuel = (base_rate + k_v·|v − v_opt| + k_a·max(a, 0) + idle_rate·[v = 0]) · dt
//! ```
//!
//! where `v` is the record's speed (km/h) and `a` its acceleration (km/h²).

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, DurationRound, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::telemetry::RawRecord;
use crate::weather::{FixtureProvider, WeatherCondition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub latitude: f64,
    pub longitude: f64,
    /// meters
    pub elevation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverStyle {
    Smooth,
    Aggressive,
    /// Alternates between smooth and aggressive every `mixed_period_seconds`.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    /// Fraction of the gap to the target speed closed per second.
    pub gain: f64,
    /// km/h per second
    pub max_accel: f64,
    /// km/h per second
    pub max_decel: f64,
    /// Half-width of the uniform speed noise added per record, km/h.
    pub speed_noise: f64,
}

impl StyleParams {
    pub const SMOOTH: StyleParams = StyleParams {
        gain: 0.05,
        max_accel: 1.5,
        max_decel: 2.0,
        speed_noise: 0.5,
    };
    pub const AGGRESSIVE: StyleParams = StyleParams {
        gain: 0.5,
        max_accel: 8.0,
        max_decel: 10.0,
        speed_noise: 12.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelModel {
    /// L/h
    pub base_rate: f64,
    /// L/h per km/h away from `v_opt`
    pub k_v: f64,
    /// L/h per km/h² of positive acceleration
    pub k_a: f64,
    /// L/h extra while stationary with the engine on
    pub idle_rate: f64,
    /// km/h
    pub v_opt: f64,
}

impl Default for FuelModel {
    fn default() -> Self {
        FuelModel {
            base_rate: 1.2,
            k_v: 0.02,
            k_a: 0.0004,
            idle_rate: 0.3,
            v_opt: 60.0,
        }
    }
}

impl FuelModel {
    /// Liters per hour at speed `v` and acceleration `a`.
    pub fn rate(&self, v: f64, a: f64, ignition: bool) -> f64 {
        if !ignition {
            return 0.0;
        }
        let idle = if v == 0.0 { self.idle_rate } else { 0.0 };
        self.base_rate + self.k_v * (v - self.v_opt).abs() + self.k_a * a.max(0.0) + idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdleStop {
    /// Seconds after departure.
    pub after_seconds: u64,
    pub duration_seconds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeatherSpan {
    /// Seconds after departure from which `condition` holds.
    pub from_seconds: u64,
    pub condition: WeatherCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorProfile {
    pub route: Vec<Waypoint>,
    pub departure: DateTime<Utc>,
    /// Local offset used to look up `traffic_by_hour`.
    pub tz_offset_minutes: i32,
    /// km/h
    pub cruise_speed: f64,
    pub initial_speed: f64,
    pub driver_style: DriverStyle,
    /// Replaces the built-in smooth parameters.
    pub smooth: StyleParams,
    /// Replaces the built-in aggressive parameters.
    pub aggressive: StyleParams,
    pub mixed_period_seconds: u64,
    /// Local hour → speed cap in km/h.
    pub traffic_by_hour: BTreeMap<u8, f64>,
    pub weather_timeline: Vec<WeatherSpan>,
    pub idle_stops: Vec<IdleStop>,
    pub fuel_model: FuelModel,
    pub cadence_seconds: u64,
    /// Each interval is drawn uniformly from `cadence ± jitter`.
    pub cadence_jitter_seconds: u64,
    /// liters at departure
    pub tank_start: f64,
    pub max_duration_seconds: u64,
}

impl Default for GeneratorProfile {
    fn default() -> Self {
        GeneratorProfile {
            route: Vec::new(),
            departure: DateTime::<Utc>::UNIX_EPOCH,
            tz_offset_minutes: 0,
            cruise_speed: 60.0,
            initial_speed: 0.0,
            driver_style: DriverStyle::Smooth,
            smooth: StyleParams::SMOOTH,
            aggressive: StyleParams::AGGRESSIVE,
            mixed_period_seconds: 600,
            traffic_by_hour: BTreeMap::new(),
            weather_timeline: Vec::new(),
            idle_stops: Vec::new(),
            fuel_model: FuelModel::default(),
            cadence_seconds: 17,
            cadence_jitter_seconds: 2,
            tank_start: 300.0,
            max_duration_seconds: 24 * 3600,
        }
    }
}

/// Great-circle distance in km.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    const R: f64 = 6371.0088;
    let (lat1, lat2) = (a.0.to_radians(), b.0.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.1 - a.1).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * R * h.sqrt().asin()
}

fn initial_bearing(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lat2) = (a.0.to_radians(), b.0.to_radians());
    let dlon = (b.1 - a.1).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    let deg = y.atan2(x).to_degrees().rem_euclid(360.0);
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

struct Route {
    points: Vec<Waypoint>,
    /// Cumulative km at each waypoint.
    cumulative: Vec<f64>,
}

impl Route {
    fn new(points: &[Waypoint]) -> Self {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = haversine_km(
                (w[0].latitude, w[0].longitude),
                (w[1].latitude, w[1].longitude),
            );
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Route {
            points: points.to_vec(),
            cumulative,
        }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Position, elevation and heading `km` along the route.
    fn at(&self, km: f64) -> (f64, f64, f64, f64) {
        let km = km.clamp(0.0, self.length());
        let seg = self
            .cumulative
            .windows(2)
            .position(|w| km <= w[1] && w[1] > w[0])
            .unwrap_or(self.points.len() - 2);
        let (p, q) = (self.points[seg], self.points[seg + 1]);
        let span = self.cumulative[seg + 1] - self.cumulative[seg];
        let f = if span > 0.0 {
            (km - self.cumulative[seg]) / span
        } else {
            0.0
        };
        let lerp = |x: f64, y: f64| x + (y - x) * f;
        (
            lerp(p.latitude, q.latitude),
            lerp(p.longitude, q.longitude),
            lerp(p.elevation, q.elevation),
            initial_bearing((p.latitude, p.longitude), (q.latitude, q.longitude)),
        )
    }
}

impl GeneratorProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidProfile(m));
        if self.route.len() < 2 {
            return bad("route needs at least two waypoints".into());
        }
        for (i, w) in self.route.iter().enumerate() {
            if !(w.latitude.is_finite() && (-90.0..=90.0).contains(&w.latitude))
                || !(w.longitude.is_finite() && (-180.0..=180.0).contains(&w.longitude))
                || !w.elevation.is_finite()
            {
                return bad(format!("waypoint {i} has an invalid coordinate"));
            }
        }
        if Route::new(&self.route).length() <= 0.0 {
            return bad("route has zero length".into());
        }
        if !(self.cruise_speed > 0.0 && self.cruise_speed.is_finite()) {
            return bad("cruise_speed must be positive".into());
        }
        if !(self.initial_speed >= 0.0 && self.initial_speed.is_finite()) {
            return bad("initial_speed must be non-negative".into());
        }
        for (name, s) in [("smooth", &self.smooth), ("aggressive", &self.aggressive)] {
            let fields = [s.gain, s.max_accel, s.max_decel, s.speed_noise];
            if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!(
                    "{name} style parameters must be finite and non-negative"
                ));
            }
        }
        if self.driver_style == DriverStyle::Mixed && self.mixed_period_seconds == 0 {
            return bad("mixed_period_seconds must be positive".into());
        }
        for (&h, &cap) in &self.traffic_by_hour {
            if h > 23 {
                return bad(format!("traffic_by_hour has hour {h}"));
            }
            if !(cap > 0.0 && cap.is_finite()) {
                return bad(format!("traffic cap for hour {h} must be positive"));
            }
        }
        let f = &self.fuel_model;
        if [f.base_rate, f.k_v, f.k_a, f.idle_rate, f.v_opt]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("fuel model constants must be finite and non-negative".into());
        }
        if self.cadence_seconds == 0 || self.cadence_jitter_seconds >= self.cadence_seconds {
            return bad("cadence_seconds must be positive and exceed the jitter".into());
        }
        if !(self.tank_start >= 0.0 && self.tank_start.is_finite()) {
            return bad("tank_start must be non-negative".into());
        }
        if self.max_duration_seconds == 0 {
            return bad("max_duration_seconds must be positive".into());
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let p: GeneratorProfile =
            serde_json::from_str(text).map_err(|e| SimError::InvalidProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn style_at(&self, t: u64) -> &StyleParams {
        match self.driver_style {
            DriverStyle::Smooth => &self.smooth,
            DriverStyle::Aggressive => &self.aggressive,
            DriverStyle::Mixed if (t / self.mixed_period_seconds).is_multiple_of(2) => &self.smooth,
            DriverStyle::Mixed => &self.aggressive,
        }
    }

    fn target_speed(&self, at: DateTime<Utc>) -> f64 {
        let local = at + Duration::minutes(self.tz_offset_minutes as i64);
        let cap = self.traffic_by_hour.get(&(local.hour() as u8)).copied();
        cap.map_or(self.cruise_speed, |c| c.min(self.cruise_speed))
    }

    fn idle_at(&self, t: u64) -> bool {
        self.idle_stops
            .iter()
            .any(|s| t >= s.after_seconds && t < s.after_seconds + s.duration_seconds)
    }

    /// Condition in effect `t` seconds after departure.
    pub fn weather_at(&self, t: u64) -> Option<WeatherCondition> {
        self.weather_timeline
            .iter()
            .filter(|s| s.from_seconds <= t)
            .max_by_key(|s| s.from_seconds)
            .map(|s| s.condition)
    }
}

/// Simulates one journey. The same profile and seed always give the same
/// records.
pub fn generate_journey(profile: &GeneratorProfile, seed: u64) -> Result<Vec<RawRecord>, SimError> {
    profile.validate()?;
    let route = Route::new(&profile.route);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voltage = |rng: &mut ChaCha8Rng| 13.8 + rng.gen_range(-0.1..=0.1);

    let mut t: u64 = 0;
    let mut pos = 0.0;
    let mut v = if profile.idle_at(0) {
        0.0
    } else {
        profile.initial_speed
    };
    let mut fuel_level = profile.tank_start;
    let (lat, lon, elev, bearing) = route.at(0.0);
    let mut records = vec![RawRecord {
        timestamp: profile.departure,
        longitude: lon,
        latitude: lat,
        bearing,
        elevation: elev,
        distance: 0.0,
        speed: v,
        acceleration: 0.0,
        ignition: true,
        battery_voltage: voltage(&mut rng),
        fuel_level,
        fuel_consumed: 0.0,
    }];

    let jitter = profile.cadence_jitter_seconds as i64;
    while pos < route.length() && t < profile.max_duration_seconds {
        let dt = (profile.cadence_seconds as i64 + rng.gen_range(-jitter..=jitter)) as u64;
        t += dt;
        let dt_h = dt as f64 / 3600.0;
        let now = profile.departure + Duration::seconds(t as i64);
        let v_new = if profile.idle_at(t) {
            0.0
        } else {
            let style = profile.style_at(t);
            let dt_s = dt as f64;
            let want = style.gain.min(1.0 / dt_s) * (profile.target_speed(now) - v) * dt_s;
            let dv = want.clamp(-style.max_decel * dt_s, style.max_accel * dt_s);
            let noise = if style.speed_noise > 0.0 {
                rng.gen_range(-style.speed_noise..=style.speed_noise)
            } else {
                0.0
            };
            (v + dv + noise).max(0.0)
        };
        let distance = (v + v_new) / 2.0 * dt_h;
        let accel = (v_new - v) / dt_h;
        let fuel = profile.fuel_model.rate(v_new, accel, true) * dt_h;
        pos += distance;
        fuel_level = (fuel_level - fuel).max(0.0);
        let (lat, lon, elev, bearing) = route.at(pos);
        records.push(RawRecord {
            timestamp: now,
            longitude: lon,
            latitude: lat,
            bearing,
            elevation: elev,
            distance,
            speed: v_new,
            acceleration: accel,
            ignition: true,
            battery_voltage: voltage(&mut rng),
            fuel_level,
            fuel_consumed: fuel,
        });
        v = v_new;
    }
    Ok(records)
}

/// Weather fixtures covering every (cell, local date, rounded hour) the
/// aggregation will look up for `records`, taken from the profile's
/// timeline. Earlier records win when two map to the same key.
pub fn weather_fixture(
    profile: &GeneratorProfile,
    records: &[RawRecord],
    tz_offset_minutes: i32,
) -> FixtureProvider {
    let mut fixture = FixtureProvider::default();
    let offset = Duration::minutes(tz_offset_minutes as i64);
    let mut seen = std::collections::HashSet::new();
    for r in records {
        let since = (r.timestamp - profile.departure).num_seconds().max(0) as u64;
        let Some(condition) = profile.weather_at(since) else {
            continue;
        };
        let minute = r
            .timestamp
            .duration_trunc(Duration::minutes(1))
            .expect("minute in range");
        let local = (minute + offset + Duration::minutes(30))
            .duration_trunc(Duration::hours(1))
            .expect("hour in range");
        let key = (
            (r.latitude * 10.0).round() as i64,
            (r.longitude * 10.0).round() as i64,
            local.date_naive(),
            local.hour(),
        );
        if seen.insert(key) {
            fixture.insert(
                r.latitude,
                r.longitude,
                local.date_naive(),
                local.hour() as u8,
                condition,
            );
        }
    }
    fixture
}
