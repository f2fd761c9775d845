//! Weather descriptors and providers.
//!
//! A provider answers "what was the weather at this place, on this date, at
//! this hour" with one of a closed set of descriptors. Two providers ship:
//! [`FixtureProvider`], backed by a JSON document, and [`HttpProvider`],
//! which talks to any REST weather service whose response carries the
//! descriptor at a configurable field path.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeatherError {
    #[error("weather unavailable: {0}")]
    Unavailable(String),
    #[error("unknown weather descriptor {0:?}")]
    UnknownDescriptor(String),
    #[error("invalid fixture key {key:?}: {reason}")]
    InvalidKey { key: String, reason: String },
    #[error("invalid weather query: {0}")]
    InvalidQuery(String),
    #[error("invalid severity order: {0}")]
    InvalidOrder(String),
    #[error("reading fixture file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixture file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Weather descriptor, in default severity order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeatherCondition {
    Sunny,
    Clear,
    PartlyCloudy,
    Cloudy,
    Overcast,
    PatchyRainNearby,
    LightDrizzle,
    LightRainShower,
    ModerateRain,
    ModerateOrHeavyRain,
    Mist,
    Fog,
}

impl WeatherCondition {
    pub const ALL: [WeatherCondition; 12] = [
        WeatherCondition::Sunny,
        WeatherCondition::Clear,
        WeatherCondition::PartlyCloudy,
        WeatherCondition::Cloudy,
        WeatherCondition::Overcast,
        WeatherCondition::PatchyRainNearby,
        WeatherCondition::LightDrizzle,
        WeatherCondition::LightRainShower,
        WeatherCondition::ModerateRain,
        WeatherCondition::ModerateOrHeavyRain,
        WeatherCondition::Mist,
        WeatherCondition::Fog,
    ];

    /// Descriptor used when a provider has no data.
    pub const FALLBACK: WeatherCondition = WeatherCondition::Clear;

    pub fn name(self) -> &'static str {
        match self {
            WeatherCondition::Sunny => "Sunny",
            WeatherCondition::Clear => "Clear",
            WeatherCondition::PartlyCloudy => "PartlyCloudy",
            WeatherCondition::Cloudy => "Cloudy",
            WeatherCondition::Overcast => "Overcast",
            WeatherCondition::PatchyRainNearby => "PatchyRainNearby",
            WeatherCondition::LightDrizzle => "LightDrizzle",
            WeatherCondition::LightRainShower => "LightRainShower",
            WeatherCondition::ModerateRain => "ModerateRain",
            WeatherCondition::ModerateOrHeavyRain => "ModerateOrHeavyRain",
            WeatherCondition::Mist => "Mist",
            WeatherCondition::Fog => "Fog",
        }
    }

    /// Rank under the default severity order (Sunny = 0 .. Fog = 11).
    pub fn severity_rank(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for WeatherCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeatherCondition {
    type Err = WeatherError;

    /// Case-insensitive; spaces, hyphens and underscores are ignored, so
    /// "Partly cloudy", "partly_cloudy" and "PartlyCloudy" all parse.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '-' | '_'))
            .flat_map(char::to_lowercase)
            .collect();
        WeatherCondition::ALL
            .into_iter()
            .find(|c| c.name().to_ascii_lowercase() == key)
            .ok_or_else(|| WeatherError::UnknownDescriptor(s.to_string()))
    }
}

impl Serialize for WeatherCondition {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for WeatherCondition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A total order over descriptors used to embed weather as one ordinal
/// feature. The default puts visibility hazards above rain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WeatherCondition>", into = "Vec<WeatherCondition>")]
pub struct SeverityOrder {
    ranks: [u8; 12],
}

impl SeverityOrder {
    /// Builds an order from a least-to-most severe listing of all twelve
    /// descriptors.
    pub fn from_sequence(seq: &[WeatherCondition]) -> Result<Self, WeatherError> {
        if seq.len() != WeatherCondition::ALL.len() {
            return Err(WeatherError::InvalidOrder(format!(
                "expected {} descriptors, got {}",
                WeatherCondition::ALL.len(),
                seq.len()
            )));
        }
        let mut ranks = [u8::MAX; 12];
        for (rank, c) in seq.iter().enumerate() {
            let slot = &mut ranks[*c as usize];
            if *slot != u8::MAX {
                return Err(WeatherError::InvalidOrder(format!("{c} listed twice")));
            }
            *slot = rank as u8;
        }
        Ok(SeverityOrder { ranks })
    }

    pub fn rank(&self, condition: WeatherCondition) -> u8 {
        self.ranks[condition as usize]
    }

    pub fn sequence(&self) -> Vec<WeatherCondition> {
        let mut seq = WeatherCondition::ALL.to_vec();
        seq.sort_by_key(|c| self.rank(*c));
        seq
    }
}

impl Default for SeverityOrder {
    fn default() -> Self {
        SeverityOrder::from_sequence(&WeatherCondition::ALL)
            .expect("default order is a permutation")
    }
}

impl TryFrom<Vec<WeatherCondition>> for SeverityOrder {
    type Error = WeatherError;

    fn try_from(seq: Vec<WeatherCondition>) -> Result<Self, Self::Error> {
        SeverityOrder::from_sequence(&seq)
    }
}

impl From<SeverityOrder> for Vec<WeatherCondition> {
    fn from(order: SeverityOrder) -> Self {
        order.sequence()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherQuery {
    pub latitude: f64,
    pub longitude: f64,
    pub date: NaiveDate,
    pub hour: u8,
}

impl WeatherQuery {
    pub fn validate(&self) -> Result<(), WeatherError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(WeatherError::InvalidQuery(format!(
                "latitude {}",
                self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(WeatherError::InvalidQuery(format!(
                "longitude {}",
                self.longitude
            )));
        }
        if self.hour > 23 {
            return Err(WeatherError::InvalidQuery(format!("hour {}", self.hour)));
        }
        Ok(())
    }

    /// Grid cell at 0.1 degree resolution, as integer tenths.
    pub fn cell(&self) -> (i32, i32) {
        (to_cell(self.latitude), to_cell(self.longitude))
    }
}

fn to_cell(deg: f64) -> i32 {
    (deg * 10.0).round() as i32
}

pub trait WeatherProvider: Send + Sync {
    fn lookup(&self, query: &WeatherQuery) -> Result<WeatherCondition, WeatherError>;
}

/// Always returns the same descriptor.
#[derive(Debug, Clone, Copy)]
pub struct ConstantProvider(pub WeatherCondition);

impl WeatherProvider for ConstantProvider {
    fn lookup(&self, _query: &WeatherQuery) -> Result<WeatherCondition, WeatherError> {
        Ok(self.0)
    }
}

/// Has no data at all; every lookup is unavailable.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoWeather;

impl WeatherProvider for NoWeather {
    fn lookup(&self, _query: &WeatherQuery) -> Result<WeatherCondition, WeatherError> {
        Err(WeatherError::Unavailable(
            "no weather provider configured".into(),
        ))
    }
}

type CellKey = (i32, i32, NaiveDate, u8);

/// File-backed provider keyed by `"lat,lon,date,hour"` strings.
///
/// Coordinates are matched on the nearest 0.1 degree cell, date and hour
/// exactly.
#[derive(Debug, Clone, Default)]
pub struct FixtureProvider {
    entries: HashMap<CellKey, WeatherCondition>,
}

impl FixtureProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        latitude: f64,
        longitude: f64,
        date: NaiveDate,
        hour: u8,
        condition: WeatherCondition,
    ) {
        self.entries.insert(
            (to_cell(latitude), to_cell(longitude), date, hour),
            condition,
        );
    }

    /// Adds `other`'s entries; existing keys keep their condition.
    pub fn merge(&mut self, other: FixtureProvider) {
        for (key, condition) in other.entries {
            self.entries.entry(key).or_insert(condition);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_map(map: &HashMap<String, String>) -> Result<Self, WeatherError> {
        let mut provider = FixtureProvider::new();
        for (key, value) in map {
            let (lat, lon, date, hour) = parse_fixture_key(key)?;
            provider.insert(lat, lon, date, hour, value.parse()?);
        }
        Ok(provider)
    }

    pub fn from_json_str(s: &str) -> Result<Self, WeatherError> {
        let map: HashMap<String, String> = serde_json::from_str(s)?;
        Self::from_map(&map)
    }

    pub fn load(path: &Path) -> Result<Self, WeatherError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes back to the fixture document with keys in sorted order.
    pub fn to_json_string(&self) -> String {
        let map: std::collections::BTreeMap<String, String> = self
            .entries
            .iter()
            .map(|(&(lat, lon, date, hour), c)| {
                (
                    format!(
                        "{:.1},{:.1},{},{}",
                        lat as f64 / 10.0,
                        lon as f64 / 10.0,
                        date,
                        hour
                    ),
                    c.name().to_string(),
                )
            })
            .collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }
}

fn parse_fixture_key(key: &str) -> Result<(f64, f64, NaiveDate, u8), WeatherError> {
    let bad = |reason: &str| WeatherError::InvalidKey {
        key: key.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<&str> = key.split(',').map(str::trim).collect();
    let [lat, lon, date, hour] = parts[..] else {
        return Err(bad("expected \"lat,lon,date,hour\""));
    };
    let lat: f64 = lat.parse().map_err(|_| bad("latitude is not a number"))?;
    let lon: f64 = lon.parse().map_err(|_| bad("longitude is not a number"))?;
    let date =
        NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad("date is not YYYY-MM-DD"))?;
    let hour: u8 = hour.parse().map_err(|_| bad("hour is not an integer"))?;
    if hour > 23 || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(bad("value out of range"));
    }
    Ok((lat, lon, date, hour))
}

impl WeatherProvider for FixtureProvider {
    fn lookup(&self, query: &WeatherQuery) -> Result<WeatherCondition, WeatherError> {
        query.validate()?;
        let (lat, lon) = query.cell();
        self.entries
            .get(&(lat, lon, query.date, query.hour))
            .copied()
            .ok_or_else(|| {
                WeatherError::Unavailable(format!(
                    "no fixture for ({:.1}, {:.1}) {} {:02}:00",
                    lat as f64 / 10.0,
                    lon as f64 / 10.0,
                    query.date,
                    query.hour
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProviderConfig {
    pub base_url: String,
    /// Name of the query parameter carrying the API key.
    pub key_param: String,
    pub api_key: Option<String>,
    /// Dotted path to the descriptor string in the JSON response; numeric
    /// segments index into arrays, e.g. `data.hourly.0.weatherDesc.0.value`.
    pub field_path: String,
    pub location_param: String,
    pub date_param: String,
    pub hour_param: String,
    pub timeout_secs: f64,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        HttpProviderConfig {
            base_url: String::new(),
            key_param: "key".into(),
            api_key: None,
            field_path: "descriptor".into(),
            location_param: "q".into(),
            date_param: "date".into(),
            hour_param: "hour".into(),
            timeout_secs: 5.0,
        }
    }
}

type Slot = Arc<OnceLock<Result<WeatherCondition, String>>>;

/// REST-backed provider.
///
/// Responses are cached per (cell, date, hour); concurrent lookups of the
/// same key share one request. Failed requests are cached as unavailable for
/// the provider's lifetime so a run stays deterministic.
pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
    cache: Mutex<HashMap<CellKey, Slot>>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, WeatherError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| WeatherError::Unavailable(format!("building HTTP client: {e}")))?;
        Ok(HttpProvider {
            config,
            client,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn fetch(&self, key: &CellKey) -> Result<WeatherCondition, String> {
        let (lat, lon, date, hour) = *key;
        let location = format!("{:.1},{:.1}", lat as f64 / 10.0, lon as f64 / 10.0);
        let mut params = vec![
            (self.config.location_param.clone(), location),
            (self.config.date_param.clone(), date.to_string()),
            (self.config.hour_param.clone(), hour.to_string()),
        ];
        if let Some(api_key) = &self.config.api_key {
            params.push((self.config.key_param.clone(), api_key.clone()));
        }
        let response = self
            .client
            .get(&self.config.base_url)
            .query(&params)
            .send()
            .map_err(|e| format!("request failed: {e}"))?;
        if !response.status().is_success() {
            return Err(format!("HTTP status {}", response.status()));
        }
        let body: serde_json::Value = response
            .json()
            .map_err(|e| format!("decoding response: {e}"))?;
        let descriptor = extract_field(&body, &self.config.field_path)
            .ok_or_else(|| format!("no string at field path {:?}", self.config.field_path))?;
        descriptor.parse().map_err(|e: WeatherError| e.to_string())
    }
}

impl WeatherProvider for HttpProvider {
    fn lookup(&self, query: &WeatherQuery) -> Result<WeatherCondition, WeatherError> {
        query.validate()?;
        let (lat, lon) = query.cell();
        let key = (lat, lon, query.date, query.hour);
        let slot = {
            let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            Arc::clone(cache.entry(key).or_default())
        };
        slot.get_or_init(|| self.fetch(&key))
            .clone()
            .map_err(WeatherError::Unavailable)
    }
}

/// Follows a dotted path through a JSON value down to a string.
pub fn extract_field<'a>(value: &'a serde_json::Value, path: &str) -> Option<&'a str> {
    let mut cur = value;
    for seg in path.split('.').filter(|s| !s.is_empty()) {
        cur = match cur {
            serde_json::Value::Array(items) => items.get(seg.parse::<usize>().ok()?)?,
            serde_json::Value::Object(map) => map.get(seg)?,
            _ => return None,
        };
    }
    cur.as_str()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn severity_ranks() {
        assert_eq!(WeatherCondition::Sunny.severity_rank(), 0);
        assert_eq!(WeatherCondition::Fog.severity_rank(), 11);
        assert_eq!(WeatherCondition::ModerateRain.severity_rank(), 8);
        let order = SeverityOrder::default();
        let mut seen: Vec<u8> = WeatherCondition::ALL
            .iter()
            .map(|c| order.rank(*c))
            .collect();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<u8>>());
    }

    #[test]
    fn custom_order_must_be_a_permutation() {
        let mut seq = WeatherCondition::ALL.to_vec();
        seq.swap(0, 11);
        let order = SeverityOrder::from_sequence(&seq).unwrap();
        assert_eq!(order.rank(WeatherCondition::Fog), 0);
        assert_eq!(order.sequence(), seq);

        seq[1] = WeatherCondition::Fog;
        assert!(SeverityOrder::from_sequence(&seq).is_err());
        assert!(SeverityOrder::from_sequence(&seq[..5]).is_err());
    }

    #[test]
    fn descriptor_parsing_is_lenient_on_case_and_spacing() {
        assert_eq!(
            "fog".parse::<WeatherCondition>().unwrap(),
            WeatherCondition::Fog
        );
        assert_eq!(
            "Partly cloudy".parse::<WeatherCondition>().unwrap(),
            WeatherCondition::PartlyCloudy
        );
        assert_eq!(
            "moderate or heavy rain"
                .parse::<WeatherCondition>()
                .unwrap(),
            WeatherCondition::ModerateOrHeavyRain
        );
        assert!("snow".parse::<WeatherCondition>().is_err());
    }

    #[test]
    fn fixture_nearest_cell() {
        let provider = FixtureProvider::from_json_str(
            r#"{"6.9,79.9,2015-05-13,17": "Clear", "7.0,80.0,2015-05-13,0": "fog"}"#,
        )
        .unwrap();
        let q = WeatherQuery {
            latitude: 6.93,
            longitude: 79.87,
            date: date("2015-05-13"),
            hour: 17,
        };
        assert_eq!(provider.lookup(&q).unwrap(), WeatherCondition::Clear);

        let q0 = WeatherQuery {
            latitude: 7.0,
            longitude: 80.0,
            date: date("2015-05-13"),
            hour: 0,
        };
        assert_eq!(provider.lookup(&q0).unwrap(), WeatherCondition::Fog);

        let missing = WeatherQuery {
            date: date("2015-05-14"),
            ..q
        };
        assert!(matches!(
            provider.lookup(&missing),
            Err(WeatherError::Unavailable(_))
        ));
    }

    #[test]
    fn fixture_rejects_unknown_descriptor_and_bad_keys() {
        assert!(matches!(
            FixtureProvider::from_json_str(r#"{"6.9,79.9,2015-05-13,17": "hail"}"#),
            Err(WeatherError::UnknownDescriptor(_))
        ));
        assert!(matches!(
            FixtureProvider::from_json_str(r#"{"6.9,79.9,2015-05-13": "Clear"}"#),
            Err(WeatherError::InvalidKey { .. })
        ));
        assert!(matches!(
            FixtureProvider::from_json_str(r#"{"6.9,79.9,2015-05-13,24": "Clear"}"#),
            Err(WeatherError::InvalidKey { .. })
        ));
    }

    #[test]
    fn fixture_serialization_round_trips() {
        let mut provider = FixtureProvider::new();
        provider.insert(6.93, 79.87, date("2015-05-13"), 17, WeatherCondition::Mist);
        provider.insert(-33.87, 151.21, date("2015-05-13"), 3, WeatherCondition::Fog);
        let back = FixtureProvider::from_json_str(&provider.to_json_string()).unwrap();
        assert_eq!(back.entries, provider.entries);
    }

    #[test]
    fn extract_nested_field() {
        let v: serde_json::Value =
            serde_json::from_str(r#"{"data":{"hourly":[{"weatherDesc":[{"value":"Mist"}]}]}}"#)
                .unwrap();
        assert_eq!(
            extract_field(&v, "data.hourly.0.weatherDesc.0.value"),
            Some("Mist")
        );
        assert_eq!(extract_field(&v, "data.hourly.1"), None);
        assert_eq!(extract_field(&v, "data"), None);
    }

    /// Serves `body` for every request and counts requests.
    fn serve(body: &'static str, delay: Duration) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&hits);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                while reader.read_line(&mut line).unwrap_or(0) > 0 {
                    if line == "\r\n" {
                        break;
                    }
                    line.clear();
                }
                std::thread::sleep(delay);
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        (format!("http://{addr}/weather"), hits)
    }

    #[test]
    fn http_provider_caches_and_deduplicates() {
        let (url, hits) = serve(
            r#"{"current":[{"desc":"Light drizzle"}]}"#,
            Duration::from_millis(100),
        );
        let provider = Arc::new(
            HttpProvider::new(HttpProviderConfig {
                base_url: url,
                field_path: "current.0.desc".into(),
                api_key: Some("secret".into()),
                ..Default::default()
            })
            .unwrap(),
        );
        let q = WeatherQuery {
            latitude: 6.93,
            longitude: 79.87,
            date: date("2015-05-13"),
            hour: 17,
        };
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let p = Arc::clone(&provider);
                std::thread::spawn(move || p.lookup(&q).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), WeatherCondition::LightDrizzle);
        }
        // Same cell, same key.
        let near = WeatherQuery {
            latitude: 6.91,
            ..q
        };
        assert_eq!(
            provider.lookup(&near).unwrap(),
            WeatherCondition::LightDrizzle
        );
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn http_provider_failures_are_unavailable() {
        let (url, _) = serve(r#"{"other":1}"#, Duration::ZERO);
        let provider = HttpProvider::new(HttpProviderConfig {
            base_url: url,
            ..Default::default()
        })
        .unwrap();
        let q = WeatherQuery {
            latitude: 0.0,
            longitude: 0.0,
            date: date("2020-01-01"),
            hour: 0,
        };
        assert!(matches!(
            provider.lookup(&q),
            Err(WeatherError::Unavailable(_))
        ));

        let dead = HttpProvider::new(HttpProviderConfig {
            base_url: "http://127.0.0.1:9/none".into(),
            timeout_secs: 0.5,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(dead.lookup(&q), Err(WeatherError::Unavailable(_))));
    }
}
