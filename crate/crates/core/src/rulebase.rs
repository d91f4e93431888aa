//! Crisp rule base mapping (temperature, humidity, soil moisture) to a pump duty.
//!
//! Each input is cut into three bands. The middle band is a closed interval, so
//! the thresholds themselves (25 °C, 40 %, 10 % …) belong to `Medium` and the
//! three bands partition the real line. Only three band combinations switch the
//! pump on; everything else, including any reading with wet soil, is `Off`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Plausibility window for the temperature sensor, °C.
pub const TEMPERATURE_RANGE_C: (f64, f64) = (-20.0, 60.0);

/// Band thresholds as `(low_below, high_above)`.
pub const TEMPERATURE_BANDS_C: (f64, f64) = (25.0, 35.0);
pub const HUMIDITY_BANDS_PCT: (f64, f64) = (40.0, 70.0);
pub const SOIL_MOISTURE_BANDS_PCT: (f64, f64) = (10.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Temperature,
    Humidity,
    SoilMoisture,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Temperature => "temperature",
            Field::Humidity => "humidity",
            Field::SoilMoisture => "soil moisture",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadingError {
    #[error("{0} is not a finite number")]
    NonFinite(Field),
    #[error("{field} value {value} outside [{min}, {max}]")]
    OutOfRange {
        field: Field,
        value: f64,
        min: f64,
        max: f64,
    },
}

/// One timestamped sample of the three sensors.
///
/// The serialized field names are the compact ones used on the wire and in
/// event logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    #[serde(rename = "t_c")]
    pub temperature_c: f64,
    #[serde(rename = "h_pct")]
    pub humidity_pct: f64,
    #[serde(rename = "m_pct")]
    pub soil_moisture_pct: f64,
    #[serde(rename = "ts_ms")]
    pub timestamp_ms: u64,
}

impl SensorReading {
    /// Builds a reading and validates it.
    pub fn new(
        temperature_c: f64,
        humidity_pct: f64,
        soil_moisture_pct: f64,
        timestamp_ms: u64,
    ) -> Result<Self, ReadingError> {
        let reading = Self {
            temperature_c,
            humidity_pct,
            soil_moisture_pct,
            timestamp_ms,
        };
        reading.validate()?;
        Ok(reading)
    }

    pub fn validate(&self) -> Result<(), ReadingError> {
        check(Field::Temperature, self.temperature_c, TEMPERATURE_RANGE_C)?;
        check(Field::Humidity, self.humidity_pct, (0.0, 100.0))?;
        check(Field::SoilMoisture, self.soil_moisture_pct, (0.0, 100.0))
    }
}

fn check(field: Field, value: f64, (min, max): (f64, f64)) -> Result<(), ReadingError> {
    if !value.is_finite() {
        return Err(ReadingError::NonFinite(field));
    }
    if value < min || value > max {
        return Err(ReadingError::OutOfRange {
            field,
            value,
            min,
            max,
        });
    }
    Ok(())
}

/// Pump actuation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PumpDuty {
    Off,
    Half,
    Full,
}

impl PumpDuty {
    pub const ALL: [PumpDuty; 3] = [PumpDuty::Full, PumpDuty::Half, PumpDuty::Off];

    /// Fraction of the irrigation period the pump runs.
    pub fn fraction(self) -> f64 {
        match self {
            PumpDuty::Off => 0.0,
            PumpDuty::Half => 0.5,
            PumpDuty::Full => 1.0,
        }
    }

    pub fn is_on(self) -> bool {
        self != PumpDuty::Off
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PumpDuty::Off => "off",
            PumpDuty::Half => "half",
            PumpDuty::Full => "full",
        }
    }
}

impl fmt::Display for PumpDuty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PumpDuty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(PumpDuty::Off),
            "half" => Ok(PumpDuty::Half),
            "full" => Ok(PumpDuty::Full),
            other => Err(format!(
                "unknown duty `{other}` (expected full, half or off)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Medium, Level::High];

    /// Band of `value` for thresholds `(low_below, high_above)`; both
    /// thresholds are inside `Medium`.
    pub fn of(value: f64, (low_below, high_above): (f64, f64)) -> Level {
        if value < low_below {
            Level::Low
        } else if value > high_above {
            Level::High
        } else {
            Level::Medium
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Low => "Low",
            Level::Medium => "Medium",
            Level::High => "High",
        })
    }
}

/// Bands of one reading, in (temperature, humidity, soil moisture) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bands {
    pub temperature: Level,
    pub humidity: Level,
    pub soil_moisture: Level,
}

impl Bands {
    pub fn new(temperature: Level, humidity: Level, soil_moisture: Level) -> Self {
        Self {
            temperature,
            humidity,
            soil_moisture,
        }
    }

    /// All 27 combinations, temperature-major, `Low < Medium < High`.
    pub fn all() -> impl Iterator<Item = Bands> {
        Level::ALL.into_iter().flat_map(|t| {
            Level::ALL
                .into_iter()
                .flat_map(move |h| Level::ALL.into_iter().map(move |m| Bands::new(t, h, m)))
        })
    }

    pub fn duty(self) -> PumpDuty {
        use Level::*;
        match (self.temperature, self.humidity, self.soil_moisture) {
            (Low, Low, Low) => PumpDuty::Full,
            (Low, Low, Medium) => PumpDuty::Half,
            (Medium, Medium, Medium) => PumpDuty::Half,
            _ => PumpDuty::Off,
        }
    }
}

pub fn band(reading: &SensorReading) -> Result<Bands, ReadingError> {
    reading.validate()?;
    Ok(Bands::new(
        Level::of(reading.temperature_c, TEMPERATURE_BANDS_C),
        Level::of(reading.humidity_pct, HUMIDITY_BANDS_PCT),
        Level::of(reading.soil_moisture_pct, SOIL_MOISTURE_BANDS_PCT),
    ))
}

pub fn classify(reading: &SensorReading) -> Result<PumpDuty, ReadingError> {
    band(reading).map(Bands::duty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reading(t: f64, h: f64, m: f64) -> SensorReading {
        SensorReading::new(t, h, m, 0).unwrap()
    }

    #[test]
    fn band_examples() {
        use Level::*;
        assert_eq!(
            band(&reading(20.0, 30.0, 5.0)).unwrap(),
            Bands::new(Low, Low, Low)
        );
        assert_eq!(
            band(&reading(25.0, 40.0, 10.0)).unwrap(),
            Bands::new(Medium, Medium, Medium)
        );
        assert_eq!(
            band(&reading(40.0, 80.0, 25.0)).unwrap(),
            Bands::new(High, High, High)
        );
        // upper thresholds are still Medium
        assert_eq!(
            band(&reading(35.0, 70.0, 20.0)).unwrap(),
            Bands::new(Medium, Medium, Medium)
        );
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&reading(20.0, 30.0, 5.0)).unwrap(), PumpDuty::Full);
        assert_eq!(
            classify(&reading(20.0, 30.0, 15.0)).unwrap(),
            PumpDuty::Half
        );
        assert_eq!(
            classify(&reading(30.0, 55.0, 15.0)).unwrap(),
            PumpDuty::Half
        );
        assert_eq!(classify(&reading(30.0, 30.0, 5.0)).unwrap(), PumpDuty::Off);
        assert_eq!(classify(&reading(40.0, 80.0, 25.0)).unwrap(), PumpDuty::Off);
    }

    #[test]
    fn rejects_invalid_fields() {
        let mut r = reading(20.0, 30.0, 5.0);
        r.humidity_pct = 140.0;
        assert!(matches!(
            classify(&r),
            Err(ReadingError::OutOfRange {
                field: Field::Humidity,
                ..
            })
        ));
        r.humidity_pct = f64::NAN;
        assert_eq!(classify(&r), Err(ReadingError::NonFinite(Field::Humidity)));
        assert!(SensorReading::new(-25.0, 10.0, 10.0, 0).is_err());
        assert!(SensorReading::new(61.0, 10.0, 10.0, 0).is_err());
        assert!(SensorReading::new(20.0, 10.0, -0.1, 0).is_err());
        assert!(SensorReading::new(f64::INFINITY, 10.0, 1.0, 0).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let combos: Vec<_> = Bands::all().collect();
        assert_eq!(combos.len(), 27);
        let count = |d| combos.iter().filter(|b| b.duty() == d).count();
        assert_eq!(count(PumpDuty::Full), 1);
        assert_eq!(count(PumpDuty::Half), 2);
        assert_eq!(count(PumpDuty::Off), 24);
    }

    #[test]
    fn duty_fractions() {
        assert_eq!(PumpDuty::Off.fraction(), 0.0);
        assert_eq!(PumpDuty::Half.fraction(), 0.5);
        assert_eq!(PumpDuty::Full.fraction(), 1.0);
        assert_eq!("FULL".parse::<PumpDuty>().unwrap(), PumpDuty::Full);
        assert!("quarter".parse::<PumpDuty>().is_err());
    }

    proptest! {
        #[test]
        fn classify_is_total(t in -20.0f64..=60.0, h in 0.0f64..=100.0, m in 0.0f64..=100.0) {
            prop_assert!(classify(&reading(t, h, m)).is_ok());
        }

        #[test]
        fn wet_soil_is_always_off(t in -20.0f64..=60.0, h in 0.0f64..=100.0, m in 20.000001f64..=100.0) {
            prop_assert_eq!(classify(&reading(t, h, m)).unwrap(), PumpDuty::Off);
        }
    }
}
