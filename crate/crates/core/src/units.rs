//! Unit conversions. All internal quantities are SI (watts, seconds, hertz, meters).

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Maximum Doppler shift for a terminal moving at `speed` m/s on carrier `carrier_hz`.
pub fn doppler_hz(speed: f64, carrier_hz: f64) -> f64 {
    speed * carrier_hz / SPEED_OF_LIGHT
}
