/// Working precision for root polishing and polynomial evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Double,
    /// Compensated (double-double) Horner evaluation.
    Extended,
}

pub const PRECISION_ENV: &str = "HEAVYQ_PRECISION";

impl Precision {
    /// Reads `HEAVYQ_PRECISION`; anything other than `extended` means double.
    pub fn from_env() -> Self {
        match std::env::var(PRECISION_ENV) {
            Ok(v) if v.eq_ignore_ascii_case("extended") => Precision::Extended,
            _ => Precision::Double,
        }
    }
}
