//! Signed magnitudes carried as `(ln|v|, sign)` so that factors such as
//! `h·e^{-E}` with `E` in the hundreds never flush to zero.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub log_abs: f64,
    /// -1, 0 or +1; zero carries `log_abs = -inf`.
    pub sign: i8,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue {
        log_abs: f64::NEG_INFINITY,
        sign: 0,
    };

    pub fn new(log_abs: f64, sign: i8) -> Self {
        if sign == 0 || log_abs == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        LogValue {
            log_abs,
            sign: sign.signum(),
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            LogValue {
                log_abs: v.abs().ln(),
                sign: if v > 0.0 { 1 } else { -1 },
            }
        }
    }

    /// `e^x`, always positive.
    pub fn exp(x: f64) -> Self {
        LogValue { log_abs: x, sign: 1 }
    }

    /// Nearest f64; underflows to signed zero and overflows to infinity.
    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * self.log_abs.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn mul(self, other: LogValue) -> LogValue {
        LogValue::new(self.log_abs + other.log_abs, self.sign * other.sign)
    }

    /// Multiplies by `e^e`.
    pub fn scale_exp(self, e: f64) -> LogValue {
        LogValue::new(self.log_abs + e, self.sign)
    }

    pub fn neg(self) -> LogValue {
        LogValue::new(self.log_abs, -self.sign)
    }

    /// Sign-aware sum; exact cancellation returns zero.
    pub fn add(self, other: LogValue) -> LogValue {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        let (big, small) = if self.log_abs >= other.log_abs {
            (self, other)
        } else {
            (other, self)
        };
        let r = (small.log_abs - big.log_abs).exp();
        if big.sign == small.sign {
            LogValue::new(big.log_abs + r.ln_1p(), big.sign)
        } else if r == 1.0 {
            Self::ZERO
        } else {
            LogValue::new(big.log_abs + (-r).ln_1p(), big.sign)
        }
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            0 => write!(f, "0"),
            s => write!(f, "{}exp({})", if s < 0 { "-" } else { "" }, self.log_abs),
        }
    }
}
