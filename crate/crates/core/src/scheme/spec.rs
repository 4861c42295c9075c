use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SchemeError;

/// One receiver: symbol blocklength, target error probability and channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    #[serde(rename = "N")]
    pub blocklength: usize,
    #[serde(rename = "eps")]
    pub epsilon: f64,
    pub h_re: f64,
    pub h_im: f64,
}

impl UserSpec {
    pub fn new(blocklength: usize, epsilon: f64, channel: Complex64) -> Self {
        UserSpec {
            blocklength,
            epsilon,
            h_re: channel.re,
            h_im: channel.im,
        }
    }

    pub fn channel(&self) -> Complex64 {
        Complex64::new(self.h_re, self.h_im)
    }

    pub fn gain(&self) -> f64 {
        self.channel().norm_sqr()
    }
}

/// K-user downlink: per-user requirements and the total power `P` available to
/// each superimposed symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(rename = "P")]
    pub total_power: f64,
    pub users: Vec<UserSpec>,
}

/// Relative tolerance below which two channel magnitudes count as equal.
pub const CHANNEL_TIE_TOLERANCE: f64 = 1e-12;

impl SystemSpec {
    pub fn new(total_power: f64, users: Vec<UserSpec>) -> Self {
        SystemSpec { total_power, users }
    }

    /// Builds a spec from per-user `(N, eps, SNR in dB)` with real positive
    /// channels, where `SNR_k = P |h_k|^2`.
    pub fn from_snr_db(total_power: f64, users: &[(usize, f64, f64)]) -> Self {
        let users = users
            .iter()
            .map(|&(n, eps, snr_db)| {
                let gain = 10f64.powf(snr_db / 10.0) / total_power;
                UserSpec::new(n, eps, Complex64::new(gain.sqrt(), 0.0))
            })
            .collect();
        SystemSpec { total_power, users }
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn snr(&self, user: usize) -> f64 {
        self.total_power * self.users[user].gain()
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        if self.users.is_empty() {
            return Err(SchemeError::NoUsers);
        }
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return Err(SchemeError::InvalidPower(self.total_power));
        }
        for (k, u) in self.users.iter().enumerate() {
            if u.blocklength == 0 {
                return Err(SchemeError::ZeroBlocklength(k));
            }
            if !(u.epsilon > 0.0 && u.epsilon < 0.5) {
                return Err(SchemeError::InvalidEpsilon { user: k, epsilon: u.epsilon });
            }
            let g = u.channel().norm();
            if !(g > 0.0 && g.is_finite()) {
                return Err(SchemeError::InvalidChannel(k));
            }
        }
        for a in 0..self.users.len() {
            for b in a + 1..self.users.len() {
                let (ga, gb) = (self.users[a].channel().norm(), self.users[b].channel().norm());
                if (ga - gb).abs() <= CHANNEL_TIE_TOLERANCE * ga.max(gb) {
                    return Err(SchemeError::ChannelTie(a, b));
                }
            }
        }
        Ok(())
    }

    /// Applies `rotation` to every channel. Plans depend only on `|h_k|`.
    pub fn rotated(&self, rotation: Complex64) -> SystemSpec {
        let mut s = self.clone();
        for u in &mut s.users {
            let h = u.channel() * rotation;
            u.h_re = h.re;
            u.h_im = h.im;
        }
        s
    }
}
