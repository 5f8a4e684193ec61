use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::spectral::WaveBuffer;

/// Frame length used to find the active region of a signal.
const ACTIVITY_FRAME: usize = 384;
/// Frames below this fraction of the loudest frame's energy are inactive.
const ACTIVITY_THRESHOLD: f64 = 1e-6;

/// Recipe for one noisy mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub clean_id: String,
    pub noise_id: String,
    pub rir_id: Option<String>,
    /// `f64::INFINITY` leaves the noise out.
    pub target_snr_db: f64,
    pub seed: u64,
}

/// Named signals a [`MixtureSpec`] refers to.
#[derive(Clone, Debug, Default)]
pub struct SourceBank {
    pub clean: BTreeMap<String, WaveBuffer>,
    pub noise: BTreeMap<String, WaveBuffer>,
    pub rir: BTreeMap<String, Vec<f64>>,
}

/// Outputs of [`synthesize_mixture`]: `noisy = reverberant + noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub noisy: WaveBuffer,
    pub reverberant: WaveBuffer,
    pub noise: WaveBuffer,
}

/// Causal convolution truncated to the length of `x`.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .take(n + 1)
                .map(|(i, &hi)| hi * x[n - i])
                .sum()
        })
        .collect()
}

/// Mean power over frames whose energy exceeds a fraction of the loudest frame.
pub fn active_power(x: &[f64]) -> f64 {
    let energies: Vec<(f64, usize)> = x
        .chunks(ACTIVITY_FRAME)
        .map(|c| (c.iter().map(|v| v * v).sum(), c.len()))
        .collect();
    let peak = energies.iter().fold(0.0f64, |m, e| m.max(e.0));
    if peak == 0.0 {
        return 0.0;
    }
    let (energy, count) = energies
        .iter()
        .filter(|e| e.0 > ACTIVITY_THRESHOLD * peak)
        .fold((0.0, 0usize), |(s, n), e| (s + e.0, n + e.1));
    energy / count as f64
}

/// Reverberates `clean` with `rir` (unit impulse when absent) and adds
/// `noise`, tiled or truncated to length, scaled to `snr_db` of active powers.
pub fn mix(clean: &WaveBuffer, noise: &WaveBuffer, rir: Option<&[f64]>, snr_db: f64) -> Result<Mixture> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::CannotSetSnr(format!("target {snr_db} dB")));
    }
    let reverberant = match rir {
        Some(h) => convolve_truncated(clean.samples(), h),
        None => clean.samples().to_vec(),
    };
    let p_signal = active_power(&reverberant);
    if p_signal == 0.0 {
        return Err(Error::CannotSetSnr("clean source is silent".into()));
    }
    let n = reverberant.len();
    let scaled: Vec<f64> = if snr_db == f64::INFINITY {
        vec![0.0; n]
    } else {
        if noise.is_empty() {
            return Err(Error::CannotSetSnr("noise source is empty".into()));
        }
        let tiled: Vec<f64> = noise.samples().iter().copied().cycle().take(n).collect();
        let p_noise = active_power(&tiled);
        if p_noise == 0.0 {
            return Err(Error::CannotSetSnr("noise source is silent".into()));
        }
        let gain = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
        tiled.iter().map(|v| v * gain).collect()
    };
    let noisy: Vec<f64> = reverberant.iter().zip(&scaled).map(|(s, d)| s + d).collect();
    Ok(Mixture {
        noisy: WaveBuffer::new(noisy)?,
        reverberant: WaveBuffer::new(reverberant)?,
        noise: WaveBuffer::new(scaled)?,
    })
}

/// Looks up the sources of `spec` in `bank` and calls [`mix`].
pub fn synthesize_mixture(spec: &MixtureSpec, bank: &SourceBank) -> Result<Mixture> {
    let missing = |kind: &str, id: &str| Error::Config(format!("mixture: unknown {kind} id {id:?}"));
    let clean = bank.clean.get(&spec.clean_id).ok_or_else(|| missing("clean", &spec.clean_id))?;
    let noise = bank.noise.get(&spec.noise_id).ok_or_else(|| missing("noise", &spec.noise_id))?;
    let rir = match &spec.rir_id {
        Some(id) => Some(bank.rir.get(id).ok_or_else(|| missing("rir", id))?.as_slice()),
        None => None,
    };
    mix(clean, noise, rir, spec.target_snr_db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize) -> WaveBuffer {
        WaveBuffer::new((0..n).map(|i| (i as f64 * 0.1).sin() * 0.5).collect()).unwrap()
    }

    fn hiss(n: usize) -> WaveBuffer {
        WaveBuffer::new((0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect()).unwrap()
    }

    #[test]
    fn infinite_snr_is_identity_channel() {
        let s = sine(1000);
        let m = mix(&s, &WaveBuffer::zeros(1000), None, f64::INFINITY).unwrap();
        assert_eq!(m.noisy, s);
    }

    #[test]
    fn zero_db_sets_equal_powers() {
        let m = mix(&sine(4000), &hiss(1500), None, 0.0).unwrap();
        let ratio = active_power(m.reverberant.samples()) / active_power(m.noise.samples());
        assert!((ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_tap_rir() {
        let s = sine(50);
        let m = mix(&s, &hiss(50), Some(&[1.0, 0.5]), f64::INFINITY).unwrap();
        assert_eq!(m.reverberant.samples()[0], s.samples()[0]);
        for n in 1..50 {
            let want = s.samples()[n] + 0.5 * s.samples()[n - 1];
            assert!((m.reverberant.samples()[n] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn silent_clean_cannot_set_snr() {
        let err = mix(&WaveBuffer::zeros(500), &hiss(500), None, 5.0).unwrap_err();
        assert!(err.to_string().contains("cannot set SNR"));
    }

    #[test]
    fn bank_lookup() {
        let mut bank = SourceBank::default();
        bank.clean.insert("c".into(), sine(800));
        bank.noise.insert("n".into(), hiss(800));
        bank.rir.insert("r".into(), vec![1.0, 0.2]);
        let spec = MixtureSpec {
            clean_id: "c".into(),
            noise_id: "n".into(),
            rir_id: Some("r".into()),
            target_snr_db: 5.0,
            seed: 0,
        };
        let m = synthesize_mixture(&spec, &bank).unwrap();
        let snr = 10.0 * (active_power(m.reverberant.samples()) / active_power(m.noise.samples())).log10();
        assert!((snr - 5.0).abs() < 1e-9);
        let bad = MixtureSpec {
            noise_id: "x".into(),
            ..spec
        };
        assert!(synthesize_mixture(&bad, &bank).is_err());
    }
}
