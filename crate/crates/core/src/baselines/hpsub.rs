use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::efb::{normalize_power, Beamformer};
use crate::{Error, Result};

/// Zero-forcing subarray hybrid precoding from channel estimates
/// (`K x N_t`, row `k` is `h_k`).
///
/// Subarray `k` phase-aligns to user `k` (`theta_n = arg h_k[n]`, so that
/// `h_k^H A` adds coherently), the digital stage inverts the `K x K`
/// effective channel `h_k^H A C`, and the result is scaled to power `power`.
pub fn hp_sub_beamform(h_hat: &DMatrix<Complex64>, power: f64) -> Result<Beamformer> {
    let (k, nt) = h_hat.shape();
    if k == 0 || nt % k != 0 {
        return Err(Error::Shape(format!("{nt} antennas do not split into {k} subarrays")));
    }
    let nm = nt / k;
    let theta = DVector::from_fn(nt, |n, _| h_hat[(n / nm, n)].arg());
    let effective = DMatrix::from_fn(k, k, |user, i| {
        (i * nm..(i + 1) * nm)
            .map(|n| h_hat[(user, n)].conj() * Complex64::from_polar(1.0, theta[n]))
            .sum::<Complex64>()
    });
    let d_raw = match effective.clone().try_inverse() {
        Some(inv) if inv.iter().all(|z| z.is_finite()) => inv,
        _ => {
            warn!("HP-sub effective channel is singular; using the pseudo-inverse");
            effective
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::DegenerateBeamformer(e.to_string()))?
        }
    };
    normalize_power(theta, d_raw, power, nm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efb::sum_rate;
    use crate::rng::stream_rng;
    use crate::sysmodel::{complex_gaussian, sample_channel, ChannelRealization, SystemConfig};

    #[test]
    fn single_user_attains_phase_alignment_optimum() {
        let cfg = SystemConfig { n_antennas: 8, n_users: 1, ..Default::default() };
        let mut rng = stream_rng(1, 0);
        for _ in 0..20 {
            let ch = sample_channel(&cfg, &mut rng);
            let bf = hp_sub_beamform(&ch.channels, cfg.power).unwrap();
            let s: f64 = ch.channels.iter().map(|z| z.norm()).sum();
            let expected = (1.0 + cfg.power * s * s / (8.0 * cfg.noise_var())).log2();
            assert!((sum_rate(&ch, &bf, cfg.noise_var()).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn full_csi_nulls_interference() {
        let cfg = SystemConfig { n_antennas: 16, n_users: 2, ..Default::default() };
        let mut rng = stream_rng(2, 0);
        for _ in 0..50 {
            let ch = sample_channel(&cfg, &mut rng);
            let bf = hp_sub_beamform(&ch.channels, 1.0).unwrap();
            let g = ch.channels.conjugate() * bf.precoders();
            let scale = g.norm();
            assert!(g[(0, 1)].norm() <= 1e-9 * scale && g[(1, 0)].norm() <= 1e-9 * scale);
            assert!(bf.analog().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn exact_csi_beats_corrupted_csi() {
        let cfg = SystemConfig { n_antennas: 16, n_users: 2, ..Default::default() };
        let mut rng = stream_rng(3, 0);
        let (mut exact, mut corrupted) = (0.0, 0.0);
        for _ in 0..100 {
            let ch = sample_channel(&cfg, &mut rng);
            let noisy = ch.channels.map(|z| z + complex_gaussian(&mut rng, 4.0));
            exact += sum_rate(&ch, &hp_sub_beamform(&ch.channels, 1.0).unwrap(), cfg.noise_var()).unwrap();
            corrupted += sum_rate(&ch, &hp_sub_beamform(&noisy, 1.0).unwrap(), cfg.noise_var()).unwrap();
        }
        assert!(exact > corrupted, "{exact} vs {corrupted}");
    }

    #[test]
    fn singular_effective_channel_falls_back() {
        // Both users see the same channel, so the effective matrix is rank one.
        let h = DVector::from_fn(4, |n, _| Complex64::from_polar(1.0, 0.3 * n as f64));
        let channels = DMatrix::from_fn(2, 4, |_, n| h[n]);
        let bf = hp_sub_beamform(&channels, 1.0).unwrap();
        assert!((bf.power() - 1.0).abs() < 1e-9);
        let ch = ChannelRealization { channels, gains: DMatrix::zeros(1, 2), aods: DMatrix::zeros(1, 2) };
        assert!(sum_rate(&ch, &bf, 0.1).unwrap() >= 0.0);
    }
}
