//! Independent oracles for the spectrogram front-ends.

use std::f64::consts::PI;

use asckit::audio::AudioClip;
use asckit::spectra::{
    cqt, cqt_bin_response, extract, gammatone_bank, log_mel, mel_filterbank, rescale_freq, stft,
    stft_with_window, CqtParams, FrameParams, GammatoneParams, Matrix, SpectrogramKind, Window, LOG_FLOOR,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn clip(samples: Vec<f64>, fs: u32) -> AudioClip {
    AudioClip::new(samples, fs, "t").unwrap()
}

fn tone(f: f64, fs: u32, n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (2.0 * PI * f * i as f64 / fs as f64).sin()).collect()
}

/// O(N²) DFT magnitude of each Hamming-windowed, zero-padded frame.
fn naive_stft(x: &[f64], p: &FrameParams) -> Matrix {
    let frames = (x.len() - p.window_len) / p.hop + 1;
    let bins = p.n_fft / 2 + 1;
    let w: Vec<f64> = (0..p.window_len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / p.window_len as f64).cos())
        .collect();
    let mut out = Matrix::zeros(bins, frames);
    for t in 0..frames {
        let frame: Vec<f64> = (0..p.window_len).map(|n| x[t * p.hop + n] * w[n]).collect();
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in frame.iter().enumerate() {
                let ang = -2.0 * PI * ((k * n) % p.n_fft) as f64 / p.n_fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            out.set(k, t, re.hypot(im));
        }
    }
    out
}

fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    diff.sqrt() / b.frobenius()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

#[test]
fn stft_matches_naive_dft() {
    let p = FrameParams::default();
    for seed in 0..3 {
        let x = noise(5000, seed);
        let fast = stft_with_window(&x, &p, Window::Hamming).unwrap();
        let err = rel_frobenius(&fast, &naive_stft(&x, &p));
        assert!(err <= 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn rescale_matches_interpolation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lin = Matrix::from_fn(1025, 4, |_, _| rng.random_range(0.0..3.0));
    let out = rescale_freq(&lin).unwrap();
    for i in 0..128 {
        let q = i as f64 * 1024.0 / 127.0;
        let lo = q as usize;
        let hi = if lo == 1024 { lo } else { lo + 1 };
        for t in 0..4 {
            let want = lin.get(lo, t) * (1.0 - (q - lo as f64)) + lin.get(hi, t) * (q - lo as f64);
            assert!((out.get(i, t) - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn logmel_and_gam_compose_from_parts() {
    let p = FrameParams::default();
    let c = clip(noise(8000, 9), 22_050);
    let lin = stft(&c, &p).unwrap();
    let mel = mel_filterbank(22_050, 2048, 128, 10.0).unwrap();
    let gt = gammatone_bank(22_050, 2048, &GammatoneParams::default()).unwrap();
    let got_mel = log_mel(&c, &p).unwrap();
    let got_gam = extract(&c, SpectrogramKind::Gam, &p).unwrap();
    for (bank, got) in [(&mel, &got_mel), (&gt, &got_gam)] {
        for t in 0..lin.cols() {
            for r in 0..128 {
                let e: f64 = (0..1025).map(|j| bank.weights.get(r, j) * lin.get(j, t)).sum();
                assert!((got.data.get(r, t) - e.max(LOG_FLOOR).log10()).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn zero_signal_hits_the_floor() {
    let p = FrameParams::default();
    let c = clip(vec![0.0; 1290 + 3 * 256], 16_000);
    for kind in [SpectrogramKind::Stft, SpectrogramKind::LogMel, SpectrogramKind::Gam] {
        let s = extract(&c, kind, &p).unwrap();
        assert!(s.data.data().iter().all(|&v| v == -10.0), "{kind}");
    }
    let s = extract(&c, SpectrogramKind::Cqt, &p).unwrap();
    assert!(s.data.data().iter().all(|&v| v == 0.0));
}

#[test]
fn log_kinds_obey_the_gain_law() {
    let p = FrameParams::default();
    let x = noise(6000, 11);
    let base = clip(x.clone(), 16_000);
    for g in [10.0, 0.25] {
        let scaled = clip(x.iter().map(|v| v * g).collect(), 16_000);
        for kind in [SpectrogramKind::Stft, SpectrogramKind::LogMel, SpectrogramKind::Gam] {
            let a = extract(&base, kind, &p).unwrap();
            let b = extract(&scaled, kind, &p).unwrap();
            for (u, v) in a.data.data().iter().zip(b.data.data()) {
                if *u > -9.0 && *v > -9.0 {
                    assert!((v - u - f64::log10(g)).abs() < 1e-9, "{kind}");
                }
            }
        }
    }
}

#[test]
fn cqt_tone_peaks_at_its_bin() {
    let fs = 16_000;
    let cp = CqtParams::default();
    let p = FrameParams::default();
    for k in [40usize, 70, 100] {
        let c = clip(tone(cp.freq(k), fs, 48_000), fs);
        let s = cqt(&c, &cp, &p).unwrap();
        let mid = s.frames() / 2;
        let arg = argmax(&s.data.column(mid));
        assert!(arg.abs_diff(k) <= 1, "tone at bin {k} peaked at {arg}");
    }
}

/// −3 dB half-width of bin k, found by bisection above the center.
fn half_width(cp: &CqtParams, fs: u32, k: usize) -> f64 {
    let fk = cp.freq(k);
    let peak = cqt_bin_response(cp, fs, k, fk);
    let target = peak / 2f64.sqrt();
    let (mut lo, mut hi) = (0.0, fk / cp.q());
    assert!(cqt_bin_response(cp, fs, k, fk + hi) < target);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cqt_bin_response(cp, fs, k, fk + mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn cqt_bandwidth_is_constant_q() {
    let cp = CqtParams::default();
    let ratios: Vec<f64> = (0..128).step_by(9).map(|k| 2.0 * half_width(&cp, 16_000, k) / cp.freq(k)).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    for r in &ratios {
        assert!((r / mean - 1.0).abs() < 0.05, "{ratios:?}");
    }
}

#[test]
fn gammatone_tone_peaks_at_its_row() {
    let fs = 22_050;
    let p = FrameParams::default();
    let centers = GammatoneParams::default().center_freqs(fs).unwrap();
    for r in [60usize, 90, 120] {
        let c = clip(tone(centers[r], fs, 6000), fs);
        let s = extract(&c, SpectrogramKind::Gam, &p).unwrap();
        assert_eq!(argmax(&s.data.column(1)), r);
    }
}

#[test]
fn all_kinds_share_one_shape() {
    let p = FrameParams::default();
    let c = clip(noise(16_000 * 3, 2), 16_000);
    let t = p.n_frames(c.samples.len()).unwrap();
    for kind in SpectrogramKind::ALL {
        let s = extract(&c, kind, &p).unwrap();
        assert_eq!((s.data.rows(), s.frames()), (128, t), "{kind}");
        assert!(s.data.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn ten_second_clip_shape() {
    let p = FrameParams::default();
    let c = clip(noise(441_000, 4), 44_100);
    for kind in SpectrogramKind::ALL {
        let s = extract(&c, kind, &p).unwrap();
        assert_eq!((s.data.rows(), s.frames()), (128, 1718), "{kind}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shape_parity_for_any_length(extra in 0usize..3000, seed in 0u64..1000, fs in prop::sample::select(vec![16_000u32, 22_050, 44_100])) {
        let p = FrameParams::default();
        let c = clip(noise(1290 + extra, seed), fs);
        let t = p.n_frames(c.samples.len()).unwrap();
        for kind in SpectrogramKind::ALL {
            let s = extract(&c, kind, &p).unwrap();
            prop_assert_eq!((s.data.rows(), s.frames()), (128, t));
        }
    }

    #[test]
    fn banks_are_normalized(fs in 8_000u32..48_000, f_min in 0.0f64..200.0) {
        let mel = mel_filterbank(fs, 2048, 128, f_min).unwrap();
        let gt = gammatone_bank(fs, 2048, &GammatoneParams { f_min, ..GammatoneParams::default() }).unwrap();
        for bank in [mel, gt] {
            for r in 0..128 {
                let row = bank.weights.row(r);
                prop_assert!(row.iter().all(|&w| w >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
