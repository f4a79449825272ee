//! Resynthesis evaluation metrics.

use crate::error::{Error, Result};
use crate::pitch::PitchTrack;

/// Confidence level both tracks must reach for a frame to count toward the
/// f0 metric.
pub const F0_CONFIDENCE_THRESHOLD: f64 = 0.85;

pub fn hz_to_midi(freq: f64) -> f64 {
    69.0 + 12.0 * (freq / 440.0).log2()
}

/// Mean |MIDI difference| over frames where both tracks are confident.
/// Returns `None` when no frame qualifies (e.g. noise or silence).
pub fn f0_l1_midi(a: &PitchTrack, b: &PitchTrack) -> Result<Option<f64>> {
    if a.n_frames() != b.n_frames() {
        return Err(Error::config(format!(
            "f0 metric: track length mismatch ({} vs {})",
            a.n_frames(),
            b.n_frames()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.n_frames() {
        if a.confidence[i] >= F0_CONFIDENCE_THRESHOLD && b.confidence[i] >= F0_CONFIDENCE_THRESHOLD {
            sum += (hz_to_midi(a.f0[i]) - hz_to_midi(b.f0[i])).abs();
            count += 1;
        }
    }
    Ok(if count == 0 { None } else { Some(sum / count as f64) })
}

/// Fraction of mutually confident frames that disagree by more than one
/// semitone.
pub fn f0_outlier_fraction(a: &PitchTrack, b: &PitchTrack) -> Result<Option<f64>> {
    if a.n_frames() != b.n_frames() {
        return Err(Error::config("f0 metric: track length mismatch"));
    }
    let mut outliers = 0usize;
    let mut count = 0usize;
    for i in 0..a.n_frames() {
        if a.confidence[i] >= F0_CONFIDENCE_THRESHOLD && b.confidence[i] >= F0_CONFIDENCE_THRESHOLD {
            if (hz_to_midi(a.f0[i]) - hz_to_midi(b.f0[i])).abs() > 1.0 {
                outliers += 1;
            }
            count += 1;
        }
    }
    Ok(if count == 0 { None } else { Some(outliers as f64 / count as f64) })
}

/// Mean |dB difference| between two loudness tracks.
pub fn loudness_l1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "loudness metric: track length mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::config("loudness metric: empty tracks"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loudness::loudness_db;
    use crate::pitch::track_pitch;
    use crate::signal::AudioBuffer;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, n: usize) -> AudioBuffer {
        AudioBuffer::new(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn midi_reference_points() {
        assert!((hz_to_midi(440.0) - 69.0).abs() < 1e-12);
        assert!((hz_to_midi(880.0) - 81.0).abs() < 1e-12);
        assert!((hz_to_midi(261.625565) - 60.0).abs() < 1e-6);
    }

    #[test]
    fn identical_signals_score_zero() {
        let a = sine(440.0, 0.5, 8000);
        let ta = track_pitch(&a);
        assert_eq!(f0_l1_midi(&ta, &ta).unwrap(), Some(0.0));
        assert_eq!(f0_outlier_fraction(&ta, &ta).unwrap(), Some(0.0));
        let la = loudness_db(&a);
        assert_eq!(loudness_l1(&la, &la).unwrap(), 0.0);
    }

    #[test]
    fn octave_apart_scores_twelve() {
        let ta = track_pitch(&sine(220.0, 0.5, 8000));
        let tb = track_pitch(&sine(440.0, 0.5, 8000));
        let l1 = f0_l1_midi(&ta, &tb).unwrap().unwrap();
        assert!((l1 - 12.0).abs() < 0.05, "l1 {l1}");
        assert_eq!(f0_outlier_fraction(&ta, &tb).unwrap(), Some(1.0));
    }

    #[test]
    fn unvoiced_tracks_return_none() {
        let quiet = AudioBuffer::new(vec![0.0; 4096], 16000).unwrap();
        let t = track_pitch(&quiet);
        assert_eq!(f0_l1_midi(&t, &t).unwrap(), None);
    }

    #[test]
    fn length_mismatch_rejected() {
        let ta = track_pitch(&sine(440.0, 0.5, 4096));
        let tb = track_pitch(&sine(440.0, 0.5, 4160));
        assert!(f0_l1_midi(&ta, &tb).is_err());
        assert!(loudness_l1(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn loudness_gap_matches_gain_difference() {
        let la = loudness_db(&sine(1000.0, 0.25, 8000));
        let lb = loudness_db(&sine(1000.0, 0.5, 8000));
        let l1 = loudness_l1(&la, &lb).unwrap();
        // Edge frames fade in/out identically, so the mean sits near 6 dB.
        assert!((l1 - 6.02).abs() < 0.3, "l1 {l1}");
    }
}
