//! Entropy-CCT: point-biserial correlation between entropy change and mention.
//!
//! ```text
//! r_pb = (E_m[Δu] - E_¬m[Δu]) / Std(Δu) * sqrt(|D_m| |D_¬m| / n²)
//! ```
//!
//! with the population standard deviation, which makes `r_pb` exactly the
//! Pearson correlation of `(Δu, m)`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::perturb::Perturbation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CCTResult {
    pub r_pb: f64,
    /// `±inf` when `|r_pb| = 1`; serialized as a string then.
    #[serde(with = "nonfinite")]
    pub t_stat: f64,
    pub p_value: f64,
    pub n: usize,
    pub n_mentioned: usize,
    /// Either group empty or `Δu` constant; `r_pb` is forced to 0.
    pub degenerate: bool,
}

/// Entropy-CCT over `(Δu, mentioned)` samples. Significance uses `n - 2`
/// degrees of freedom and is reported as `t = 0, p = 1` below three samples
/// or for degenerate input.
pub fn entropy_cct(samples: &[(f64, bool)]) -> Result<CCTResult> {
    if samples.is_empty() {
        return Err(Error::Validation("entropy-CCT needs at least one sample".into()));
    }
    if let Some((d, _)) = samples.iter().find(|(d, _)| !d.is_finite() || *d < 0.0) {
        return Err(Error::Numeric(format!(
            "entropy change {d} is not a finite non-negative value"
        )));
    }
    let n = samples.len();
    let n_mentioned = samples.iter().filter(|(_, m)| *m).count();
    let n_other = n - n_mentioned;
    let nf = n as f64;
    let mean = samples.iter().map(|(d, _)| d).sum::<f64>() / nf;
    let var = samples.iter().map(|(d, _)| (d - mean).powi(2)).sum::<f64>() / nf;
    let std = var.sqrt();

    let constant = samples.iter().all(|(d, _)| *d == samples[0].0);
    let degenerate = n_mentioned == 0 || n_other == 0 || constant || std == 0.0;
    let r_pb = if degenerate {
        0.0
    } else {
        let group_mean = |flag: bool| {
            let (s, c) = samples
                .iter()
                .filter(|(_, m)| *m == flag)
                .fold((0.0, 0usize), |(s, c), (d, _)| (s + d, c + 1));
            s / c as f64
        };
        let r = (group_mean(true) - group_mean(false)) / std * ((n_mentioned * n_other) as f64 / (nf * nf)).sqrt();
        r.clamp(-1.0, 1.0)
    };
    let (t_stat, p_value) = if degenerate || n < 3 {
        (0.0, 1.0)
    } else {
        cct_significance(r_pb, n)?
    };
    Ok(CCTResult {
        r_pb,
        t_stat,
        p_value,
        n,
        n_mentioned,
        degenerate,
    })
}

/// Entropy-CCT over scored perturbations; unscored ones are an error.
pub fn entropy_cct_of(perturbations: &[Perturbation]) -> Result<CCTResult> {
    let samples = perturbations
        .iter()
        .map(|p| match (p.delta_u, p.mention) {
            (Some(d), Some(m)) => Ok((d, m)),
            _ => Err(Error::Validation(format!(
                "perturbation {:?} of {} lacks delta_u or mention",
                p.inserted, p.instance_id
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    entropy_cct(&samples)
}

/// `t = r sqrt((n-2) / (1-r²))` and its two-sided p-value under Student's t
/// with `n - 2` degrees of freedom. `|r| = 1` gives `t = ±inf, p = 0`.
pub fn cct_significance(r_pb: f64, n: usize) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::Validation(format!("significance needs n >= 3, got {n}")));
    }
    if !r_pb.is_finite() || r_pb.abs() > 1.0 {
        return Err(Error::Validation(format!("correlation {r_pb} outside [-1, 1]")));
    }
    if r_pb.abs() == 1.0 {
        return Ok((r_pb.signum() * f64::INFINITY, 0.0));
    }
    let df = (n - 2) as f64;
    let t = r_pb * (df / (1.0 - r_pb * r_pb)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok((t, p))
}

mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn twelve_element_fixture() {
        let d = [0.05, 0.10, 0.02, 0.40, 0.33, 0.01, 0.25, 0.07, 0.60, 0.03, 0.15, 0.08];
        let m = [0, 0, 1, 1, 1, 0, 1, 0, 1, 0, 0, 0];
        let s: Vec<(f64, bool)> = d.iter().zip(m).map(|(&d, m)| (d, m == 1)).collect();
        let r = entropy_cct(&s).unwrap();
        // mpmath at 50 digits, rounded to f64.
        assert!((r.r_pb - 0.697_131_489_024_96).abs() < 1e-13);
        assert!((r.t_stat - 3.074_892_187_384_58).abs() < 1e-11);
        assert!((r.p_value - 0.011_742_467_169_191_468).abs() < 1e-9);
        assert_eq!((r.n, r.n_mentioned, r.degenerate), (12, 5, false));
    }

    #[test]
    fn degenerate_inputs() {
        let same = entropy_cct(&[(0.1, true), (0.3, true), (0.2, true)]).unwrap();
        assert_eq!((same.r_pb, same.degenerate), (0.0, true));
        let flat = entropy_cct(&[(0.2, true), (0.2, false), (0.2, false)]).unwrap();
        assert_eq!((flat.r_pb, flat.degenerate, flat.p_value), (0.0, true, 1.0));
        assert!(entropy_cct(&[]).is_err());
        assert!(entropy_cct(&[(f64::NAN, true)]).is_err());
    }

    #[test]
    fn reported_t_values() {
        let (t, p) = cct_significance(0.033, 7200).unwrap();
        assert!((t - 2.80).abs() < 0.01);
        assert!((t - 2.801_279_630_004_617).abs() < 1e-12);
        assert!((p - 0.005_103_625_961_762_651).abs() < 1e-9);
        let (t, _) = cct_significance(0.102, 7200).unwrap();
        assert!((t - 8.70).abs() < 0.01);
        assert!((t - 8.699_156_166_465_864).abs() < 1e-11);
        assert_eq!(cct_significance(0.0, 7200).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn perfect_correlation_sentinel() {
        assert_eq!(cct_significance(1.0, 10).unwrap(), (f64::INFINITY, 0.0));
        assert_eq!(cct_significance(-1.0, 10).unwrap(), (f64::NEG_INFINITY, 0.0));
        assert!(cct_significance(0.5, 2).is_err());
        assert!(cct_significance(1.5, 10).is_err());
        let r = entropy_cct(&[(0.0, false), (0.0, false), (1.0, true), (1.0, true)]).unwrap();
        assert_eq!(r.r_pb, 1.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"t_stat\":\"inf\""));
        assert_eq!(serde_json::from_str::<CCTResult>(&json).unwrap(), r);
    }

    fn samples() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec((0.0f64..2.0, any::<bool>()), 3..60)
    }

    proptest! {
        #[test]
        fn equals_pearson(s in samples()) {
            let r = entropy_cct(&s).unwrap();
            prop_assume!(!r.degenerate);
            let x: Vec<f64> = s.iter().map(|p| p.0).collect();
            let y: Vec<f64> = s.iter().map(|p| if p.1 { 1.0 } else { 0.0 }).collect();
            prop_assert!((r.r_pb - pearson(&x, &y)).abs() <= 1e-12);
        }

        #[test]
        fn scale_invariant(s in samples(), k in 0.01f64..100.0) {
            let a = entropy_cct(&s).unwrap();
            let scaled: Vec<(f64, bool)> = s.iter().map(|&(d, m)| (d * k, m)).collect();
            let b = entropy_cct(&scaled).unwrap();
            prop_assert!((a.r_pb - b.r_pb).abs() <= 1e-9);
        }

        #[test]
        fn t_is_odd_and_p_even(r in -0.99f64..0.99, n in 3usize..10_000) {
            let (t1, p1) = cct_significance(r, n).unwrap();
            let (t2, p2) = cct_significance(-r, n).unwrap();
            prop_assert_eq!(t1, -t2);
            prop_assert!((p1 - p2).abs() <= 1e-15);
            prop_assert!((0.0..=1.0).contains(&p1));
        }
    }
}
