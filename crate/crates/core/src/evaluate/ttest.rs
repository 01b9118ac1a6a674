//! Paired two-sided Student t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    #[serde(with = "extended_float")]
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub significant: bool,
    /// Set when the differences have zero variance but a nonzero mean.
    #[serde(default)]
    pub degenerate: bool,
}

/// Two-sided tail probability `P(|T| ≥ |t|)` for `df` degrees of freedom,
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Tests the mean of `a − b` against zero.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired t-test on {} vs {} values", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired t-test input".into()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let (t, p, degenerate) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0, false)
        } else {
            (f64::INFINITY.copysign(mean), 0.0, true)
        }
    } else {
        let t = mean / (var.sqrt() / (n as f64).sqrt());
        (t, student_t_two_sided(t, df as f64), false)
    };
    Ok(TTestResult {
        t,
        df,
        p,
        significant: p < ALPHA,
        degenerate,
    })
}

/// Writes infinite values as the strings `"inf"` / `"-inf"` so that JSON
/// stays valid.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
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
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad float {s:?}"))),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_vectors() {
        let r = paired_ttest(&[0.8, 0.9, 0.7], &[0.8, 0.9, 0.7]).unwrap();
        assert_eq!((r.t, r.p, r.df, r.significant, r.degenerate), (0.0, 1.0, 2, false, false));
    }

    #[test]
    fn zero_variance_nonzero_mean() {
        let r = paired_ttest(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5]).unwrap();
        assert!(r.degenerate && r.p == 0.0 && r.t == f64::INFINITY && r.significant);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<TTestResult>(&json).unwrap(), r);
    }

    #[test]
    fn too_short() {
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn hand_example() {
        // d = [1, 2, 3]: mean 2, sd 1, t = 2√3, df 2
        let r = paired_ttest(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // df = 2 closed form: p = 1 − t/√(t²+2)
        let closed = 1.0 - r.t / (r.t * r.t + 2.0).sqrt();
        assert!((r.p - closed).abs() < 1e-12, "{} vs {closed}", r.p);
    }

    #[test]
    fn cauchy_closed_form() {
        // df = 1: p = 1 − (2/π)·atan|t|
        for t in [0.1, 0.5, 1.0, 3.0, 12.0] {
            let closed = 1.0 - 2.0 / std::f64::consts::PI * f64::atan(t);
            assert!((student_t_two_sided(t, 1.0) - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn antisymmetry_and_oracle() {
        let mut rng = crate::seed::rng(31);
        for _ in 0..40 {
            let n = rng.gen_range(2..12);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ab = paired_ttest(&a, &b).unwrap();
            let ba = paired_ttest(&b, &a).unwrap();
            assert_eq!(ab.t, -ba.t);
            assert_eq!(ab.p, ba.p);
            let p = oracle::two_sided_p(ab.t, ab.df as u32);
            assert!((ab.p - p).abs() < 1e-6, "n={n} t={} p={} oracle={p}", ab.t, ab.p);
        }
    }

    #[test]
    fn oracle_density_integrates_to_one() {
        for df in [1, 2, 5, 9, 30] {
            let total = oracle::two_sided_p(0.0, df);
            assert!((total - 1.0).abs() < 1e-8, "df {df}: {total}");
        }
    }
}
