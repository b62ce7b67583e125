//! Hoeffding-Bentkus p-values for a `[0, 1]`-bounded mean.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Relative size below which further tail terms are dropped.
const TAIL_CUTOFF: f64 = 1e-18;

/// `KL(Bern(q) || Bern(p))` with `0 ln 0 = 0`.
pub fn kl_bernoulli(q: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Tolerance(p));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("mean {q} is outside [0, 1]")));
    }
    let mut kl = 0.0;
    if q > 0.0 {
        kl += q * (q / p).ln();
    }
    if q < 1.0 {
        kl += (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
    }
    Ok(kl.max(0.0))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `P(Bin(n, p) <= k)`, summed in log space outward from `k`.
///
/// Below the mode the terms fall off geometrically going down from `k`, so
/// the lower tail is summed directly; otherwise the upper tail from `k + 1`
/// is summed and subtracted from one.
pub fn binom_cdf(k: u64, n: u64, p: f64) -> f64 {
    assert!(k <= n, "binom_cdf needs k <= n (k = {k}, n = {n})");
    assert!(
        (0.0..=1.0).contains(&p),
        "binom_cdf needs p in [0, 1], got {p}"
    );
    if k == n {
        return 1.0;
    }
    if p == 0.0 {
        return 1.0;
    }
    if p == 1.0 {
        return 0.0;
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_pmf = |i: u64| ln_choose(n, i) + i as f64 * ln_p + (n - i) as f64 * ln_q;
    let mean = n as f64 * p;

    if (k as f64) <= mean {
        // i -> i - 1 multiplies the pmf by i q / ((n - i + 1) p)
        let anchor = ln_pmf(k);
        let mut log_term = 0.0;
        let mut sum = 1.0;
        let mut i = k;
        while i > 0 {
            log_term += (i as f64).ln() - ((n - i + 1) as f64).ln() + ln_q - ln_p;
            let term = log_term.exp();
            sum += term;
            i -= 1;
            if term < TAIL_CUTOFF * sum {
                break;
            }
        }
        (anchor + sum.ln()).exp().min(1.0)
    } else {
        // i -> i + 1 multiplies the pmf by (n - i) p / ((i + 1) q)
        let start = k + 1;
        let anchor = ln_pmf(start);
        let mut log_term = 0.0;
        let mut sum = 1.0;
        let mut i = start;
        while i < n {
            log_term += ((n - i) as f64).ln() - ((i + 1) as f64).ln() + ln_p - ln_q;
            let term = log_term.exp();
            sum += term;
            i += 1;
            if term < TAIL_CUTOFF * sum {
                break;
            }
        }
        (1.0 - (anchor + sum.ln()).exp()).clamp(0.0, 1.0)
    }
}

/// `ceil(n * risk)`, treating products within 1e-9 of an integer as that
/// integer so that `risk = m / n` maps back to `m`.
pub(crate) fn tail_count(risk_hat: f64, n: u64) -> u64 {
    let x = n as f64 * risk_hat;
    let nearest = x.round();
    let k = if (x - nearest).abs() < 1e-9 {
        nearest
    } else {
        x.ceil()
    };
    (k.max(0.0) as u64).min(n)
}

/// Hoeffding-Bentkus p-value for `H0: risk > level`:
/// `min(1, exp(-n KL(min(r, level) || level)), e * P(Bin(n, level) <= ceil(n r)))`.
pub fn hb_pvalue(risk_hat: f64, n: u64, level: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Empty("p-value from zero calibration points"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Tolerance(level));
    }
    if !(0.0..=1.0).contains(&risk_hat) {
        return Err(Error::Config(format!(
            "empirical risk {risk_hat} is outside [0, 1]"
        )));
    }
    let hoeffding = (-(n as f64) * kl_bernoulli(risk_hat.min(level), level)?).exp();
    let bentkus = std::f64::consts::E * binom_cdf(tail_count(risk_hat, n), n, level);
    Ok(hoeffding.min(bentkus).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_bernoulli(0.3, 0.3).unwrap(), 0.0);
        assert!((kl_bernoulli(0.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // 50-digit evaluation
        assert!((kl_bernoulli(0.25, 0.5).unwrap() - 0.130_812_035_941_136_96).abs() < 1e-9);
        assert!((kl_bernoulli(1.0, 0.25).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(matches!(kl_bernoulli(0.2, 0.0), Err(Error::Tolerance(_))));
        assert!(matches!(kl_bernoulli(0.2, 1.0), Err(Error::Tolerance(_))));
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(binom_cdf(7, 7, 0.3), 1.0);
        assert!((binom_cdf(0, 9, 0.3) - 0.7f64.powi(9)).abs() < 1e-13);
        assert!((binom_cdf(2, 5, 0.5) - 0.5).abs() < 1e-13);
        assert_eq!(binom_cdf(3, 10, 0.0), 1.0);
        assert_eq!(binom_cdf(3, 10, 1.0), 0.0);
    }

    #[test]
    fn cdf_matches_direct_summation_for_small_n() {
        for n in 1..=30u64 {
            for &p in &[0.01f64, 0.2, 0.5, 0.77, 0.99] {
                let mut acc = 0.0;
                let mut choose = 1.0;
                for k in 0..=n {
                    if k > 0 {
                        choose *= (n - k + 1) as f64 / k as f64;
                    }
                    acc += choose * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
                    assert!(
                        (binom_cdf(k, n, p) - acc.min(1.0)).abs() < 1e-12,
                        "k={k} n={n} p={p}"
                    );
                }
            }
        }
    }

    #[test]
    fn pvalue_examples() {
        // zero divergence at risk = level leaves only the Bentkus branch
        let p = hb_pvalue(0.5, 100, 0.5).unwrap();
        let bentkus = std::f64::consts::E * binom_cdf(50, 100, 0.5);
        assert_eq!(p, bentkus.min(1.0));

        assert_eq!(hb_pvalue(0.6, 100, 0.5).unwrap(), 1.0);
        // 50-digit evaluation gives 2.7283e-10
        let tiny = hb_pvalue(0.3, 200, 0.525).unwrap();
        assert!(tiny <= 1e-8);
        assert!((tiny - 2.728_331_019_356_585e-10).abs() < 1e-15);
        // 50-digit evaluation gives 0.0363350103529461
        assert!((hb_pvalue(0.5, 2000, 0.525).unwrap() - 0.036_335_010_352_946_1).abs() < 1e-9);
        assert!(hb_pvalue(0.0, 1000, 0.525).unwrap() < 1e-300);
    }

    #[test]
    fn pvalue_rejects_bad_inputs() {
        assert!(hb_pvalue(0.1, 0, 0.5).is_err());
        assert!(hb_pvalue(0.1, 10, 1.0).is_err());
        assert!(hb_pvalue(1.1, 10, 0.5).is_err());
    }

    #[test]
    fn tail_count_recovers_ratios() {
        for n in [1u64, 7, 200, 1999, 2000] {
            for m in 0..=n.min(50) {
                assert_eq!(tail_count(m as f64 / n as f64, n), m);
            }
        }
        assert_eq!(tail_count(0.3, 200), 60);
        assert_eq!(tail_count(0.301, 200), 61);
    }
}
