//! Closed-form mean peak age of information for a single-buffer transmitter
//! with Poisson updates, deterministic service `mu` and i.i.d. transmission
//! failures with probability `alpha`.
//!
//! The mean peak age decomposes as `E[A] = E[Y] + E[S] = E[T] + E[W] + E[S]`
//! where `Y` is the interdeparture time of delivered updates, `S` the service
//! span of a delivered update, `W` the idle wait after a delivery and `T` the
//! remainder of the interdeparture interval.

use serde::Serialize;

use crate::error::{positive, ParamError};
use crate::model::{Discipline, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticBreakdown {
    /// Probability that at least one update is generated during a service
    /// period. Preemption probability for PR/PR-RT; discard probability for NPR.
    pub beta: f64,
    pub e_s: f64,
    pub e_w: f64,
    pub e_t: f64,
    pub e_y: f64,
    pub paoi: f64,
}

fn check(lambda_f: f64, mu: f64) -> Result<(), ParamError> {
    positive("lambda_f", lambda_f)?;
    positive("mu", mu)?;
    Ok(())
}

/// `1 - beta = exp(-mu * lambda_f)`, evaluated directly.
fn survival(lambda_f: f64, mu: f64) -> f64 {
    (-mu * lambda_f).exp()
}

/// Probability that an update arrives before the service in progress ends:
/// `1 - exp(-mu * lambda_f)`.
pub fn preemption_prob(lambda_f: f64, mu: f64) -> Result<f64, ParamError> {
    check(lambda_f, mu)?;
    Ok(-(-mu * lambda_f).exp_m1())
}

/// Mean interarrival time conditioned on being shorter than the service time,
/// `E[X | X < mu] = 1/lambda_f + mu (1 - 1/beta)`.
pub fn conditional_interarrival(lambda_f: f64, mu: f64) -> Result<f64, ParamError> {
    check(lambda_f, mu)?;
    let u = lambda_f * mu;
    // mu * (1/u - 1/(e^u - 1)); the two terms cancel for small u.
    let g = if u < 1e-4 {
        0.5 - u / 12.0 + u.powi(3) / 720.0
    } else {
        1.0 / u - 1.0 / u.exp_m1()
    };
    Ok(mu * g)
}

/// Mean peak age under preemption without retransmission.
pub fn paoi_pr(params: &ModelParams) -> Result<AnalyticBreakdown, ParamError> {
    params.validate()?;
    let ModelParams {
        lambda_f: l,
        mu,
        alpha: a,
        ..
    } = *params;
    let beta = preemption_prob(l, mu)?;
    let keep = survival(l, mu);
    let e_s = mu;
    let e_w = 1.0 / l;
    let e_t = (beta + a - beta * a) / (l * keep * (1.0 - a));
    let e_y = e_t + e_w;
    Ok(AnalyticBreakdown {
        beta,
        e_s,
        e_w,
        e_t,
        e_y,
        paoi: e_y + e_s,
    })
}

/// `(E_s, p_s)`: the mean service time accumulated by an update that is never
/// preempted and is eventually received, and the probability of that event.
/// Their ratio is the mean service span of a delivered PR-RT update.
pub fn prrt_service_terms(params: &ModelParams) -> Result<(f64, f64), ParamError> {
    params.validate()?;
    let keep = survival(params.lambda_f, params.mu);
    let a = params.alpha;
    let denom = 1.0 - a * keep;
    let e_s_num = keep * (1.0 - a) * params.mu / (denom * denom);
    let p_s = keep * (1.0 - a) / denom;
    Ok((e_s_num, p_s))
}

/// Mean peak age under preemption with retransmission.
pub fn paoi_prrt(params: &ModelParams) -> Result<AnalyticBreakdown, ParamError> {
    params.validate()?;
    let ModelParams {
        lambda_f: l,
        mu,
        alpha: a,
        ..
    } = *params;
    let beta = preemption_prob(l, mu)?;
    let keep = survival(l, mu);
    let e_s = mu / (1.0 - a * keep);
    let e_w = 1.0 / l;
    // E[Y] = (1 - a + a beta) / (l (1-beta) (1-a)); E[T] is what remains after E[W].
    let e_t = beta / (l * keep * (1.0 - a));
    let e_y = e_t + e_w;
    Ok(AnalyticBreakdown {
        beta,
        e_s,
        e_w,
        e_t,
        e_y,
        paoi: e_y + e_s,
    })
}

/// Mean peak age with no preemption and no retransmission.
pub fn paoi_npr(params: &ModelParams) -> Result<AnalyticBreakdown, ParamError> {
    params.validate()?;
    let ModelParams {
        lambda_f: l,
        mu,
        alpha: a,
        ..
    } = *params;
    let e_s = mu;
    let e_w = 1.0 / l;
    let e_t = (mu + a / l) / (1.0 - a);
    let e_y = e_t + e_w;
    Ok(AnalyticBreakdown {
        beta: preemption_prob(l, mu)?,
        e_s,
        e_w,
        e_t,
        e_y,
        paoi: e_y + e_s,
    })
}

/// Dispatches on `params.discipline`. `None` for disciplines without a closed form.
pub fn paoi(params: &ModelParams) -> Option<Result<AnalyticBreakdown, ParamError>> {
    match params.discipline {
        Discipline::Pr => Some(paoi_pr(params)),
        Discipline::Prrt => Some(paoi_prrt(params)),
        Discipline::Npr => Some(paoi_npr(params)),
        Discipline::Fcfs | Discipline::Replace2 => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(l: f64, mu: f64, a: f64) -> ModelParams {
        ModelParams::new(l, mu, a, Discipline::Pr).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // Reference values evaluated independently with 30-digit arithmetic.
    const PR_05: f64 = 4.663_825_046_000_285;
    const PR_01: f64 = 13.279_676_867_507_196;
    const PRRT_05: f64 = 4.506_172_221_701_288;
    const PRRT_01: f64 = 12.268_051_324_672_816;

    #[test]
    fn beta_values() {
        assert!((preemption_prob(0.5, 1.0).unwrap() - 0.393469).abs() < 5e-7);
        assert!((preemption_prob(0.1, 1.0).unwrap() - 0.095163).abs() < 5e-7);
        assert!(preemption_prob(0.5, 1e-12).unwrap() < 1e-11);
        assert!(preemption_prob(0.0, 1.0).is_err());
        assert!(preemption_prob(1.0, -1.0).is_err());
    }

    #[test]
    fn conditional_interarrival_values() {
        assert!((conditional_interarrival(1.0, 1.0).unwrap() - 0.418023).abs() < 5e-7);
        let small = conditional_interarrival(1e-9, 1.0).unwrap();
        assert!((small - 0.5).abs() < 1e-9);
        assert!(conditional_interarrival(0.0, 1.0).is_err());
    }

    /// Midpoint-rule quadrature of the truncated exponential mean.
    fn conditional_interarrival_quadrature(l: f64, mu: f64) -> f64 {
        let n = 200_000;
        let h = mu / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let s = (i as f64 + 0.5) * h;
            let f = l * (-l * s).exp();
            num += s * f * h;
            den += f * h;
        }
        num / den
    }

    #[test]
    fn conditional_interarrival_matches_quadrature() {
        for &(l, mu) in &[(0.06, 1.0), (0.5, 1.0), (2.0, 0.3), (0.9, 2.5), (1e-3, 1.0)] {
            let q = conditional_interarrival_quadrature(l, mu);
            let c = conditional_interarrival(l, mu).unwrap();
            assert!(rel(c, q) < 1e-8, "l={l} mu={mu}: {c} vs {q}");
            assert!(c < mu);
        }
    }

    #[test]
    fn pr_spot_values() {
        assert!(rel(paoi_pr(&p(0.5, 1.0, 0.1)).unwrap().paoi, PR_05) < 1e-12);
        assert!(rel(paoi_pr(&p(0.1, 1.0, 0.1)).unwrap().paoi, PR_01) < 1e-12);
        // Six-digit values quoted in the model notes.
        assert!(rel(paoi_pr(&p(0.5, 1.0, 0.1)).unwrap().paoi, 4.663826) < 1e-6);
        assert!(rel(paoi_pr(&p(0.1, 1.0, 0.1)).unwrap().paoi, 13.279669) < 1e-6);
    }

    #[test]
    fn prrt_spot_values() {
        assert!(rel(paoi_prrt(&p(0.5, 1.0, 0.1)).unwrap().paoi, PRRT_05) < 1e-12);
        assert!(rel(paoi_prrt(&p(0.1, 1.0, 0.1)).unwrap().paoi, PRRT_01) < 1e-12);
        // The quoted 4.506251 differs from the formula in the fifth digit.
        assert!(rel(paoi_prrt(&p(0.5, 1.0, 0.1)).unwrap().paoi, 4.506251) < 2e-5);
        assert!(rel(paoi_prrt(&p(0.1, 1.0, 0.1)).unwrap().paoi, 12.268051) < 1e-7);
    }

    #[test]
    fn npr_spot_values() {
        let b = paoi_npr(&p(0.5, 1.0, 0.1)).unwrap();
        assert!(rel(b.paoi, (1.0 + 0.2) / 0.9 + 2.0 + 1.0) < 1e-14);
        assert!(rel(b.paoi, 4.333333) < 1e-7);
        let b = paoi_npr(&p(0.1, 1.0, 0.1)).unwrap();
        assert!(rel(b.paoi, 13.222222) < 1e-7);
    }

    #[test]
    fn npr_without_failures_collapses() {
        let b = paoi_npr(&p(0.1, 1.0, 0.0)).unwrap();
        assert!(rel(b.paoi, 12.0) < 1e-14);
    }

    #[test]
    fn pr_limit_without_preemption() {
        let b = paoi_pr(&p(0.2, 1e-9, 0.0)).unwrap();
        assert!(rel(b.paoi, 5.0) < 1e-8);
    }

    #[test]
    fn pr_breakdown_matches_closed_forms() {
        let params = p(0.3, 1.5, 0.2);
        let b = paoi_pr(&params).unwrap();
        let beta = 1.0 - (-0.45f64).exp();
        let closed = 1.0 / (0.3 * (1.0 - beta) * 0.8) + 1.5;
        assert!(rel(b.paoi, closed) < 1e-12);
        assert_eq!(b.e_y, b.e_t + b.e_w);
        assert_eq!(b.paoi, b.e_y + b.e_s);
    }

    /// Solves the first-passage recursion for E[T] directly:
    /// T = (1-b)(1-a) S + (1-b) a (S + W + T) + b (E[X|X<S] + T).
    fn pr_recursion_e_t(l: f64, mu: f64, a: f64) -> f64 {
        let b = 1.0 - (-l * mu).exp();
        let x = conditional_interarrival(l, mu).unwrap();
        let rhs_const = (1.0 - b) * (1.0 - a) * mu + (1.0 - b) * a * (mu + 1.0 / l) + b * x;
        let coef = (1.0 - b) * a + b;
        rhs_const / (1.0 - coef)
    }

    #[test]
    fn pr_e_t_matches_recursion() {
        for &(l, mu, a) in &[(0.06, 1.0, 0.1), (0.5, 1.0, 0.4), (0.9, 1.0, 0.1), (2.0, 0.7, 0.3)] {
            let b = paoi_pr(&p(l, mu, a)).unwrap();
            assert!(rel(b.e_t, pr_recursion_e_t(l, mu, a)) < 1e-10);
        }
    }

    /// Direct summation of the geometric series over retransmission rounds.
    fn prrt_series(l: f64, mu: f64, a: f64) -> (f64, f64) {
        let keep = (-l * mu).exp();
        let (mut e, mut ps) = (0.0, 0.0);
        for k in 0..10_000 {
            let w = a.powi(k) * (1.0 - a) * keep.powi(k + 1);
            e += w * f64::from(k + 1) * mu;
            ps += w;
            if w < 1e-300 {
                break;
            }
        }
        (e, ps)
    }

    #[test]
    fn prrt_terms_match_series() {
        for &(l, mu, a) in &[(0.06, 1.0, 0.1), (0.5, 1.0, 0.4), (0.9, 1.0, 0.9), (0.01, 3.0, 0.5)] {
            let (e, ps) = prrt_service_terms(&p(l, mu, a)).unwrap();
            let (es, pss) = prrt_series(l, mu, a);
            assert!(rel(e, es) < 1e-12, "E_s {e} vs {es}");
            assert!(rel(ps, pss) < 1e-12, "p_s {ps} vs {pss}");
        }
    }

    #[test]
    fn prrt_interdeparture_closed_form() {
        let (l, mu, a) = (0.4, 1.2, 0.25);
        let b = paoi_prrt(&p(l, mu, a)).unwrap();
        let beta = 1.0 - (-l * mu).exp();
        let e_y = (1.0 - a + a * beta) / (l * (1.0 - beta) * (1.0 - a));
        assert!(rel(b.e_y, e_y) < 1e-12);
    }

    #[test]
    fn crossover_exists_for_alpha_0_1() {
        let gap = |l: f64| {
            paoi_npr(&p(l, 1.0, 0.1)).unwrap().paoi - paoi_prrt(&p(l, 1.0, 0.1)).unwrap().paoi
        };
        assert!(gap(0.1) > 0.0);
        assert!(gap(0.5) < 0.0);
    }

    #[test]
    fn blows_up_at_the_edges() {
        assert!(paoi_pr(&p(0.5, 1.0, 0.999_999)).unwrap().paoi > 1e5);
        assert!(paoi_prrt(&p(1e-7, 1.0, 0.1)).unwrap().paoi > 1e6);
        assert!(paoi_npr(&p(0.5, 1.0, 0.999_999)).unwrap().paoi > 1e5);
    }

    #[test]
    fn no_closed_form_for_queues() {
        assert!(paoi(&p(0.5, 1.0, 0.1).with_discipline(Discipline::Fcfs)).is_none());
        assert!(paoi(&p(0.5, 1.0, 0.1).with_discipline(Discipline::Replace2)).is_none());
    }

    proptest! {
        #[test]
        fn pr_equals_prrt_without_failures(l in 1e-3f64..10.0, mu in 1e-3f64..10.0) {
            let a = paoi_pr(&p(l, mu, 0.0)).unwrap().paoi;
            let b = paoi_prrt(&p(l, mu, 0.0)).unwrap().paoi;
            prop_assert!(rel(a, b) <= 1e-12);
        }

        #[test]
        fn prrt_service_ratio(l in 1e-3f64..10.0, mu in 1e-3f64..10.0, a in 0.0f64..0.99) {
            let params = p(l, mu, a);
            let (e, ps) = prrt_service_terms(&params).unwrap();
            let b = paoi_prrt(&params).unwrap();
            prop_assert!(rel(e / ps, b.e_s) < 1e-13);
        }

        #[test]
        fn increasing_in_alpha(l in 1e-2f64..5.0, mu in 1e-2f64..5.0, a in 0.0f64..0.9, da in 1e-3f64..0.09) {
            let lo = p(l, mu, a);
            let hi = p(l, mu, a + da);
            prop_assert!(paoi_pr(&hi).unwrap().paoi > paoi_pr(&lo).unwrap().paoi);
            prop_assert!(paoi_prrt(&hi).unwrap().paoi > paoi_prrt(&lo).unwrap().paoi);
            prop_assert!(paoi_npr(&hi).unwrap().paoi > paoi_npr(&lo).unwrap().paoi);
        }

        #[test]
        fn breakdown_is_consistent(l in 1e-3f64..5.0, mu in 1e-3f64..5.0, a in 0.0f64..0.95) {
            for f in [paoi_pr, paoi_prrt, paoi_npr] {
                let b = f(&p(l, mu, a)).unwrap();
                prop_assert_eq!(b.e_y, b.e_t + b.e_w);
                prop_assert_eq!(b.paoi, b.e_y + b.e_s);
                for v in [b.beta, b.e_s, b.e_w, b.e_t, b.e_y, b.paoi] {
                    prop_assert!(v.is_finite() && v > 0.0);
                }
            }
        }
    }
}
