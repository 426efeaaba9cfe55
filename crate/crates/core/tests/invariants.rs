use gaussmag_core::riccati::asymptotic_variance;
use gaussmag_core::{
    analytic_variance, derive_couplings, integrate_riccati, propagate_covariance, FilterConfig, PhysicalParams,
    ReducedCovariance, TimeGrid,
};

const DB0: f64 = 1e-12;

fn config(tau: f64, t_final: f64) -> FilterConfig {
    let mut c = FilterConfig::new(derive_couplings(&PhysicalParams::default()).unwrap(), DB0);
    c.tau = tau;
    c.t_final = t_final;
    c
}

/// Largest relative gap between the discrete track and the RK4 solution at
/// the recorded times.
fn gap_to_riccati(tau: f64) -> f64 {
    let mut c = config(tau, 1e-3);
    c.grid = TimeGrid::LogSpaced {
        t_min: 1e-5,
        points: 40,
    };
    let curve = propagate_covariance(&c).unwrap();
    let exact = integrate_riccati(ReducedCovariance::prior(DB0), &c.couplings, 1.0, &curve.times, 1e-9).unwrap();
    curve
        .var_b
        .iter()
        .zip(&exact)
        .map(|(v, e)| (v / e.var_b() - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn discrete_filter_converges_at_first_order() {
    let gaps: Vec<f64> = [4e-8, 2e-8, 1e-8].iter().map(|&tau| gap_to_riccati(tau)).collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "gaps {gaps:?}");
    }
}

#[test]
fn variance_never_increases_with_decay_or_squeezing() {
    for (decay, r) in [(true, 1.0), (true, 3.0), (false, 3.0), (true, 0.5)] {
        let mut c = config(1e-7, 1e-2);
        c.decay = decay;
        c.squeezing = r;
        let curve = propagate_covariance(&c).unwrap();
        assert!(curve.var_b.windows(2).all(|w| w[1] <= w[0]), "decay {decay}, r {r}");
        assert!(curve.jx_fraction.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn long_time_variance_falls_as_inverse_square_of_atom_number() {
    let base = derive_couplings(&PhysicalParams::default()).unwrap();
    for factor in [2.0, 4.0] {
        let p = PhysicalParams {
            atom_number: PhysicalParams::default().atom_number * factor,
            ..PhysicalParams::default()
        };
        let c = derive_couplings(&p).unwrap();
        let t = 1e-2;
        let ratio = analytic_variance(DB0, c.kappa, c.mu, 1.0, t) / analytic_variance(DB0, base.kappa, base.mu, 1.0, t);
        assert!((ratio * factor * factor - 1.0).abs() < 0.03, "factor {factor}: {ratio}");
        let asym = asymptotic_variance(c.kappa, c.mu, 1.0, t) / asymptotic_variance(base.kappa, base.mu, 1.0, t);
        assert!((asym * factor * factor - 1.0).abs() < 1e-12);
    }
}

#[test]
fn photon_flux_enters_only_through_kappa() {
    let base = derive_couplings(&PhysicalParams::default()).unwrap();
    let p = PhysicalParams {
        photon_flux: PhysicalParams::default().photon_flux * 3.0,
        ..PhysicalParams::default()
    };
    let c = derive_couplings(&p).unwrap();
    assert!((c.kappa_sq() / base.kappa_sq() / 3.0 - 1.0).abs() < 1e-12);
    assert!((c.mu / base.mu - 1.0).abs() < 1e-12);
}
