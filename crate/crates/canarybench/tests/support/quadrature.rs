//! Quadrature oracle for subsampled-Gaussian Rényi divergences, shared by
//! the accountant tests and the acceptance suite. Written before the fast
//! path; evaluates the defining integral directly with Simpson's rule in
//! log space.

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// ln E_{z ~ N(0, s^2)} [ ((1-q) + q e^{(2z-1)/(2 s^2)})^alpha ]
pub fn log_moment_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let log_1q = (1.0 - q).ln();
    let log_q = q.ln();
    // The tilted integrand peaks near z = alpha; cover generously.
    let lo = -40.0 * sigma - 5.0;
    let hi = alpha + 40.0 * sigma + 5.0;
    let n = 400_000usize; // even number of intervals
    let h = (hi - lo) / n as f64;
    let norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();

    let log_f = |z: f64| -> f64 {
        let u = (2.0 * z - 1.0) / (2.0 * s2);
        let soft = log_add_exp(log_1q, log_q + u);
        alpha * soft + norm - z * z / (2.0 * s2)
    };

    // Simpson weights 1,4,2,...,4,1 in log domain.
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let z = lo + i as f64 * h;
        let w: f64 = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        terms.push(log_f(z) + w.ln());
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    m + sum.ln() + (h / 3.0).ln()
}

pub fn rdp_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    log_moment_quadrature(q, sigma, alpha) / (alpha - 1.0)
}
