//! Tail probabilities.
//!
//! All tails go through `erfc` from the `libm` crate (fdlibm's rational
//! approximations, accurate to about one ulp), so p-values agree with any
//! other implementation built on a correctly rounded `erfc`.

/// Upper tail `P(Z > z)` of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided normal p-value `P(|Z| ≥ |z|)`.
pub fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Upper tail of χ² with one degree of freedom.
pub fn chi2_sf_1(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt())
}

/// `P(X ≤ k)` for `X ~ Binomial(n, ½)`, exact for `n ≤ 62`.
pub fn binomial_half_cdf(k: u64, n: u64) -> f64 {
    assert!(n <= 62, "exact binomial limited to n <= 62");
    let mut coef: u64 = 1;
    let mut acc: u64 = 0;
    for i in 0..=k.min(n) {
        acc += coef;
        coef = coef * (n - i) / (i + 1);
    }
    acc as f64 / (1u64 << n) as f64
}
