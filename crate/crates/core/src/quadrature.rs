//! Fixed quadrature rules.

/// 4-point Gauss–Legendre rule on `[0, 1]` as `(node, weight)` pairs. Exact for degree 7.
pub const GAUSS4_UNIT: [(f64, f64); 4] = {
    const A: f64 = 0.339_981_043_584_856_3;
    const B: f64 = 0.861_136_311_594_052_6;
    const WA: f64 = 0.652_145_154_862_546_1;
    const WB: f64 = 0.347_854_845_137_453_9;
    [
        (0.5 * (1.0 - B), 0.5 * WB),
        (0.5 * (1.0 - A), 0.5 * WA),
        (0.5 * (1.0 + A), 0.5 * WA),
        (0.5 * (1.0 + B), 0.5 * WB),
    ]
};

/// 7-point degree-5 rule on the reference triangle: barycentric coordinates and
/// weights normalized to sum to one (multiply by the triangle area).
pub const TRIANGLE7: [([f64; 3], f64); 7] = {
    const W0: f64 = 0.225;
    const A1: f64 = 0.059_715_871_789_769_82;
    const B1: f64 = 0.470_142_064_105_115_1;
    const W1: f64 = 0.132_394_152_788_506_2;
    const A2: f64 = 0.797_426_985_353_087_3;
    const B2: f64 = 0.101_286_507_323_456_3;
    const W2: f64 = 0.125_939_180_544_827_1;
    const T: f64 = 1.0 / 3.0;
    [
        ([T, T, T], W0),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Gauss average of `g` over `[a, b]`, i.e. `(1/(b-a)) ∫ g`.
pub fn gauss_average(a: f64, b: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
    GAUSS4_UNIT
        .iter()
        .map(|&(s, w)| w * g(a + s * (b - a)))
        .sum()
}

/// Composite 4-point Gauss rule with `pieces` equal subintervals on `[a, b]`.
pub fn composite_gauss(a: f64, b: f64, pieces: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / pieces as f64;
    let mut out = Vec::with_capacity(4 * pieces);
    for k in 0..pieces {
        let x0 = a + k as f64 * h;
        for &(s, w) in &GAUSS4_UNIT {
            out.push((x0 + s * h, w * h));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_exact_for_degree_seven() {
        let q: f64 = GAUSS4_UNIT.iter().map(|&(x, w)| w * x.powi(7)).sum();
        assert!((q - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_rule_degree_five() {
        // ∫_T x^a y^b over the unit reference triangle = a! b! / (a + b + 2)!
        let fact = |n: u32| (1..=n).product::<u32>() as f64;
        for (a, b) in [(0, 0), (2, 1), (3, 2), (0, 5), (4, 1)] {
            let q: f64 = TRIANGLE7
                .iter()
                .map(|&(l, w)| 0.5 * w * l[1].powi(a) * l[2].powi(b))
                .sum();
            let exact = fact(a as u32) * fact(b as u32) / fact(a as u32 + b as u32 + 2);
            assert!((q - exact).abs() < 1e-14, "{a} {b}: {q} vs {exact}");
        }
    }

    #[test]
    fn composite_integrates_sine() {
        let q: f64 = composite_gauss(0.0, 1.0, 64)
            .iter()
            .map(|&(x, w)| w * (std::f64::consts::PI * x).sin())
            .sum();
        assert!((q - 2.0 / std::f64::consts::PI).abs() < 1e-14);
    }
}
