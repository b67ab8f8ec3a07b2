//! Laplace-transform-type symbols `m(λ) = λ ∫₀^∞ φ(t) e^{-tλ} dt`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{OuError, Result};
use crate::quadrature::{integrate_log, QuadratureSpec};

type PhiFn = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

/// A bounded time profile `φ` (normalised so that `sup |φ| ≤ 1`).
#[derive(Clone)]
pub enum Symbol {
    Constant,
    ExpDecay(f64),
    ImagPower(f64),
    /// `φ = 1` on `(a, b]`; `b` may be infinite.
    Indicator { a: f64, b: f64 },
    /// A user profile without closed-form `m`; its derivatives come from quadrature.
    Custom { name: String, phi: PhiFn },
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Symbol({})", self.spec_string())
    }
}

impl Symbol {
    pub fn exp_decay(a: f64) -> Result<Symbol> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(OuError::InvalidConfig(format!("expdecay needs a > 0, got {a}")));
        }
        Ok(Symbol::ExpDecay(a))
    }

    pub fn imag_power(gamma: f64) -> Result<Symbol> {
        if gamma == 0.0 || !gamma.is_finite() {
            return Err(OuError::InvalidConfig("imagpow needs a finite nonzero exponent".into()));
        }
        Ok(Symbol::ImagPower(gamma))
    }

    pub fn indicator(a: f64, b: f64) -> Result<Symbol> {
        if !(a >= 0.0 && b >= a && a.is_finite()) {
            return Err(OuError::InvalidConfig(format!("indicator needs 0 <= a <= b, got ({a}, {b})")));
        }
        Ok(Symbol::Indicator { a, b })
    }

    pub fn custom(name: &str, phi: impl Fn(f64) -> Complex64 + Send + Sync + 'static) -> Symbol {
        Symbol::Custom {
            name: name.to_string(),
            phi: Arc::new(phi),
        }
    }

    /// Parses `const`, `expdecay:a`, `imagpow:g`, `indicator:a,b` (`b` may be `inf`).
    pub fn parse(text: &str) -> Result<Symbol> {
        let (kind, args) = text.split_once(':').unwrap_or((text, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| OuError::InvalidConfig(format!("bad symbol parameter '{s}' in '{text}'")))
                })
                .collect()
        };
        match kind.trim() {
            "const" if args.is_empty() => Ok(Symbol::Constant),
            "expdecay" => match nums()?.as_slice() {
                [a] => Symbol::exp_decay(*a),
                _ => Err(OuError::InvalidConfig("expdecay takes one parameter".into())),
            },
            "imagpow" => match nums()?.as_slice() {
                [g] => Symbol::imag_power(*g),
                _ => Err(OuError::InvalidConfig("imagpow takes one parameter".into())),
            },
            "indicator" => match nums()?.as_slice() {
                [a, b] => Symbol::indicator(*a, *b),
                _ => Err(OuError::InvalidConfig("indicator takes two parameters".into())),
            },
            _ => Err(OuError::InvalidConfig(format!("unknown symbol '{text}'"))),
        }
    }

    pub fn spec_string(&self) -> String {
        match self {
            Symbol::Constant => "const".into(),
            Symbol::ExpDecay(a) => format!("expdecay:{a}"),
            Symbol::ImagPower(g) => format!("imagpow:{g}"),
            Symbol::Indicator { a, b } => format!("indicator:{a},{b}"),
            Symbol::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self, Symbol::Custom { .. })
    }

    /// True when `φ` is real valued, so the kernels are real.
    pub fn is_real(&self) -> bool {
        !matches!(self, Symbol::ImagPower(_) | Symbol::Custom { .. })
    }

    pub fn phi(&self, t: f64) -> Complex64 {
        match self {
            Symbol::Constant => Complex64::new(1.0, 0.0),
            Symbol::ExpDecay(a) => Complex64::new((-a * t).exp(), 0.0),
            Symbol::ImagPower(g) => Complex64::from_polar(1.0, -g * t.ln()),
            Symbol::Indicator { a, b } => Complex64::new(if t > *a && t <= *b { 1.0 } else { 0.0 }, 0.0),
            Symbol::Custom { phi, .. } => phi(t),
        }
    }

    /// Times where `φ` jumps; quadrature splits there.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Symbol::Indicator { a, b } => [*a, *b].into_iter().filter(|v| *v > 0.0 && v.is_finite()).collect(),
            _ => Vec::new(),
        }
    }

    /// The `order`-th λ-derivative of `m` at `λ`, `Re λ > 0`.
    pub fn m_eval(&self, lambda: Complex64, order: usize) -> Result<Complex64> {
        if !(lambda.re > 0.0) {
            return Err(OuError::DomainError(format!("lambda = {lambda}")));
        }
        let one = Complex64::new(1.0, 0.0);
        let k = order as i32;
        Ok(match self {
            Symbol::Constant => {
                if order == 0 {
                    one
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            // φ = e^{−at}  ⇒  m = λ/(λ + a)
            Symbol::ExpDecay(a) => {
                if order == 0 {
                    lambda / (lambda + a)
                } else {
                    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
                    -a * sign * factorial(order) / (lambda + a).powi(k + 1)
                }
            }
            Symbol::ImagPower(g) => {
                let ig = Complex64::new(0.0, *g);
                let mut falling = one;
                for j in 0..order {
                    falling *= ig - j as f64;
                }
                gamma_complex(one - ig) * falling * (lambda.ln() * (ig - order as f64)).exp()
            }
            Symbol::Indicator { a, b } => {
                let term = |c: f64| (-c).powi(k) * (-lambda * c).exp();
                if b.is_finite() {
                    term(*a) - term(*b)
                } else {
                    term(*a)
                }
            }
            Symbol::Custom { .. } => self.m_by_quadrature(lambda, order)?,
        })
    }

    /// `m^{(k)} = λ F^{(k)} + k F^{(k-1)}` with `F^{(j)}(λ) = ∫ (−t)^j φ(t) e^{−tλ} dt`.
    fn m_by_quadrature(&self, lambda: Complex64, order: usize) -> Result<Complex64> {
        let spec = QuadratureSpec {
            max_subdivisions: 2000,
            ..Default::default()
        };
        let transform = |j: usize| -> Result<Complex64> {
            // e^{−Re λ t} t^j < 1e-18 beyond the horizon
            let horizon = (45.0 + j as f64 * (1.0 + j as f64).ln()) / lambda.re + 10.0 * j as f64 / lambda.re;
            let r = integrate_log(
                |t: f64| self.phi(t) * (-t).powi(j as i32) * (-lambda * t).exp(),
                1e-300_f64.max(1e-16 / lambda.norm()),
                horizon,
                &spec,
            )?;
            Ok(r.value)
        };
        let fk = transform(order)?;
        if order == 0 {
            Ok(lambda * fk)
        } else {
            Ok(lambda * fk + transform(order - 1)? * order as f64)
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Complex Gamma function (Lanczos approximation with reflection).
pub fn gamma_complex(z: Complex64) -> Complex64 {
    use std::f64::consts::PI;
    if z.re < 0.5 {
        let pi = Complex64::new(PI, 0.0);
        return pi / ((pi * z).sin() * gamma_complex(1.0 - z));
    }
    let z = z - 1.0;
    let mut x = Complex64::new(LANCZOS[0], 0.0);
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powc(z + 0.5) * (-t).exp() * x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gamma_values() {
        assert!((gamma_complex(c(5.0, 0.0)).re - 24.0).abs() < 1e-12);
        assert!((gamma_complex(c(0.5, 0.0)).re - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        for y in [0.3, 1.0, 2.5] {
            // |Γ(1 + iy)|² = πy / sinh(πy)
            let g = gamma_complex(c(1.0, y));
            let expect = std::f64::consts::PI * y / (std::f64::consts::PI * y).sinh();
            assert!((g.norm_sqr() - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn closed_forms() {
        let lam = c(1.7, 0.4);
        assert_eq!(Symbol::Constant.m_eval(lam, 0).unwrap(), c(1.0, 0.0));
        let e = Symbol::exp_decay(0.8).unwrap();
        assert!((e.m_eval(lam, 0).unwrap() - lam / (lam + 0.8)).norm() < 1e-15);
        let g = Symbol::imag_power(0.5).unwrap();
        let expect = gamma_complex(c(1.0, -0.5)) * (c(0.0, 0.5) * 2f64.ln()).exp();
        assert!((g.m_eval(c(2.0, 0.0), 0).unwrap() - expect).norm() < 1e-14);
        assert!(matches!(e.m_eval(c(0.0, 1.0), 0), Err(OuError::DomainError(_))));
    }

    #[test]
    fn closed_forms_match_quadrature() {
        let lam = c(1.3, 0.6);
        for sym in [
            Symbol::exp_decay(0.7).unwrap(),
            Symbol::imag_power(0.5).unwrap(),
            Symbol::indicator(0.2, 1.5).unwrap(),
            Symbol::Constant,
        ] {
            let s2 = sym.clone();
            let generic = Symbol::custom("copy", move |t| s2.phi(t));
            for k in 0..3 {
                let a = sym.m_eval(lam, k).unwrap();
                let b = generic.m_eval(lam, k).unwrap();
                assert!((a - b).norm() < 1e-8 * (1.0 + a.norm()), "{sym:?} order {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn derivatives_by_finite_differences() {
        let lam = c(0.9, 0.0);
        let h = 1e-5;
        for sym in [Symbol::exp_decay(1.0).unwrap(), Symbol::imag_power(0.5).unwrap(), Symbol::indicator(0.5, 2.0).unwrap()] {
            for k in 0..3 {
                let fd = (sym.m_eval(lam + h, k).unwrap() - sym.m_eval(lam - h, k).unwrap()) / (2.0 * h);
                let d = sym.m_eval(lam, k + 1).unwrap();
                assert!((fd - d).norm() < 1e-7 * (1.0 + d.norm()));
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for s in ["const", "expdecay:2", "imagpow:0.5", "indicator:0.1,2", "indicator:0,inf"] {
            let sym = Symbol::parse(s).unwrap();
            assert_eq!(Symbol::parse(&sym.spec_string()).unwrap().spec_string(), sym.spec_string());
        }
        assert!(Symbol::parse("indicator:2,1").is_err());
        assert!(Symbol::parse("wave:1").is_err());
        assert!(Symbol::parse("expdecay:-1").is_err());
    }

    #[test]
    fn profiles_are_bounded() {
        for s in ["const", "expdecay:2", "imagpow:0.5", "indicator:0.1,2"] {
            let sym = Symbol::parse(s).unwrap();
            for i in 1..200 {
                assert!(sym.phi(i as f64 * 0.05).norm() <= 1.0 + 1e-15);
            }
        }
    }
}
