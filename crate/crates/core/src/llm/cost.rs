use rust_decimal::Decimal;

use super::{ModelProfile, Usage};

const PER_MILLION: u32 = 1_000_000;

/// Dollar cost of `usage` at the profile's per-million-token rates, exact.
pub fn accumulate_cost(usage: Usage, profile: &ModelProfile) -> Decimal {
    let scale = Decimal::from(PER_MILLION);
    let input = Decimal::from(usage.input_tokens) * profile.input_price_per_1m_usd / scale;
    let output = Decimal::from(usage.output_tokens) * profile.output_price_per_1m_usd / scale;
    (input + output).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rust_decimal_macros::dec;

    #[test]
    fn one_million_input_tokens() {
        let u = Usage::new(1_000_000, 0);
        assert_eq!(accumulate_cost(u, &ModelProfile::gpt_35_turbo()), dec!(1));
        assert_eq!(accumulate_cost(u, &ModelProfile::gpt_4_32k()), dec!(60));
        assert_eq!(accumulate_cost(u, &ModelProfile::gpt_4_turbo()), dec!(10));
    }

    #[test]
    fn zero_usage_is_free() {
        assert_eq!(accumulate_cost(Usage::default(), &ModelProfile::gpt_4_32k()), Decimal::ZERO);
    }

    #[test]
    fn mixed_usage_on_gpt35() {
        // 500k * $1/1M + 100k * $2/1M
        let oracle = dec!(500000) * dec!(1) / dec!(1000000) + dec!(100000) * dec!(2) / dec!(1000000);
        assert_eq!(oracle, dec!(0.70));
        assert_eq!(accumulate_cost(Usage::new(500_000, 100_000), &ModelProfile::gpt_35_turbo()), oracle);
    }

    #[test]
    fn sub_cent_amounts_are_exact() {
        let c = accumulate_cost(Usage::new(1, 1), &ModelProfile::gpt_4_turbo());
        assert_eq!(c, dec!(0.00004));
    }

    proptest! {
        #[test]
        fn cost_is_linear(a in 0u64..50_000_000, b in 0u64..50_000_000, c in 0u64..50_000_000, d in 0u64..50_000_000) {
            for p in ModelProfile::builtins() {
                let u1 = Usage::new(a, b);
                let u2 = Usage::new(c, d);
                prop_assert_eq!(accumulate_cost(u1 + u2, &p), accumulate_cost(u1, &p) + accumulate_cost(u2, &p));
            }
        }
    }
}
