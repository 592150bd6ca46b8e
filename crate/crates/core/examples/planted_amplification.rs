//! Plants two identity values with a known overlap in a synthetic corpus and
//! reads the intersectional and amplification scores back.
//!
//! ```text
//! cargo run --example planted_amplification -- 711 200 150 83
//! ```
//!
//! Arguments: N, incidents with the first value, incidents with the second,
//! incidents with both.

use harmscope::metrics::{amplification_score, intersectional_score, value_prevalence, ValueKey};
use harmscope::normalization::GroupingRules;
use harmscope::rubric::IdentityCategory;
use harmscope::synth::{plant, PlantedValue, SynthSpec};

fn main() -> anyhow::Result<()> {
    let nums: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let [n, n_a, n_b, joint] = match nums.as_slice() {
        [] => [100, 10, 20, 4],
        &[n, a, b, j] => [n, a, b, j],
        _ => anyhow::bail!("expected N N_A N_B JOINT"),
    };

    let spec = SynthSpec {
        seed: 7,
        n_incidents: n,
        value_a: PlantedValue::new(IdentityCategory::Nationality, "US"),
        value_b: PlantedValue::new(IdentityCategory::PoliticalIdentity, "right-wing"),
        n_a,
        n_b,
        joint,
        noise: true,
    };
    let rules = GroupingRules::bundled();
    let table = plant(&spec, &rules)?.expected;

    let a = ValueKey::new(IdentityCategory::Nationality, "us");
    let b = ValueKey::new(IdentityCategory::PoliticalIdentity, "right-wing");
    for v in [&a, &b] {
        let share = value_prevalence(&table, v)?;
        println!(
            "{:<32} {:>6}%  ({}/{})",
            format!("{}={}", v.category.name(), v.value),
            share.percent(1),
            share.count,
            share.total
        );
    }
    let pair = intersectional_score(&table, a.category, b.category)?;
    println!(
        "{:<32} {:>6}%  ({}/{})",
        "both categories",
        pair.percent(1),
        pair.count,
        pair.total
    );

    let edge = amplification_score(&table, &a, &b, 5)?;
    println!(
        "amplification: observed {} vs expected {} -> {} (support ok: {})",
        edge.observed,
        edge.expected_fixed(3),
        edge.score_fixed(3),
        edge.support_ok
    );
    Ok(())
}
