//! Shows how raw marker text is grouped for counting.
//!
//! ```text
//! cargo run --example group_values -- Class "gig worker" Age "in her 70s"
//! ```
//!
//! Arguments come in CATEGORY VALUE pairs; without any, a few samples are shown.

use harmscope::normalization::GroupingRules;
use harmscope::rubric::IdentityCategory;

const SAMPLES: &[(&str, &str)] = &[
    ("Class", "gig worker"),
    ("Class", "politician"),
    ("Class", "small business owner"),
    ("Gender", "girls"),
    ("Race", "Black"),
    ("Age", "16-year-old"),
    ("Age", "elderly"),
    ("Nationality", "Argentine"),
    ("Class", "astronaut"),
];

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let pairs: Vec<(&str, &str)> = if args.is_empty() {
        SAMPLES.to_vec()
    } else {
        anyhow::ensure!(args.len().is_multiple_of(2), "expected CATEGORY VALUE pairs");
        args.chunks(2).map(|c| (c[0].as_str(), c[1].as_str())).collect()
    };

    let rules = GroupingRules::bundled();
    for (category, raw) in pairs {
        let category =
            IdentityCategory::parse(category).ok_or_else(|| anyhow::anyhow!("unknown category {category:?}"))?;
        let grouped = rules.group_value(category, raw)?;
        let shown = if grouped.is_mapped() {
            grouped.grouped.as_str()
        } else {
            "(unmapped)"
        };
        println!(
            "{:<20} {:<24} -> {:<22} {:?}",
            category.name(),
            raw,
            shown,
            grouped.rule_applied
        );
    }
    Ok(())
}
