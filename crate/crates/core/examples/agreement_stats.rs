//! Cohen's kappa and PABAK for two annotators' Yes/No labels.
//!
//! ```text
//! cargo run --example agreement_stats -- YYNNY YYNYY
//! ```
//!
//! Each argument is a string of Y/N labels, one per item.

use harmscope::agreement::{cohen_kappa, pabak, percent_agreement, LabelVector};

fn labels(raw: &str) -> anyhow::Result<LabelVector> {
    let labels = raw
        .chars()
        .map(|c| match c.to_ascii_uppercase() {
            'Y' => Ok("Yes"),
            'N' => Ok("No"),
            other => Err(anyhow::anyhow!("label {other:?} is neither Y nor N")),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(LabelVector::from_labels(labels))
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    // 45 Yes/Yes, 5 Yes/No, 5 No/Yes, 45 No/No.
    let default_a = format!("{}{}{}{}", "Y".repeat(45), "Y".repeat(5), "N".repeat(5), "N".repeat(45));
    let default_b = format!("{}{}{}{}", "Y".repeat(45), "N".repeat(5), "Y".repeat(5), "N".repeat(45));
    let a = labels(&args.next().unwrap_or(default_a))?;
    let b = labels(&args.next().unwrap_or(default_b))?;

    let share = percent_agreement(&a, &b)?;
    let kappa = cohen_kappa(&a, &b)?;
    let adjusted = pabak(&a, &b)?;
    println!("items:     {}", kappa.n_items);
    println!("agreement: {} ({}/{})", share.fixed(3), share.count, share.total);
    println!("p_e:       {:.4}", kappa.p_e);
    match kappa.kappa {
        Some(k) => println!("kappa:     {k:.4}"),
        None => println!("kappa:     undefined (chance agreement is 1)"),
    }
    println!("PABAK:     {:.4}", adjusted.pabak.unwrap_or(f64::NAN));
    Ok(())
}
