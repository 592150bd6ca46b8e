use serde_json::{Map, Number, Value};

use super::ReportBundle;
use crate::metrics::{round_half_up, Share};

/// Decimal places for shares, expected counts and scores in tables.
const DECIMALS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    CategoryPrevalence,
    ValuePrevalence,
    PairMatrix,
    AmplificationEdges,
}

impl Table {
    pub const ALL: [Table; 4] = [
        Self::CategoryPrevalence,
        Self::ValuePrevalence,
        Self::PairMatrix,
        Self::AmplificationEdges,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            Self::CategoryPrevalence => "category_prevalence",
            Self::ValuePrevalence => "value_prevalence",
            Self::PairMatrix => "pair_matrix",
            Self::AmplificationEdges => "amplification_edges",
        }
    }
}

enum Cell {
    Text(String),
    Int(u64),
    /// Already rounded decimal.
    Fixed(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Self::Text(s) | Self::Fixed(s) => s.clone(),
            Self::Int(n) => n.to_string(),
            Self::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Self::Text(s) => Value::String(s.clone()),
            Self::Int(n) => Value::from(*n),
            Self::Fixed(s) => Value::Number(s.parse::<Number>().expect("rounded decimals are valid JSON numbers")),
            Self::Bool(b) => Value::Bool(*b),
        }
    }
}

fn fixed(share: Share) -> Cell {
    Cell::Fixed(share.fixed(DECIMALS))
}

fn rows(bundle: &ReportBundle, table: Table) -> (Vec<&'static str>, Vec<Vec<Cell>>) {
    let n = bundle.causal.n_incidents;
    let share = |count| Share { count, total: n };
    match table {
        Table::CategoryPrevalence => (
            vec!["category", "prevalence", "incidents", "N"],
            bundle
                .category_order()
                .into_iter()
                .map(|c| {
                    let count = bundle.causal.category_count(c);
                    vec![
                        Cell::Text(c.name().into()),
                        fixed(share(count)),
                        Cell::Int(count),
                        Cell::Int(n),
                    ]
                })
                .collect(),
        ),
        Table::ValuePrevalence => (
            vec![
                "category",
                "value",
                "causal_prevalence",
                "overall_prevalence",
                "causal_incidents",
                "overall_incidents",
                "N",
            ],
            bundle
                .value_categories()
                .into_iter()
                .flat_map(|c| bundle.values_for(c))
                .map(|v| {
                    let (causal, overall) = (bundle.causal.value_count(&v), bundle.overall.value_count(&v));
                    vec![
                        Cell::Text(v.category.name().into()),
                        Cell::Text(v.value.clone()),
                        fixed(share(causal)),
                        fixed(share(overall)),
                        Cell::Int(causal),
                        Cell::Int(overall),
                        Cell::Int(n),
                    ]
                })
                .collect(),
        ),
        Table::PairMatrix => (
            vec!["category_a", "category_b", "incidents", "share"],
            bundle
                .pairs
                .matrix
                .iter()
                .map(|cell| {
                    vec![
                        Cell::Text(cell.row.name().into()),
                        Cell::Text(cell.column.name().into()),
                        Cell::Int(cell.share.count),
                        fixed(cell.share),
                    ]
                })
                .collect(),
        ),
        Table::AmplificationEdges => (
            vec![
                "category_a",
                "value_a",
                "category_b",
                "value_b",
                "observed",
                "incidents_a",
                "incidents_b",
                "N",
                "expected",
                "score",
                "support_ok",
            ],
            bundle
                .pairs
                .edges
                .iter()
                .map(|e| {
                    vec![
                        Cell::Text(e.value_a.category.name().into()),
                        Cell::Text(e.value_a.value.clone()),
                        Cell::Text(e.value_b.category.name().into()),
                        Cell::Text(e.value_b.value.clone()),
                        Cell::Int(e.observed),
                        Cell::Int(e.n_a),
                        Cell::Int(e.n_b),
                        Cell::Int(e.n_total),
                        Cell::Fixed(round_half_up(
                            u128::from(e.n_a) * u128::from(e.n_b),
                            e.n_total.into(),
                            DECIMALS,
                        )),
                        Cell::Fixed(e.score_fixed(DECIMALS)),
                        Cell::Bool(e.support_ok),
                    ]
                })
                .collect(),
        ),
    }
}

pub fn render_table(bundle: &ReportBundle, table: Table, format: TableFormat) -> String {
    let (header, rows) = rows(bundle, table);
    match format {
        TableFormat::Csv => {
            let mut writer = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            writer.write_record(&header).expect("in-memory csv");
            for row in &rows {
                writer.write_record(row.iter().map(Cell::csv)).expect("in-memory csv");
            }
            String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
        }
        TableFormat::Json => {
            let records: Vec<Value> = rows
                .iter()
                .map(|row| {
                    let object: Map<String, Value> = header
                        .iter()
                        .zip(row)
                        .map(|(h, cell)| (h.to_string(), cell.json()))
                        .collect();
                    Value::Object(object)
                })
                .collect();
            let mut text = serde_json::to_string_pretty(&Value::Array(records)).expect("json table");
            text.push('\n');
            text
        }
    }
}
